"""Command-line entry points: ``mozcli`` (devices, users, model provider, bench),
``obeliskd`` (orchestrator) and ``mpc-party`` (one computing party).

``mozcli`` reads the orchestrator URL and bearer token from ``MOZ_URL`` and
``MOZ_TOKEN`` unless given as options.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import modelfile
from .client import ApiError, ObeliskClient
from .device import DeviceState, random_sample, read_samples
from .keys import ConsentContext, make_keyshares
from .schemas import b64d, b64e
from .user import ResultTampered, adhoc_request, decrypt_result, stream_request


def _emit(rows: list[dict], fmt: str) -> None:
    if fmt == "json":
        click.echo(json.dumps(rows if len(rows) != 1 else rows[0], indent=2, default=str))
        return
    if not rows:
        return
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


def _client(ctx) -> ObeliskClient:
    url, token = ctx.obj["url"], ctx.obj["token"]
    if not url or not token:
        raise click.UsageError("set MOZ_URL and MOZ_TOKEN (or --url/--token)")
    return ObeliskClient(url, token)


def _public_keys(client: ObeliskClient) -> list[bytes]:
    return [b64d(p.public_key) for p in sorted(client.parties().parties, key=lambda p: p.index)]


@click.group()
@click.option("--url", envvar="MOZ_URL", help="orchestrator base URL")
@click.option("--token", envvar="MOZ_TOKEN", help="bearer token of the user")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json")
@click.pass_context
def mozcli(ctx, url, token, fmt):
    ctx.obj = {"url": url, "token": token, "fmt": fmt}


# -- device -----------------------------------------------------------------


@mozcli.group()
def device():
    """Simulated IoT device."""


@device.command("init")
@click.option("--user", required=True)
@click.option("--state", type=click.Path(path_type=Path), default="device.json")
def device_init(user, state):
    """Create a device state with a fresh AES-128 key."""
    if state.exists():
        raise click.ClickException(f"{state} exists; refusing to replace a key that may be in use")
    DeviceState.new(user).save(state)
    click.echo(f"device state written to {state}")


@device.command("send")
@click.option("--state", type=click.Path(exists=True, path_type=Path), default="device.json")
@click.option("--csv", "csv_path", type=click.Path(exists=True), help="CSV of 187-value samples")
@click.option("--count", type=int, default=1, help="random samples to send when no CSV is given")
@click.option("--interval", type=float, default=0.0, help="seconds between sends")
@click.option("--seed", type=int)
@click.pass_context
def device_send(ctx, state, csv_path, count, interval, seed):
    """Encrypt samples and post them to the orchestrator."""
    dev = DeviceState.load(state)
    client = _client(ctx)
    rng = np.random.default_rng(seed)
    samples = read_samples(csv_path) if csv_path else (random_sample(rng) for _ in range(count))
    rows = []
    try:
        for k, sample in enumerate(samples):
            if k and interval:
                time.sleep(interval)
            ts = dev.stamp(int(time.time() * 1000))
            client.ingest(ts, dev.encrypt(sample))
            rows.append({"timestamp": ts, "counter": dev.counter - 1})
    except ApiError as exc:
        raise click.ClickException(f"ingest rejected: {exc}") from None
    finally:
        dev.save(state)
    _emit(rows, ctx.obj["fmt"])


# -- user -------------------------------------------------------------------


@mozcli.command()
@click.option("--state", type=click.Path(exists=True, path_type=Path), default="device.json")
@click.option("--ids", help="comma-separated data ids (ad hoc consent)")
@click.option("--window", nargs=2, type=int, help="t_begin t_end in ms (stream consent)")
@click.option("--type", "analysis_type", default="ecg")
@click.option("--out", type=click.Path(path_type=Path), default="envelopes.json")
@click.pass_context
def keyshare(ctx, state, ids, window, analysis_type, out):
    """Produce the three key-share envelopes for a consent context."""
    if (ids is None) == (window is None):
        raise click.UsageError("give exactly one of --ids and --window")
    dev = DeviceState.load(state)
    pks = _public_keys(_client(ctx))
    data_ids = tuple(int(t) for t in ids.split(",")) if ids else None
    cctx = ConsentContext(dev.user_id, tuple(pks), analysis_type, data_ids=data_ids,
                          window=tuple(window) if window else None)
    envs = make_keyshares(dev.key, cctx)
    out.write_text(json.dumps({"envelopes": [b64e(e) for e in envs]}))
    click.echo(f"{len(envs)} envelopes of {len(envs[0])} bytes written to {out}")


@mozcli.command()
@click.option("--state", type=click.Path(exists=True, path_type=Path), default="device.json")
@click.option("--ids", required=True, help="comma-separated data ids")
@click.option("--type", "analysis_type", default="ecg")
@click.option("--wait/--no-wait", default=True)
@click.pass_context
def request(ctx, state, ids, analysis_type, wait):
    """Request an ad hoc analysis over stored data points."""
    dev = DeviceState.load(state)
    client = _client(ctx)
    pks = _public_keys(client)
    body = adhoc_request(dev.key, dev.user_id, pks, [int(t) for t in ids.split(",")], analysis_type)
    try:
        aid = client.create_analysis(body)
        row = {"analysis_id": aid}
        if wait:
            info = client.wait(aid)
            row.update(state=info.state, reason=info.reason, latency=(info.stored_at or 0) - info.submitted_at)
    except ApiError as exc:
        raise click.ClickException(str(exc)) from None
    _emit([row], ctx.obj["fmt"])


@mozcli.command()
@click.option("--state", type=click.Path(exists=True, path_type=Path), default="device.json")
@click.option("--begin", "t_begin", type=int, help="window start in ms (default: now)")
@click.option("--duration", type=float, default=3600.0, help="window length in seconds")
@click.option("--batch-size", type=int, default=16)
@click.option("--type", "analysis_type", default="ecg")
@click.pass_context
def stream(ctx, state, t_begin, duration, batch_size, analysis_type):
    """Register a streaming analysis over a time window."""
    dev = DeviceState.load(state)
    client = _client(ctx)
    t_begin = int(time.time() * 1000) if t_begin is None else t_begin
    t_end = t_begin + int(duration * 1000)
    body = stream_request(dev.key, dev.user_id, _public_keys(client), t_begin, t_end, batch_size, analysis_type)
    try:
        aid = client.create_analysis(body)
    except ApiError as exc:
        raise click.ClickException(str(exc)) from None
    _emit([{"analysis_id": aid, "t_begin": t_begin, "t_end": t_end}], ctx.obj["fmt"])


@mozcli.command("stream-close")
@click.argument("analysis_id")
@click.pass_context
def stream_close(ctx, analysis_id):
    """Stop feeding new data to a stream; pending rows go out as a last batch."""
    try:
        state = _client(ctx).close_stream(analysis_id)
    except ApiError as exc:
        raise click.ClickException(str(exc)) from None
    _emit([{"analysis_id": analysis_id, "state": state}], ctx.obj["fmt"])


@mozcli.command()
@click.argument("analysis_id")
@click.option("--state", type=click.Path(exists=True, path_type=Path), default="device.json")
@click.pass_context
def result(ctx, analysis_id, state):
    """Fetch and decrypt a result (for a stream, every finished micro-batch)."""
    dev = DeviceState.load(state)
    client = _client(ctx)
    info = client.analysis(analysis_id)
    targets = info.children if info.mode == "stream" and info.parent is None else [analysis_id]
    rows = []
    for aid in targets:
        try:
            res = client.result(aid)
        except ApiError as exc:
            rows.append({"analysis_id": aid, "error": exc.detail})
            continue
        try:
            pred = decrypt_result(dev.key, b64d(res.ciphertext), user_id=dev.user_id,
                                  pks=[b64d(p) for p in res.public_keys], analysis_id=aid,
                                  analysis_type=res.type)
        except ResultTampered as exc:
            rows.append({"analysis_id": aid, "error": f"possible tampering: {exc}"})
            continue
        data_ids = client.analysis(aid).data_ids or []
        for k, (logits, label) in enumerate(zip(pred.logits, pred.labels)):
            rows.append({"analysis_id": aid, "data_id": data_ids[k] if k < len(data_ids) else k,
                         "class": label, "logits": [round(float(v), 4) for v in logits]})
    _emit(rows, ctx.obj["fmt"])


# -- model provider ---------------------------------------------------------


@mozcli.command("model-gen")
@click.option("--out", type=click.Path(path_type=Path), default="model.npz")
@click.option("--seed", type=int)
@click.option("--scale", type=click.Choice(["fan-in", "sqrt", "he"]), default="he")
def model_gen(out, seed, scale):
    """Write a synthetic plaintext model with the reference architecture."""
    modelfile.save_plain(out, *modelfile.random_plain(np.random.default_rng(seed), scale=scale))
    click.echo(f"model written to {out}")


@mozcli.command("model-share")
@click.argument("model", type=click.Path(exists=True))
@click.option("--out", type=click.Path(path_type=Path), default=".")
@click.option("--dims", help="declared architecture, e.g. 187,50,50,50,50,5")
def model_share(model, out, dims):
    """Split a plaintext model into three party provisioning files."""
    weights, biases, acts = modelfile.load_plain(model)
    expected = tuple(int(d) for d in dims.split(",")) if dims else None
    try:
        files = modelfile.share_model(weights, biases, acts, expected_dims=expected)
    except Exception as exc:  # noqa: BLE001
        raise click.ClickException(str(exc)) from None
    for p in modelfile.write_share_files(files, out):
        click.echo(str(p))


# -- operations -------------------------------------------------------------


@mozcli.command()
@click.option("--out", type=click.Path(path_type=Path), default="deploy")
@click.option("--users", default="alice", help="comma-separated user ids")
@click.option("--model", type=click.Path(exists=True), help="plaintext model (default: synthetic)")
@click.option("--base-port", type=int, default=8700)
@click.option("--mode", type=click.Choice(["sh", "mal-lite"]), default="sh")
def deploy(out, users, model, base_port, mode):
    """Generate keys, seeds, tokens, model shares and configs for every service."""
    from .cluster import Deployment

    plain = modelfile.load_plain(model) if model else None
    dep = Deployment.generate(users=tuple(users.split(",")), model=plain)
    path = dep.write(out, base_port=base_port, mode=mode)
    (path / "tokens.json").write_text(json.dumps({"users": dep.user_tokens}, indent=2))
    click.echo(f"configs in {path}; user tokens in {path / 'tokens.json'}")


@mozcli.command()
@click.option("--mode", type=click.Choice(["adhoc", "stream", "compare"]), default="adhoc")
@click.option("--batch-sizes", default="1,16,64,256")
@click.option("--repetitions", type=int, default=10)
@click.option("--rates", default="2,4,8,16,32,64,128", help="stream ingest rates (samples/s)")
@click.option("--security", type=click.Choice(["sh", "mal-lite"]), default="sh")
@click.option("--local/--remote", default=True, help="spin up an in-process deployment")
@click.option("--user", default="alice", help="user id behind MOZ_TOKEN (remote runs)")
@click.pass_context
def bench(ctx, mode, batch_sizes, repetitions, rates, security, local, user):
    """Latency benchmarks (ad hoc per batch size, stream knee search, sh vs mal-lite)."""
    from . import bench as B
    from .cluster import Deployment, LocalDeployment

    sizes = [int(s) for s in batch_sizes.split(",") if s]
    rate_list = [float(r) for r in rates.split(",") if r]
    if not sizes or (mode == "stream" and not rate_list):
        _emit([], ctx.obj["fmt"])
        return

    def run(security_mode):
        if not local:
            client = _client(ctx)
            return _bench_one(B, client, user, _public_keys(client), mode, sizes, repetitions, rate_list)
        dep = Deployment.generate()
        with LocalDeployment(dep, mode=security_mode) as ld:
            name = next(iter(dep.user_tokens))
            return _bench_one(B, ld.client(name), name, dep.public_keys, mode, sizes, repetitions, rate_list)

    if mode == "compare":
        rows = []
        for sec in ("sh", "mal-lite"):
            for r in run(sec):
                rows.append({"security": sec, **r})
        _emit(rows, ctx.obj["fmt"])
    else:
        _emit(run(security), ctx.obj["fmt"])


def _bench_one(B, client, user, pks, mode, sizes, repetitions, rates) -> list[dict]:
    if mode == "stream":
        return [B.bench_stream(client, user, pks, size, rates).as_dict() for size in sizes]
    return [{"batch_size": p.batch_size, "mean": p.mean, "min": min(p.latencies), "max": max(p.latencies)}
            for p in B.bench_adhoc(client, user, pks, sizes, repetitions)]


# -- services ---------------------------------------------------------------


@click.command()
@click.option("--config", type=click.Path(exists=True), required=True)
@click.option("--log-level", default="info")
def obeliskd(config, log_level):
    """Run the orchestrator."""
    import uvicorn

    from .obeliskd.app import create_app
    from .obeliskd.service import ObeliskConfig, Orchestrator, http_sender

    logging.basicConfig(level=log_level.upper())
    cfg, (host, port) = ObeliskConfig.load(config)
    orch = Orchestrator(cfg, send_job=http_sender(cfg))
    orch.start()
    try:
        uvicorn.run(create_app(orch), host=host, port=port, log_level=log_level)
    finally:
        orch.close()


@click.command()
@click.option("--config", type=click.Path(exists=True), required=True)
@click.option("--log-level", default="info")
def mpc_party(config, log_level):
    """Run one computing party."""
    import uvicorn

    from .net import TcpHub
    from .party.app import create_app
    from .party.config import PartyConfig
    from .party.runtime import PartyRuntime

    logging.basicConfig(level=log_level.upper())
    cfg = PartyConfig.load(config)
    if cfg.model_path is None:
        raise click.UsageError("the party config needs a model share file")
    model = modelfile.load_shares(cfg.model_path.read_bytes(), cfg.index)
    hub = TcpHub(cfg.index, cfg.mpc_listen, cfg.peers, timeout=cfg.net_timeout, connect_timeout=3600)
    hub.start()
    runtime = PartyRuntime(cfg, hub, model, ObeliskClient(cfg.orchestrator, cfg.orchestrator_token))
    runtime.start()
    try:
        uvicorn.run(create_app(runtime), host=cfg.http[0], port=cfg.http[1], log_level=log_level)
    finally:
        runtime.stop()
        hub.close()


if __name__ == "__main__":
    mozcli()
