"""Provisioning and a local deployment: orchestrator plus three parties.

Everything talks over real sockets (HTTP between services, TCP between
parties); only the process boundary is optional.
"""

from __future__ import annotations

import os
import secrets
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import uvicorn

from . import keys, modelfile
from .client import ObeliskClient
from .infer import REFERENCE_DIMS
from .net import TcpHub
from .obeliskd.app import create_app as obelisk_app
from .obeliskd.service import ObeliskConfig, Orchestrator, PartyEndpoint, http_sender
from .party.app import create_app as party_app
from .party.config import PartyConfig
from .party.runtime import PartyRuntime
from .rss import PARTIES, PrfSetup, make_seeds


@dataclass
class Deployment:
    """Key material, tokens and model shares for one installation."""

    private_keys: list
    seeds: dict[tuple[int, int], bytes]
    model_files: list[bytes]
    user_tokens: dict[str, str]
    party_tokens: dict[int, str]
    dispatch_token: str
    plain_model: tuple | None = None

    @classmethod
    def generate(cls, users=("alice",), rng: np.random.Generator | None = None, model=None,
                 dims=REFERENCE_DIMS) -> "Deployment":
        if model is None:
            model = modelfile.random_plain(rng or np.random.default_rng(), dims, scale="he")
        return cls(
            private_keys=[keys.generate_keypair() for _ in PARTIES],
            seeds=make_seeds(rng),
            model_files=modelfile.share_model(*model, rng=rng),
            user_tokens={u: secrets.token_hex(16) for u in users},
            party_tokens={i: secrets.token_hex(16) for i in PARTIES},
            dispatch_token=secrets.token_hex(16),
            plain_model=model,
        )

    @property
    def public_keys(self) -> list[bytes]:
        return [keys.public_key_bytes(k) for k in self.private_keys]

    def party_seeds(self, i: int) -> tuple[bytes, bytes]:
        prf = PrfSetup.from_pairwise(i, self.seeds)
        return prf.seed_prev, prf.seed_next

    def write(self, out_dir, base_port: int = 8700, mode: str = "sh") -> Path:
        """Config files for running every service as its own process."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pks = self.public_keys
        for i in PARTIES:
            (out / f"p{i}.key.pem").write_bytes(keys.private_key_pem(self.private_keys[i - 1]))
            (out / f"p{i}.pub").write_text(pks[i - 1].hex())
        modelfile.write_share_files(self.model_files, out)
        orch_url = f"http://127.0.0.1:{base_port}"
        lines = [f'listen = "127.0.0.1:{base_port}"', f'dispatch_token = "{self.dispatch_token}"',
                 'data_dir = "obelisk-data"', "", "[users]"]
        lines += [f'{tok} = "{u}"' for u, tok in self.user_tokens.items()]
        lines += ["", "[parties]"]
        for i in PARTIES:
            lines.append(f'{i} = {{ token = "{self.party_tokens[i]}", public_key = "p{i}.pub", '
                         f'url = "http://127.0.0.1:{base_port + i}" }}')
        (out / "obeliskd.toml").write_text("\n".join(lines) + "\n")
        for i in PARTIES:
            prev, nxt = self.party_seeds(i)
            peers = "\n".join(f'{j} = "127.0.0.1:{base_port + 100 + j}"' for j in PARTIES if j != i)
            (out / f"party{i}.toml").write_text(
                f'index = {i}\nmode = "{mode}"\nhttp = "127.0.0.1:{base_port + i}"\n'
                f'mpc_listen = "127.0.0.1:{base_port + 100 + i}"\norchestrator = "{orch_url}"\n'
                f'orchestrator_token = "{self.party_tokens[i]}"\nintake_token = "{self.dispatch_token}"\n'
                f'private_key = "p{i}.key.pem"\npublic_keys = ["p1.pub", "p2.pub", "p3.pub"]\n'
                f'model = "model.p{i}.bin"\nseed_prev = "{prev.hex()}"\nseed_next = "{nxt.hex()}"\n\n'
                f"[peers]\n{peers}\n"
            )
        return out


def _listen_socket(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    return sock


class ServerThread:
    """A uvicorn server on a pre-bound socket, in a daemon thread."""

    def __init__(self, app, sock: socket.socket):
        self.sock = sock
        self.server = uvicorn.Server(uvicorn.Config(app, log_level="warning", access_log=False))
        self.thread = threading.Thread(target=self.server.run, kwargs={"sockets": [sock]}, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.sock.getsockname()
        return f"http://{host}:{port}"

    def start(self) -> None:
        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline or not self.thread.is_alive():
                raise RuntimeError("HTTP server failed to start")
            time.sleep(0.01)

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=5)


@dataclass
class LocalDeployment:
    """Orchestrator and three parties inside this process, on loopback sockets."""

    deployment: Deployment
    mode: str = "sh"
    data_dir: str | None = None
    flush_interval: float = 2.0
    net_timeout: float = 60.0
    orchestrator: Orchestrator | None = None
    runtimes: dict[int, PartyRuntime] = field(default_factory=dict)
    _servers: list[ServerThread] = field(default_factory=list)
    _hubs: list[TcpHub] = field(default_factory=list)

    def start(self) -> "LocalDeployment":
        dep = self.deployment
        orch_sock = _listen_socket()
        party_socks = {i: _listen_socket() for i in PARTIES}
        hubs = {i: TcpHub(i, ("127.0.0.1", 0), {}, timeout=self.net_timeout) for i in PARTIES}
        for h in hubs.values():
            h.bind()
        addrs = {i: ("127.0.0.1", hubs[i].port) for i in PARTIES}
        for i, h in hubs.items():
            h.peers = {j: a for j, a in addrs.items() if j != i}
            h.start()
        self._hubs = list(hubs.values())

        def url(sock):
            host, port = sock.getsockname()
            return f"http://{host}:{port}"

        cfg = ObeliskConfig(
            users={tok: u for u, tok in dep.user_tokens.items()},
            party_tokens={tok: i for i, tok in dep.party_tokens.items()},
            parties=[PartyEndpoint(i, dep.public_keys[i - 1], url(party_socks[i])) for i in PARTIES],
            dispatch_token=dep.dispatch_token, data_dir=self.data_dir, flush_interval=self.flush_interval,
        )
        self.orchestrator = Orchestrator(cfg, send_job=http_sender(cfg))
        orch_server = ServerThread(obelisk_app(self.orchestrator), orch_sock)
        for i in PARTIES:
            prev, nxt = dep.party_seeds(i)
            pcfg = PartyConfig(
                index=i, private_key=dep.private_keys[i - 1], public_keys=dep.public_keys, peers=addrs,
                orchestrator=url(orch_sock), orchestrator_token=dep.party_tokens[i],
                intake_token=dep.dispatch_token, seed_prev=prev, seed_next=nxt, mode=self.mode,
                net_timeout=self.net_timeout,
            )
            model = modelfile.load_shares(dep.model_files[i - 1], i)
            rt = PartyRuntime(pcfg, hubs[i], model, ObeliskClient(url(orch_sock), dep.party_tokens[i]))
            self.runtimes[i] = rt
            self._servers.append(ServerThread(party_app(rt), party_socks[i]))
        self._servers.append(orch_server)
        for h in hubs.values():
            h.wait_ready()
        for s in self._servers:
            s.start()
        for rt in self.runtimes.values():
            rt.start()
        self.orchestrator.start()
        return self

    @property
    def url(self) -> str:
        return self._servers[-1].url

    def client(self, user: str) -> ObeliskClient:
        return ObeliskClient(self.url, self.deployment.user_tokens[user])

    def stop(self) -> None:
        if self.orchestrator is not None:
            self.orchestrator.stop()
        for rt in self.runtimes.values():
            rt.stop()
        for s in self._servers:
            s.stop()
        for h in self._hubs:
            h.close()
        if self.orchestrator is not None:
            self.orchestrator.stores.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def free_ports(n: int) -> list[int]:
    socks = [_listen_socket() for _ in range(n)]
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def default_data_dir() -> str:
    return os.environ.get("OBELISK_DATA", "obelisk-data")
