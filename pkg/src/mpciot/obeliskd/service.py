"""Orchestrator logic: ingest, analyses, key shares, dispatch and result agreement.

All durable state lives in the three stores; the in-memory parts (staging
buffer, background threads) can be rebuilt from them after a restart.
"""

from __future__ import annotations

import json
import logging
import struct
import threading
import time
import uuid
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .. import formats
from ..schemas import (
    AnalysisCreate,
    AnalysisOut,
    Job,
    JobItem,
    RecordOut,
    ResultOut,
    ResultSubmit,
    b64d,
    b64e,
)
from .store import Stores

log = logging.getLogger(__name__)

FINAL_STATES = ("done", "failed")


class ServiceError(Exception):
    status = 400

    def __init__(self, detail: str, status: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if status is not None:
            self.status = status


class NotFound(ServiceError):
    status = 404


class Forbidden(ServiceError):
    status = 403


class Gone(ServiceError):
    status = 410


class Conflict(ServiceError):
    status = 409


@dataclass
class PartyEndpoint:
    index: int
    public_key: bytes
    url: str | None = None


@dataclass
class ObeliskConfig:
    users: dict[str, str]  # token -> user id
    party_tokens: dict[str, int]  # token -> party index
    parties: list[PartyEndpoint]
    dispatch_token: str = ""
    data_dir: str | None = None
    adhoc_max_analyses: int = 8
    stream_batch_default: int = 16
    stream_batch_cap: int = 256
    flush_interval: float = 2.0
    keyshare_ttl: float = 3600.0
    commit_delay: float = 0.02
    tick: float = 0.02

    @property
    def public_keys(self) -> list[bytes]:
        return [p.public_key for p in sorted(self.parties, key=lambda p: p.index)]

    @classmethod
    def load(cls, path) -> tuple["ObeliskConfig", tuple[str, int]]:
        """Read a TOML config; returns the config and the listen address.

        Example::

            listen = "127.0.0.1:8700"
            dispatch_token = "..."
            data_dir = "obelisk-data"

            [users]
            <token> = "alice"

            [parties]
            1 = { token = "...", public_key = "p1.pub", url = "http://127.0.0.1:8701" }
        """
        path = Path(path)
        raw = tomllib.loads(path.read_text())

        def rel(p):
            p = Path(p)
            return p if p.is_absolute() else path.parent / p

        parties = [PartyEndpoint(int(k), bytes.fromhex(rel(v["public_key"]).read_text().strip()), v.get("url"))
                   for k, v in raw["parties"].items()]
        cfg = cls(
            users=dict(raw.get("users", {})),
            party_tokens={v["token"]: int(k) for k, v in raw["parties"].items()},
            parties=parties,
            dispatch_token=raw.get("dispatch_token", ""),
            data_dir=str(rel(raw["data_dir"])) if raw.get("data_dir") else None,
            flush_interval=float(raw.get("flush_interval", 2.0)),
            stream_batch_cap=int(raw.get("stream_batch_cap", 256)),
            keyshare_ttl=float(raw.get("keyshare_ttl", 3600.0)),
        )
        host, _, port = raw.get("listen", "127.0.0.1:8700").rpartition(":")
        return cfg, (host, int(port))


def http_sender(cfg: ObeliskConfig, timeout: float = 30.0) -> Callable[[Job], None]:
    """Deliver each job to P1, P2, P3 in that order over their intake endpoints."""
    from ..client import PartyClient

    clients = [PartyClient(p.url, cfg.dispatch_token, timeout=timeout)
               for p in sorted(cfg.parties, key=lambda p: p.index) if p.url]

    def send(job: Job) -> None:
        errors = []
        for c in clients:
            try:
                c.analyse(job)
            except Exception as exc:  # noqa: BLE001 - keep going, the others may still run
                errors.append(str(exc))
        if errors:
            raise RuntimeError("; ".join(errors))

    return send


def _rec_key(user: str, ts: int) -> str:
    return f"rec/{user}/{ts:020d}"


class Orchestrator:
    def __init__(self, cfg: ObeliskConfig, send_job: Callable[[Job], None] | None = None,
                 clock: Callable[[], float] = time.time):
        self.cfg = cfg
        self.stores = Stores(cfg.data_dir)
        self.send_job = send_job
        self.clock = clock
        self._staging: dict[tuple[str, int], tuple[float, bytes]] = {}
        self._staging_lock = threading.Lock()
        self._commit_lock = threading.RLock()
        self._dispatch_lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.audit: list[str] = []
        self.counters: Counter = Counter()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        for target, name in ((self._commit_loop, "committer"), (self._dispatch_loop, "dispatcher")):
            t = threading.Thread(target=target, daemon=True, name=f"obeliskd-{name}")
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()
        self.flush_staging()

    def close(self) -> None:
        self.stop()
        self.stores.close()

    # -- ingest ------------------------------------------------------------

    def ingest(self, user: str, timestamp: int, record: bytes) -> None:
        if len(record) != formats.RECORD_BYTES:
            raise ServiceError(f"record must be {formats.RECORD_BYTES} bytes, got {len(record)}")
        if timestamp < 0:
            raise ServiceError("timestamps are non-negative milliseconds")
        with self._staging_lock:
            if (user, timestamp) in self._staging or self.stores.data.get(_rec_key(user, timestamp)) is not None:
                raise Conflict(f"data point {timestamp} already exists")
            self._staging[(user, timestamp)] = (self.clock(), record)
        self.counters["ingested"] += 1

    def flush_staging(self) -> int:
        """Commit staged records and hand them to active streams."""
        with self._commit_lock:
            with self._staging_lock:
                batch, self._staging = self._staging, {}
            for (user, ts), (at, record) in sorted(batch.items(), key=lambda kv: kv[1][0]):
                self.stores.data.put(_rec_key(user, ts), struct.pack(">d", at) + record)
                self._route_to_streams(user, ts, at)
            return len(batch)

    def _commit_loop(self) -> None:
        while not self._stop.wait(self.cfg.commit_delay):
            try:
                self.flush_staging()
            except Exception:  # noqa: BLE001
                log.exception("commit failed")

    def _load_record(self, user: str, ts: int) -> tuple[float, bytes] | None:
        raw = self.stores.data.get(_rec_key(user, ts))
        if raw is None:
            return None
        return struct.unpack(">d", raw[:8])[0], raw[8:]

    # -- analyses ----------------------------------------------------------

    def _meta(self, analysis_id: str) -> dict:
        rec = self.stores.meta.get_json(f"an/{analysis_id}")
        if rec is None:
            raise NotFound(f"unknown analysis {analysis_id}")
        return rec

    def create_analysis(self, user: str, body: AnalysisCreate) -> str:
        envelopes = [b64d(e) for e in body.envelopes]
        if any(len(e) != formats.ENVELOPE_BYTES for e in envelopes):
            raise ServiceError(f"envelopes must be {formats.ENVELOPE_BYTES} bytes each")
        now = self.clock()
        analysis_id = uuid.uuid4().hex
        rec = {
            "analysis_id": analysis_id, "user_id": user, "mode": body.mode, "type": body.type,
            "state": "queued", "data_ids": None, "t_begin": None, "t_end": None, "parent": None,
            "children": [], "submitted_at": now, "stored_at": None, "dispatched_at": None,
            "first_ingest_at": None, "last_ingest_at": None, "reason": None, "flags": [],
            "submissions": {}, "result": None, "rows": None, "batch_size": None,
        }
        if body.mode == "adhoc":
            self.flush_staging()
            for ts in body.data_ids:
                if self._load_record(user, ts) is None:
                    raise Forbidden(f"data point {ts} does not exist or belongs to another user")
            rec["data_ids"] = list(body.data_ids)
            rec["rows"] = len(body.data_ids)
            expires = now + self.cfg.keyshare_ttl
        else:
            size = body.batch_size or self.cfg.stream_batch_default
            if not 1 <= size <= self.cfg.stream_batch_cap:
                raise ServiceError(f"batch size must be within 1..{self.cfg.stream_batch_cap}")
            rec.update(t_begin=body.t_begin, t_end=body.t_end, batch_size=size, state="running")
            expires = body.t_end / 1000.0
        for i, env in enumerate(envelopes, start=1):
            self.stores.keys.put_json(f"ks/{analysis_id}/{i}", {"envelope": b64e(env), "expires_at": expires})
        self.stores.meta.put_json(f"an/{analysis_id}", rec)
        if body.mode == "stream":
            self.stores.meta.put_json(f"stream/{analysis_id}", {"pending": []})
        self.counters["analyses"] += 1
        return analysis_id

    def analysis(self, user: str | None, analysis_id: str) -> AnalysisOut:
        rec = self._meta(analysis_id)
        if user is not None and rec["user_id"] != user:
            raise Forbidden("not your analysis")
        return AnalysisOut(**{k: rec[k] for k in AnalysisOut.model_fields if k in rec})

    def result(self, user: str, analysis_id: str) -> ResultOut:
        rec = self._meta(analysis_id)
        if rec["user_id"] != user:
            raise Forbidden("not your analysis")
        if rec["state"] != "done":
            raise NotFound(f"analysis is {rec['state']}" + (f" ({rec['reason']})" if rec["reason"] else ""))
        return ResultOut(analysis_id=analysis_id, user_id=user, type=rec["type"], rows=rec["rows"],
                         ciphertext=rec["result"], public_keys=[b64e(pk) for pk in self.cfg.public_keys])

    def close_stream(self, user: str, analysis_id: str) -> str:
        """Withdraw consent for new data: flush what is pending and finish once the batches are final."""
        rec = self._meta(analysis_id)
        if rec["user_id"] != user:
            raise Forbidden("not your analysis")
        if rec["mode"] != "stream" or rec["parent"] is not None:
            raise ServiceError("only stream analyses can be closed")
        if rec["state"] in FINAL_STATES:
            return rec["state"]

        def mark(cur):
            cur["closing"] = True
            return cur

        # rows already accepted still belong to the stream
        with self._commit_lock:
            self.flush_staging()
            self.stores.meta.update_json(f"an/{analysis_id}", mark)
        self._maybe_close_stream(analysis_id)
        return self._meta(analysis_id)["state"]

    # -- party-facing ------------------------------------------------------

    def data(self, party: int, user: str, ids: list[int]) -> list[RecordOut]:
        out = []
        for ts in ids:
            rec = self._load_record(user, ts)
            if rec is not None:
                out.append(RecordOut(timestamp=ts, record=b64e(rec[1])))
        self.counters["data_fetches"] += 1
        return out

    def keyshare(self, party: int, analysis_id: str, index: int) -> str:
        if party != index:
            raise Forbidden("parties may only fetch their own key share")
        rec = self.stores.meta.get_json(f"an/{analysis_id}")
        if rec is None:
            raise NotFound(f"unknown analysis {analysis_id}")
        ks = self.stores.keys.get_json(f"ks/{analysis_id}/{index}")
        if ks is None:
            raise Gone("key share deleted")
        if self.clock() > ks["expires_at"]:
            self.stores.keys.delete(f"ks/{analysis_id}/{index}")
            raise Gone("key share expired")
        return ks["envelope"]

    def submit_result(self, party: int, analysis_id: str, body: ResultSubmit) -> str:
        if body.party != party:
            raise Forbidden("party index does not match the caller")
        outcome = {}

        def apply(rec):
            if rec is None:
                raise NotFound(f"unknown analysis {analysis_id}")
            entry = {"ct": body.ciphertext, "error": body.error}
            if body.ciphertext is not None:
                if len(b64d(body.ciphertext)) != formats.result_bytes(rec["rows"]):
                    raise ServiceError("result ciphertext has the wrong size")
            if rec["state"] in FINAL_STATES:
                if body.ciphertext is not None and rec["result"] not in (None, body.ciphertext):
                    rec["flags"].append(f"party {party} submitted a divergent result")
                self.audit.append(f"late submission by party {party} for {analysis_id} ignored")
                outcome["status"] = "ignored"
                return rec
            if str(party) in rec["submissions"]:
                self.audit.append(f"repeat submission by party {party} for {analysis_id} ignored")
                outcome["status"] = "ignored"
                return rec
            rec["submissions"][str(party)] = entry
            self._decide(rec)
            outcome["status"] = rec["state"]
            return rec

        rec = self.stores.meta.update_json(f"an/{analysis_id}", apply)
        if rec["state"] in FINAL_STATES and rec["mode"] == "adhoc":
            self._drop_keys(analysis_id)
        if rec["parent"] is not None and rec["state"] in FINAL_STATES:
            self._maybe_close_stream(rec["parent"])
        return outcome["status"]

    def _decide(self, rec: dict) -> None:
        subs = rec["submissions"]
        cts = Counter(s["ct"] for s in subs.values() if s["ct"] is not None)
        errors = [s["error"] for s in subs.values() if s["error"] is not None]
        agreed = [ct for ct, n in cts.items() if n >= 2]
        if agreed:
            rec["state"] = "done"
            rec["result"] = agreed[0]
            rec["stored_at"] = self.clock()
            for p, s in subs.items():
                if s["ct"] != agreed[0]:
                    rec["flags"].append(f"party {p} disagreed with the majority")
        elif len(errors) >= 2:
            specific = [e for e in errors if e != "peer-refused"]
            rec["state"] = "failed"
            rec["reason"] = (specific or errors)[0]
            rec["stored_at"] = self.clock()
        elif len(subs) == 3:
            rec["state"] = "failed"
            rec["reason"] = "no-agreement"
            rec["stored_at"] = self.clock()

    def _drop_keys(self, analysis_id: str) -> None:
        for i in (1, 2, 3):
            self.stores.keys.delete(f"ks/{analysis_id}/{i}")

    # -- dispatch ----------------------------------------------------------

    def _item(self, rec: dict) -> JobItem:
        if rec["parent"] is None:
            return JobItem(analysis_id=rec["analysis_id"], user_id=rec["user_id"], type=rec["type"],
                           mode="adhoc", data_ids=rec["data_ids"], key_id=rec["analysis_id"])
        return JobItem(analysis_id=rec["analysis_id"], user_id=rec["user_id"], type=rec["type"], mode="stream",
                       data_ids=rec["data_ids"], key_id=rec["parent"], t_begin=rec["t_begin"], t_end=rec["t_end"])

    def _dispatch(self, recs: list[dict]) -> None:
        if not recs:
            return
        now = self.clock()
        job = Job(job_id=uuid.uuid4().hex, items=[self._item(r) for r in recs])
        for r in recs:
            def mark(cur):
                cur["state"] = "running"
                cur["dispatched_at"] = now
                return cur

            self.stores.meta.update_json(f"an/{r['analysis_id']}", mark)
        self.counters["jobs"] += 1
        if self.send_job is not None:
            try:
                self.send_job(job)
            except Exception as exc:  # noqa: BLE001 - parties report the failure themselves
                log.warning("dispatch of job %s incomplete: %s", job.job_id, exc)
                for r in recs:
                    def flag(cur, exc=exc):
                        cur["flags"].append(f"dispatch incomplete: {exc}")
                        return cur

                    self.stores.meta.update_json(f"an/{r['analysis_id']}", flag)

    def dispatch_pending(self) -> None:
        """One scheduler tick: queued ad hoc analyses, stream micro-batches, stream expiry."""
        with self._dispatch_lock:
            queued = [rec for _, rec in self._scan_meta() if rec["state"] == "queued" and rec["parent"] is None]
            queued.sort(key=lambda r: r["submitted_at"])
            for i in range(0, len(queued), self.cfg.adhoc_max_analyses):
                self._dispatch(queued[i : i + self.cfg.adhoc_max_analyses])
            self._dispatch(self._cut_stream_batches())

    def _scan_meta(self):
        return [(k, json.loads(v)) for k, v in self.stores.meta.scan("an/")]

    def _dispatch_loop(self) -> None:
        while not self._stop.wait(self.cfg.tick):
            try:
                self.dispatch_pending()
            except Exception:  # noqa: BLE001
                log.exception("dispatch tick failed")

    # -- streams -----------------------------------------------------------

    def _route_to_streams(self, user: str, ts: int, at: float) -> None:
        for key, state in self.stores.meta.scan("stream/"):
            stream_id = key.split("/", 1)[1]
            rec = self.stores.meta.get_json(f"an/{stream_id}")
            if rec is None or rec["user_id"] != user or rec["state"] != "running" or rec.get("closing"):
                continue
            if not rec["t_begin"] <= ts <= rec["t_end"]:
                continue

            def add(st):
                st["pending"].append([ts, at])
                return st

            self.stores.meta.update_json(key, add)

    def _cut_stream_batches(self) -> list[dict]:
        now = self.clock()
        children = []
        for key, raw in self.stores.meta.scan("stream/"):
            stream_id = key.split("/", 1)[1]
            parent = self.stores.meta.get_json(f"an/{stream_id}")
            if parent is None or parent["state"] != "running":
                continue
            pending = json.loads(raw)["pending"]
            size = parent["batch_size"]
            expired = now * 1000 > parent["t_end"] or parent.get("closing", False)
            batches = []
            while len(pending) >= size:
                batches.append(pending[:size])
                pending = pending[size:]
            if pending and (expired or now - pending[0][1] >= self.cfg.flush_interval):
                batches.append(pending)
                pending = []
            if batches:
                self.stores.meta.put_json(key, {"pending": pending})
            for b in batches:
                children.append(self._new_child(parent, b, now))
            if expired and not pending:
                self._maybe_close_stream(stream_id)
        return children

    def _new_child(self, parent: dict, batch: list, now: float) -> dict:
        child_id = f"{parent['analysis_id']}.{len(parent['children']) + 1}"
        rec = {
            "analysis_id": child_id, "user_id": parent["user_id"], "mode": "stream", "type": parent["type"],
            "state": "queued", "data_ids": [int(ts) for ts, _ in batch], "t_begin": parent["t_begin"],
            "t_end": parent["t_end"], "parent": parent["analysis_id"], "children": [], "submitted_at": now,
            "stored_at": None, "dispatched_at": None, "first_ingest_at": min(at for _, at in batch),
            "last_ingest_at": max(at for _, at in batch), "reason": None, "flags": [], "submissions": {},
            "result": None, "rows": len(batch), "batch_size": None,
        }
        self.stores.meta.put_json(f"an/{child_id}", rec)

        def link(p):
            p["children"].append(child_id)
            return p

        parent.update(self.stores.meta.update_json(f"an/{parent['analysis_id']}", link))
        return rec

    def _maybe_close_stream(self, stream_id: str) -> None:
        parent = self.stores.meta.get_json(f"an/{stream_id}")
        if parent is None or parent["state"] in FINAL_STATES:
            return
        if self.clock() * 1000 <= parent["t_end"] and not parent.get("closing"):
            return
        st = self.stores.meta.get_json(f"stream/{stream_id}")
        if st and st["pending"]:
            return
        for cid in parent["children"]:
            child = self.stores.meta.get_json(f"an/{cid}")
            if child and child["state"] not in FINAL_STATES:
                return

        def close(p):
            p["state"] = "done"
            p["stored_at"] = self.clock()
            return p

        self.stores.meta.update_json(f"an/{stream_id}", close)
        self.stores.meta.delete(f"stream/{stream_id}")
        self._drop_keys(stream_id)
