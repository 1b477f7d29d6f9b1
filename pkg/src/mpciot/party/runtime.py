"""Job processing for one party: fetch, unwrap, decrypt, infer, encrypt, submit."""

from __future__ import annotations

import hashlib
import logging
import queue
import threading
import time
from dataclasses import dataclass, field

import httpx
import numpy as np

from .. import formats, infer, mpc_aesgcm
from ..client import ApiError, ObeliskClient
from ..errors import FormatError, MpcError, NetworkError, ProtocolAbort
from ..infer import SharedModel
from ..keys import ConsentContext, ConsentError, unwrap_key_share
from ..net import T_PREFLIGHT, Hub
from ..rss import Session
from ..schemas import Job, JobItem
from .config import PartyConfig

log = logging.getLogger(__name__)


class DuplicateJob(ValueError):
    pass


class WindowClosed(Exception):
    reason = "stream-window-closed"


def derive_ad(item: JobItem, cfg: PartyConfig) -> bytes:
    """This party's consent context for ``item``, rebuilt from job metadata."""
    return consent_context(item, cfg.public_keys).ad(cfg.index)


def consent_context(item: JobItem, pks: list[bytes]) -> ConsentContext:
    if item.mode == "stream":
        return ConsentContext(item.user_id, tuple(pks), item.type, window=(item.t_begin, item.t_end))
    return ConsentContext(item.user_id, tuple(pks), item.type, data_ids=tuple(item.data_ids))


def check_stream_window(item: JobItem, now_ms: int) -> None:
    if item.mode != "stream":
        return
    if not item.t_begin <= now_ms <= item.t_end:
        raise WindowClosed(f"now {now_ms} outside [{item.t_begin}, {item.t_end}]")


def session_id(job_id: str) -> bytes:
    return hashlib.sha256(b"job|" + job_id.encode()).digest()[:16]


@dataclass
class Prepared:
    item: JobItem
    key_share: bytes | None = None
    records: list[bytes] = field(default_factory=list)
    reason: str | None = None


def preflight(session: Session, ok: list[bool]) -> list[bool]:
    """Agree on which items every party can process (AND of the three bitmaps)."""
    mine = bytes(int(b) for b in ok)
    for p in (session.pred, session.succ):
        session.send(p, T_PREFLIGHT, mine)
    agreed = np.frombuffer(mine, dtype=np.uint8).copy()
    for p in (session.pred, session.succ):
        theirs = session.recv(p, T_PREFLIGHT)
        if len(theirs) != len(mine):
            raise session.abort("protocol-desync", "preflight length")
        agreed &= np.frombuffer(theirs, dtype=np.uint8)
    return [bool(b) for b in agreed]


def run_mpc(prepared: list[Prepared], model: SharedModel, cfg: PartyConfig,
            session: Session) -> dict[str, bytes | str]:
    """Process agreed items; returns ciphertext or failure reason per analysis."""
    outcome: dict[str, bytes | str] = {}
    schedules = mpc_aesgcm.share_key_schedules([p.key_share for p in prepared], session)
    records, users, key_index = [], [], []
    for k, p in enumerate(prepared):
        records += p.records
        users += [p.item.user_id] * len(p.records)
        key_index += [k] * len(p.records)
    values, auth_ok = mpc_aesgcm.dist_dec_batch(records, users, schedules, key_index, session)
    logits = infer.infer(values, model, session)
    per_item, layout = [], infer.BatchLayout([len(p.records) for p in prepared])
    ok_items = []
    for k, ((a, b), p) in enumerate(zip(layout.ranges(), prepared)):
        if np.all(auth_ok[a:b]):
            ok_items.append(k)
            per_item.append(logits[a:b])
        else:
            outcome[p.item.analysis_id] = "auth-failed"
    ads = [formats.result_ad(prepared[k].item.user_id, cfg.public_keys, prepared[k].item.analysis_id,
                             prepared[k].item.type) for k in ok_items]
    cts = mpc_aesgcm.dist_enc_batch(per_item, ads, schedules, ok_items, session)
    session.check_transcript()
    for k, ct in zip(ok_items, cts):
        outcome[prepared[k].item.analysis_id] = ct
    return outcome


class PartyRuntime:
    """FIFO job queue processed strictly one job at a time."""

    def __init__(self, cfg: PartyConfig, hub: Hub, model: SharedModel, orchestrator: ObeliskClient,
                 clock=time.time):
        self.cfg = cfg
        self.hub = hub
        self.model = model
        self.orch = orchestrator
        self.clock = clock
        self.queue: queue.Queue[Job | None] = queue.Queue()
        self.seen: set[str] = set()
        self._lock = threading.Lock()
        self.history: list[dict] = []
        self.current: str | None = None
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, daemon=True, name=f"party{self.cfg.index}-worker")
        self._thread.start()

    def stop(self) -> None:
        self.queue.put(None)
        if self._thread is not None:
            self._thread.join(timeout=5)

    def enqueue(self, job: Job) -> int:
        ids = {job.job_id} | {f"analysis:{i.analysis_id}" for i in job.items}
        with self._lock:
            if ids & self.seen:
                raise DuplicateJob(f"job {job.job_id} or one of its analyses was already queued")
            self.seen |= ids
            self.queue.put(job)
            return self.queue.qsize()

    def _loop(self) -> None:
        while True:
            job = self.queue.get()
            if job is None:
                return
            self.current = job.job_id
            started = time.time()
            try:
                self.run_job(job)
            except Exception:  # noqa: BLE001 - the worker must survive any single job
                log.exception("party %d: job %s crashed", self.cfg.index, job.job_id)
            self.history.append({"job_id": job.job_id, "started": started, "finished": time.time()})
            self.current = None

    def _prepare(self, item: JobItem) -> Prepared:
        prep = Prepared(item)
        try:
            check_stream_window(item, int(self.clock() * 1000))
            envelope = self.orch.keyshare(item.key_id, self.cfg.index)
            prep.key_share = unwrap_key_share(envelope, derive_ad(item, self.cfg), self.cfg.private_key)
            data = self.orch.data(item.user_id, item.data_ids)
            missing = [t for t in item.data_ids if t not in data]
            if missing:
                raise FormatError(f"{len(missing)} data points missing")
            prep.records = [data[t] for t in item.data_ids]
            for r in prep.records:
                formats.split_record(r)
        except (ConsentError, WindowClosed) as exc:
            prep.reason = exc.reason
        except ApiError as exc:
            prep.reason = "keyshare-unavailable" if exc.status in (404, 410) else f"fetch-failed-{exc.status}"
        except httpx.HTTPError:
            prep.reason = "fetch-failed"
        except (FormatError, ValueError):
            prep.reason = "bad-data"
        return prep

    def run_job(self, job: Job) -> dict[str, bytes | str]:
        session = Session(self.cfg.index, self.hub, self.cfg.prf, session_id(job.job_id), self.cfg.mode)
        prepared = [self._prepare(item) for item in job.items]
        outcome: dict[str, bytes | str] = {}
        try:
            agreed = preflight(session, [p.reason is None for p in prepared])
            for p, ok in zip(prepared, agreed):
                if not ok:
                    outcome[p.item.analysis_id] = p.reason or "peer-refused"
            todo = [p for p, ok in zip(prepared, agreed) if ok]
            if todo:
                outcome.update(run_mpc(todo, self.model, self.cfg, session))
        except (ProtocolAbort, NetworkError, MpcError) as exc:
            reason = getattr(exc, "reason", None) or "network-error"
            log.warning("party %d: job %s aborted: %s", self.cfg.index, job.job_id, reason)
            for p in prepared:
                outcome.setdefault(p.item.analysis_id, reason)
                if isinstance(outcome[p.item.analysis_id], bytes):
                    outcome[p.item.analysis_id] = reason
        finally:
            session.close()
        self.last_stats = dict(session.stats), dict(session.timings)
        for analysis_id, res in outcome.items():
            try:
                if isinstance(res, bytes):
                    self.orch.submit_result(analysis_id, self.cfg.index, ciphertext=res)
                else:
                    self.orch.submit_result(analysis_id, self.cfg.index, error=res)
            except (ApiError, httpx.HTTPError) as exc:
                log.warning("party %d: could not submit %s: %s", self.cfg.index, analysis_id, exc)
        return outcome
