"""Run the three parties of a protocol locally: threads over queues, or processes over TCP."""

from __future__ import annotations

import multiprocessing as mp
import os
import queue
import threading
from typing import Callable

import numpy as np

from .net import LocalNetwork, TcpHub
from .rss import PARTIES, PrfSetup, Session, make_seeds


class LocalCluster:
    def __init__(self, mode: str = "sh", seed: int | None = None, timeout: float = 30.0):
        self.mode = mode
        self.network = LocalNetwork(timeout=timeout)
        self.seeds = make_seeds(np.random.default_rng(seed))
        self.prfs = {i: PrfSetup.from_pairwise(i, self.seeds) for i in PARTIES}

    def sessions(self, session_id: bytes | None = None) -> dict[int, Session]:
        sid = session_id or os.urandom(16)
        return {i: Session(i, self.network.hub(i), self.prfs[i], sid, self.mode) for i in PARTIES}

    def run(self, fn: Callable[[Session], object], session_id: bytes | None = None,
            tamper: Callable | None = None) -> dict[int, object]:
        """Call ``fn(session)`` for every party concurrently.

        Returns ``{party: result}``; if any party raised, the first exception
        (in party order) is re-raised after all threads have finished.
        """
        sessions = self.sessions(session_id)
        if tamper is not None:
            for s in sessions.values():
                s.tamper = tamper
        results: dict[int, object] = {}
        errors: dict[int, BaseException] = {}

        def target(i):
            try:
                results[i] = fn(sessions[i])
            except BaseException as exc:  # noqa: BLE001 - re-raised below
                errors[i] = exc
                if getattr(exc, "reason", None) != "peer-abort":
                    sessions[i].abort(getattr(exc, "reason", "local-error"), str(exc))

        threads = [threading.Thread(target=target, args=(i,), daemon=True) for i in PARTIES]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self.last_sessions = sessions
        for s in sessions.values():
            s.close()
        if errors:
            primary = [e for e in errors.values() if getattr(e, "reason", None) != "peer-abort"]
            raise (primary or list(errors.values()))[0]
        return results


def _party_main(hub: TcpHub, prf: PrfSetup, mode: str, sid: bytes, fn, args, out) -> None:
    try:
        hub.start()
        hub.wait_ready()
        session = Session(hub.party, hub, prf, sid, mode)
        out.put((hub.party, True, fn(session, *args)))
    except BaseException as exc:  # noqa: BLE001 - reported to the parent
        out.put((hub.party, False, f"{type(exc).__name__}: {exc}"))
    finally:
        hub.close()


class ProcessCluster:
    """Each party in its own OS process, talking over loopback TCP.

    ``fn(session, *args)`` must return something picklable.  Listening
    sockets are bound before forking so the ports cannot be lost to a race.
    """

    def __init__(self, mode: str = "sh", seed: int | None = None, timeout: float = 600.0):
        self.mode = mode
        self.timeout = timeout
        self.seeds = make_seeds(None if seed is None else np.random.default_rng(seed))
        self.prfs = {i: PrfSetup.from_pairwise(i, self.seeds) for i in PARTIES}

    def run(self, fn: Callable, *args, session_id: bytes | None = None) -> dict[int, object]:
        sid = session_id or os.urandom(16)
        hubs = {i: TcpHub(i, ("127.0.0.1", 0), {}, timeout=self.timeout) for i in PARTIES}
        for h in hubs.values():
            h.bind()
        for i, h in hubs.items():
            h.peers = {j: ("127.0.0.1", hubs[j].port) for j in PARTIES if j != i}
        ctx = mp.get_context("fork")
        out = ctx.Queue()
        procs = [ctx.Process(target=_party_main, args=(hubs[i], self.prfs[i], self.mode, sid, fn, args, out),
                             daemon=True) for i in PARTIES]
        for p in procs:
            p.start()
        for h in hubs.values():
            h.close()
        results, errors = {}, {}
        try:
            for _ in PARTIES:
                try:
                    party, ok, value = out.get(timeout=self.timeout)
                except queue.Empty:
                    silent = sorted(set(PARTIES) - set(results) - set(errors))
                    errors.update({i: "no report before timeout" for i in silent})
                    break
                (results if ok else errors)[party] = value
        finally:
            for p in procs:
                p.join(timeout=10)
                if p.is_alive():
                    p.kill()
        if errors:
            raise RuntimeError("; ".join(f"party {i}: {e}" for i, e in sorted(errors.items())))
        return results
