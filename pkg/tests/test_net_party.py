import time

import numpy as np
import pytest

from mpciot import net, rss
from mpciot.errors import NetworkError, ProtocolAbort
from mpciot.local import ProcessCluster
from mpciot.party.runtime import DuplicateJob, PartyRuntime, WindowClosed, check_stream_window, consent_context
from mpciot.schemas import Job, JobItem

SID = bytes(range(16))


def test_frame_roundtrip():
    frame = net.encode_frame(net.T_OPEN, SID, b"payload")
    assert frame[:4] == (1 + 16 + 7).to_bytes(4, "big")
    assert net.decode_frame(frame) == (net.T_OPEN, SID, b"payload")
    with pytest.raises(NetworkError):
        net.decode_frame(frame[:-1])
    with pytest.raises(ValueError):
        net.encode_frame(1, b"short", b"")


def test_local_hub_routing_and_errors():
    nw = net.LocalNetwork(timeout=0.2)
    h1, h2 = nw.hub(1), nw.hub(2)
    h1.send(SID, 2, net.T_OPEN, b"x")
    assert h2.recv(SID, 1, net.T_OPEN) == b"x"
    h1.send(SID, 2, net.T_RESHARE, b"y")
    with pytest.raises(ProtocolAbort, match="desync"):
        h2.recv(SID, 1, net.T_OPEN)
    with pytest.raises(NetworkError, match="timed out"):
        h2.recv(SID, 3, net.T_OPEN)
    with pytest.raises(ValueError):
        h1.send(SID, 1, net.T_OPEN, b"")


def _mul_open(session, x, y):
    p = session.party - 1
    return rss.open_value(rss.mul(x[p], y[p], session), session)


def test_process_cluster_over_tcp(rng):
    a, b = rng.integers(0, 2**64, 10, dtype=np.uint64), rng.integers(0, 2**64, 10, dtype=np.uint64)
    sa, sb = rss.share(a, rss.Z64, rng), rss.share(b, rss.Z64, rng)
    out = ProcessCluster("mal-lite", seed=1, timeout=60).run(_mul_open, sa, sb)
    assert all(np.array_equal(out[i], a * b) for i in (1, 2, 3))


def _fail(session):
    if session.party == 2:
        raise ValueError("boom")
    return 1


def test_process_cluster_reports_party_errors():
    with pytest.raises(RuntimeError, match="party 2: ValueError: boom"):
        ProcessCluster("sh", seed=1, timeout=20).run(_fail)


def test_peer_leaving_early_does_not_block_readiness():
    a, b = net.TcpHub(1, ("127.0.0.1", 0), {}), net.TcpHub(2, ("127.0.0.1", 0), {})
    a.bind(), b.bind()
    a.peers, b.peers = {2: ("127.0.0.1", b.port)}, {1: ("127.0.0.1", a.port)}
    a.start(), b.start()
    a.wait_ready(timeout=5)
    a.close()
    time.sleep(0.3)
    b.wait_ready(timeout=1)
    b.close()


def _item(**kw):
    base = dict(analysis_id="a", user_id="u", type="ecg", data_ids=[1], key_id="a")
    base.update(kw)
    return JobItem(**base)


def test_stream_window_check():
    item = _item(mode="stream", t_begin=10, t_end=20)
    check_stream_window(item, 15)
    with pytest.raises(WindowClosed):
        check_stream_window(item, 21)
    check_stream_window(_item(), 10**12)


def test_consent_context_from_job():
    pks = [bytes([i]) * 256 for i in (1, 2, 3)]
    assert consent_context(_item(data_ids=[4, 5]), pks).data_ids == (4, 5)
    ctx = consent_context(_item(mode="stream", t_begin=1, t_end=2, key_id="s"), pks)
    assert ctx.window == (1, 2) and ctx.data_ids is None


def test_duplicate_jobs_rejected():
    rt = PartyRuntime(cfg=None, hub=None, model=None, orchestrator=None)
    rt.enqueue(Job(job_id="j1", items=[_item()]))
    with pytest.raises(DuplicateJob):
        rt.enqueue(Job(job_id="j1", items=[_item(analysis_id="b")]))
    with pytest.raises(DuplicateJob):
        rt.enqueue(Job(job_id="j2", items=[_item()]))
