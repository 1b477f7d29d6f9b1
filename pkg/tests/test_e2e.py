import base64
import time

import numpy as np
import pytest

from mpciot import algebra as A
from mpciot import device, user
from mpciot.cluster import Deployment, LocalDeployment
from mpciot.infer import plain_forward
from mpciot.keys import ConsentContext, make_keyshares
from mpciot.schemas import AnalysisCreate, b64e

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def deployment():
    return Deployment.generate(users=("alice", "bob"), rng=np.random.default_rng(99))


@pytest.fixture(scope="module", params=["sh", "mal-lite"])
def system(request, deployment):
    with LocalDeployment(deployment, mode=request.param, flush_interval=0.5) as sysm:
        yield sysm


def _expected(dep, samples):
    w, b, acts = dep.plain_model
    raw = plain_forward(A.fp_encode(np.asarray(samples)), [A.fp_encode(x) for x in w], [A.fp_encode(x) for x in b], acts)
    return A.fp_decode(raw)


def _upload(client, dev, samples, start):
    ids = []
    for k, s in enumerate(samples):
        ts = dev.stamp(start + k)
        client.ingest(ts, dev.encrypt(s))
        ids.append(ts)
    return ids


def _decrypt(client, dev, aid, pks):
    res = client.result(aid)
    return user.decrypt_result(dev.key, base64.b64decode(res.ciphertext),
                               user_id=dev.user_id, pks=pks, analysis_id=aid)


def test_adhoc_analysis(system):
    dep = system.deployment
    rng = np.random.default_rng(1)
    dev = device.DeviceState.new("alice")
    samples = [device.random_sample(rng) for _ in range(3)]
    with system.client("alice") as c:
        ids = _upload(c, dev, samples, 10_000)
        aid = c.create_analysis(user.adhoc_request(dev.key, "alice", dep.public_keys, ids))
        info = c.wait(aid, timeout=120)
        assert info.state == "done", info.reason
        pred = _decrypt(c, dev, aid, dep.public_keys)
    assert pred.logits.shape == (3, 5)
    assert np.abs(pred.logits - _expected(dep, samples)).max() <= 8 / 256
    assert len(pred.labels) == 3


def test_corrupted_party_is_outvoted(system, monkeypatch):
    dep = system.deployment
    rt = system.runtimes[3]
    original = rt.orch.submit_result

    def corrupt(analysis_id, party, ciphertext=None, error=None):
        if ciphertext is not None:
            ciphertext = bytes([ciphertext[0] ^ 1]) + ciphertext[1:]
        return original(analysis_id, party, ciphertext=ciphertext, error=error)

    monkeypatch.setattr(rt.orch, "submit_result", corrupt)
    dev = device.DeviceState.new("alice")
    sample = device.random_sample(np.random.default_rng(2))
    with system.client("alice") as c:
        ids = _upload(c, dev, [sample], 20_000)
        aid = c.create_analysis(user.adhoc_request(dev.key, "alice", dep.public_keys, ids))
        info = c.wait(aid, timeout=120)
        # the third submission may land after the decision; wait for its flag
        deadline = time.monotonic() + 10
        while not info.flags and time.monotonic() < deadline:
            time.sleep(0.05)
            info = c.analysis(aid)
        pred = _decrypt(c, dev, aid, dep.public_keys)
    assert info.state == "done"
    assert any("party 3" in f for f in info.flags)
    assert np.abs(pred.logits - _expected(dep, [sample])).max() <= 8 / 256


def test_consent_mismatch_fails(system):
    dep = system.deployment
    dev = device.DeviceState.new("alice")
    rng = np.random.default_rng(3)
    with system.client("alice") as c:
        ids = _upload(c, dev, [device.random_sample(rng) for _ in range(2)], 30_000)
        # envelopes bound to the first id only, request names both
        ctx = ConsentContext("alice", tuple(dep.public_keys), "ecg", data_ids=(ids[0],))
        envs = make_keyshares(dev.key, ctx)
        aid = c.create_analysis(AnalysisCreate(mode="adhoc", data_ids=ids, envelopes=[b64e(e) for e in envs]))
        info = c.wait(aid, timeout=120)
    assert info.state == "failed" and info.reason == "consent-context-mismatch"


def test_tampered_record_fails_authentication(system):
    dep = system.deployment
    dev = device.DeviceState.new("alice")
    rec = bytearray(dev.encrypt(device.random_sample(np.random.default_rng(4))))
    rec[100] ^= 4
    with system.client("alice") as c:
        c.ingest(40_000, bytes(rec))
        aid = c.create_analysis(user.adhoc_request(dev.key, "alice", dep.public_keys, [40_000]))
        info = c.wait(aid, timeout=120)
    assert info.state == "failed" and info.reason == "auth-failed"


def test_other_users_data_is_refused(system):
    dep = system.deployment
    dev = device.DeviceState.new("alice")
    with system.client("alice") as a, system.client("bob") as b:
        a.ingest(50_000, dev.encrypt(device.random_sample(np.random.default_rng(5))))
        with pytest.raises(Exception) as exc:
            b.create_analysis(user.adhoc_request(dev.key, "bob", dep.public_keys, [50_000]))
    assert getattr(exc.value, "status", None) == 403


def test_stream_micro_batches(system):
    dep = system.deployment
    dev = device.DeviceState.new("bob")
    rng = np.random.default_rng(6)
    now = int(time.time() * 1000)
    samples = [device.random_sample(rng) for _ in range(3)]
    with system.client("bob") as c:
        sid = c.create_analysis(user.stream_request(dev.key, "bob", dep.public_keys, now, now + 60_000, batch_size=2))
        ids = _upload(c, dev, samples, now + 1)
        deadline = time.monotonic() + 120
        while True:
            info = c.analysis(sid)
            kids = [c.analysis(k) for k in info.children]
            if sum(k.state == "done" for k in kids) == 2 or time.monotonic() > deadline:
                break
            time.sleep(0.1)
        assert [k.data_ids for k in kids] == [ids[:2], ids[2:]]
        got = np.concatenate([_decrypt(c, dev, k.analysis_id, dep.public_keys).logits for k in kids])
    assert np.abs(got - _expected(dep, samples)).max() <= 8 / 256
