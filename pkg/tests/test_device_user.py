import numpy as np
import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from mpciot import device, formats, user
from mpciot.errors import FormatError

PKS = [bytes([i]) * 256 for i in (1, 2, 3)]


def test_nonces_unique_and_counter_based():
    st = device.DeviceState(bytes(16), "u")
    seen = {st.next_nonce() for _ in range(100_000)}
    assert len(seen) == 100_000
    assert st.next_nonce() == (100_000).to_bytes(12, "big")


def test_counter_exhaustion():
    st = device.DeviceState(bytes(16), "u", counter=device.COUNTER_LIMIT - 1)
    st.next_nonce()
    with pytest.raises(device.CounterExhausted):
        st.next_nonce()


def test_stamps_strictly_increase():
    st = device.DeviceState(bytes(16), "u")
    assert [st.stamp(t) for t in (5, 5, 3, 10)] == [5, 6, 7, 10]


def test_encrypt_record(rng):
    st = device.DeviceState.new("alice")
    sample = rng.uniform(0, 1, 187)
    rec = st.encrypt(sample)
    assert len(rec) == formats.RECORD_BYTES
    nonce, body = rec[:12], rec[12:]
    pt = AESGCM(st.key).decrypt(nonce, body, formats.device_ad("alice", nonce))
    assert np.abs(formats.decode_values(pt) - sample).max() <= 2.0**-8


def test_state_persistence(tmp_path):
    st = device.DeviceState.new("bob")
    st.next_nonce()
    st.stamp(42)
    st.save(tmp_path / "d.json")
    assert device.DeviceState.load(tmp_path / "d.json") == st
    with pytest.raises(FormatError):
        device.DeviceState(bytes(8), "x")


def test_read_samples(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text(",".join(["0.5"] * 188) + "\n\n" + ",".join(["1"] * 187) + "\n")
    rows = list(device.read_samples(path))
    assert len(rows) == 2 and rows[0].shape == (187,) and rows[1][0] == 1.0
    path.write_text("1,2,3\n")
    with pytest.raises(FormatError, match="columns"):
        list(device.read_samples(path))


def _result(key, logits, aid="a1", uid="alice"):
    ad = formats.result_ad(uid, PKS, aid, "ecg")
    pt = np.asarray(logits, dtype=np.uint64).astype("<u8").tobytes()
    return AESGCM(key).encrypt(formats.result_nonce(ad), pt, ad)


def test_decrypt_result_and_labels(rng):
    key = rng.bytes(16)
    raw = np.array([[0, 512, 0, 0, 0], [2**64 - 256, 0, 0, 0, 256]], dtype=np.uint64)
    pred = user.decrypt_result(key, _result(key, raw), user_id="alice", pks=PKS, analysis_id="a1")
    assert pred.logits.tolist() == [[0, 2, 0, 0, 0], [-1, 0, 0, 0, 1]]
    assert pred.classes == [1, 4] and pred.labels == ["S", "Q"]


@pytest.mark.parametrize("change", ["flip", "aid", "uid", "length"])
def test_decrypt_result_detects_tampering(change, rng):
    key = rng.bytes(16)
    ct = bytearray(_result(key, np.zeros((1, 5))))
    kw = dict(user_id="alice", pks=PKS, analysis_id="a1")
    if change == "flip":
        ct[3] ^= 1
    elif change == "aid":
        kw["analysis_id"] = "a2"
    elif change == "uid":
        kw["user_id"] = "mallory"
    else:
        ct = ct[:-1]
    with pytest.raises(user.ResultTampered):
        user.decrypt_result(key, bytes(ct), **kw)


def test_requests_carry_three_envelopes(rng):
    from mpciot import keys
    sks = [keys.generate_keypair() for _ in range(3)]
    pks = [keys.public_key_bytes(k) for k in sks]
    req = user.adhoc_request(rng.bytes(16), "alice", pks, [3, 4], rng=rng)
    assert req.mode == "adhoc" and req.data_ids == [3, 4] and len(req.envelopes) == 3
    req = user.stream_request(rng.bytes(16), "alice", pks, 0, 1000, batch_size=4, rng=rng)
    assert req.mode == "stream" and req.batch_size == 4
