import numpy as np
import pytest

from mpciot import aes, formats, keys
from mpciot.errors import FormatError


@pytest.fixture(scope="module")
def party_keys():
    sks = [keys.generate_keypair() for _ in range(3)]
    return sks, tuple(keys.public_key_bytes(sk) for sk in sks)


def test_public_key_encoding(party_keys):
    sks, pks = party_keys
    assert all(len(pk) == formats.PUBLIC_KEY_BYTES for pk in pks)
    back = keys.public_key_from_bytes(pks[0])
    assert back.public_numbers() == sks[0].public_key().public_numbers()
    with pytest.raises(FormatError):
        keys.public_key_from_bytes(pks[0][:-1])


def test_private_key_pem_roundtrip(party_keys):
    sk = party_keys[0][1]
    assert keys.public_key_bytes(keys.load_private_key(keys.private_key_pem(sk))) == keys.public_key_bytes(sk)


def test_split_schedule_xors_to_expansion(rng):
    for _ in range(100):
        key = rng.bytes(16)
        parts = [np.frombuffer(p, np.uint8) for p in keys.split_schedule(key, rng)]
        assert all(len(p) == formats.KEY_SCHEDULE_BYTES for p in parts)
        assert (parts[0] ^ parts[1] ^ parts[2]).tobytes() == bytes(aes.expand_key(key))


def test_split_schedule_fresh_without_rng():
    key = bytes(16)
    assert keys.split_schedule(key)[0] != keys.split_schedule(key)[0]


def test_envelopes_open_only_for_their_party(party_keys, rng):
    sks, pks = party_keys
    ctx = keys.ConsentContext("alice", pks, "ecg", data_ids=(5, 9))
    key = rng.bytes(16)
    envs = keys.make_keyshares(key, ctx, rng)
    assert [len(e) for e in envs] == [256] * 3
    shares = [keys.unwrap_key_share(envs[i - 1], ctx.ad(i), sks[i - 1]) for i in (1, 2, 3)]
    total = np.bitwise_xor.reduce([np.frombuffer(s, np.uint8) for s in shares])
    assert total.tobytes() == bytes(aes.expand_key(key))
    # party 2's envelope under party 1's key, or under party 2's key with party 1's context
    with pytest.raises(keys.ConsentError):
        keys.unwrap_key_share(envs[1], ctx.ad(2), sks[0])
    with pytest.raises(keys.ConsentError):
        keys.unwrap_key_share(envs[1], ctx.ad(1), sks[1])


def _variants(ctx: keys.ConsentContext, rng):
    other = tuple(reversed(ctx.pks))
    yield keys.ConsentContext(ctx.user_id + "x", ctx.pks, ctx.analysis_type, ctx.data_ids, ctx.window)
    yield keys.ConsentContext(ctx.user_id, other, ctx.analysis_type, ctx.data_ids, ctx.window)
    yield keys.ConsentContext(ctx.user_id, ctx.pks, "other", ctx.data_ids, ctx.window)
    yield keys.ConsentContext(ctx.user_id, ctx.pks, ctx.analysis_type, ctx.data_ids, ctx.window, alg="AES-256-GCM")
    if ctx.data_ids is not None:
        ids = list(ctx.data_ids)
        ids[rng.integers(len(ids))] += 1
        yield keys.ConsentContext(ctx.user_id, ctx.pks, ctx.analysis_type, tuple(ids))
        yield keys.ConsentContext(ctx.user_id, ctx.pks, ctx.analysis_type, ctx.data_ids + (7,))
        yield keys.ConsentContext(ctx.user_id, ctx.pks, ctx.analysis_type, window=(0, 1))
    else:
        yield keys.ConsentContext(ctx.user_id, ctx.pks, ctx.analysis_type, window=(ctx.window[0], ctx.window[1] + 1))
        yield keys.ConsentContext(ctx.user_id, ctx.pks, ctx.analysis_type, data_ids=(1,))


def test_context_binding_fuzz(party_keys, rng):
    sks, pks = party_keys
    for trial in range(30):
        if trial % 2:
            ctx = keys.ConsentContext(f"u{trial}", pks, "ecg", data_ids=tuple(int(v) for v in rng.integers(0, 2**40, 3)))
        else:
            ctx = keys.ConsentContext(f"u{trial}", pks, "ecg", window=(trial, trial + 1000))
        envs = keys.make_keyshares(rng.bytes(16), ctx, rng)
        p = int(rng.integers(1, 4))
        keys.unwrap_key_share(envs[p - 1], ctx.ad(p), sks[p - 1])
        for bad in _variants(ctx, rng):
            with pytest.raises(keys.ConsentError):
                keys.unwrap_key_share(envs[p - 1], bad.ad(p), sks[p - 1])


def test_truncated_envelope_rejected(party_keys, rng):
    sks, pks = party_keys
    ctx = keys.ConsentContext("a", pks, "ecg", data_ids=(1,))
    env = keys.make_keyshares(rng.bytes(16), ctx, rng)[0]
    with pytest.raises(keys.ConsentError):
        keys.unwrap_key_share(env[:-1], ctx.ad(1), sks[0])
