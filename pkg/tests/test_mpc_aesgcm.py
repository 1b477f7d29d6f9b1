import numpy as np
import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from mpciot import formats, keys, mpc_aesgcm, rss
from mpciot import algebra as A
from mpciot.local import LocalCluster
from mpciot.rss import GF8

from oracles import aes_ecb, ghash_bits, sbox_table

PKS = [bytes([i]) * 256 for i in (1, 2, 3)]


def _schedule_shares(key, rng):
    return keys.split_schedule(key, rng)


def _record(key, user, values, nonce):
    pt = formats.encode_sample(values)
    return nonce + AESGCM(key).encrypt(nonce, pt, formats.device_ad(user, nonce))


def test_sbox_shared_exhaustive(cluster, rng):
    x = np.arange(256, dtype=np.uint8)
    sx = rss.share(x, GF8, rng)
    res = cluster.run(lambda s: rss.open_value(mpc_aesgcm.sbox_shared(sx[s.party - 1], s), s))
    assert res[1].tolist() == sbox_table()


def test_aes_shared_matches_reference(cluster, rng):
    key = rng.bytes(16)
    shares = _schedule_shares(key, rng)
    blocks = rng.integers(0, 256, (5, 16), dtype=np.uint8)

    def run(s):
        sched = mpc_aesgcm.share_key_schedule(shares[s.party - 1], s)
        return rss.open_value(mpc_aesgcm.aes_shared(sched, blocks, s), s)

    assert cluster.run(run)[2].tobytes() == aes_ecb(key, blocks.tobytes())


def test_plain_ghash_matches_bit_serial(rng):
    h, ad, ct = rng.bytes(16), rng.bytes(21), rng.bytes(50)
    data = ad + bytes(11) + ct + bytes(14) + (8 * 21).to_bytes(8, "big") + (8 * 50).to_bytes(8, "big")
    assert mpc_aesgcm.ghash(h, ad, ct) == ghash_bits(h, data)


@pytest.mark.parametrize("lengths", [[1], [3, 7], [16, 1, 5], [0, 2]])
def test_ghash_shared_matches_bit_serial(lengths, cluster, rng):
    hs = [rng.bytes(16) for _ in lengths]
    datas = [rng.bytes(16 * m) for m in lengths]
    hk = A.gf128_from_bytes(np.frombuffer(b"".join(hs), np.uint8).reshape(-1, 16))
    sh = rss.share(hk, rss.GF128, rng)
    inputs = [A.gf128_from_bytes(np.frombuffer(d, np.uint8).reshape(-1, 16)) if d else np.zeros((0, 2), np.uint64)
              for d in datas]

    def run(s):
        y = mpc_aesgcm.ghash_shared(sh[s.party - 1], inputs, s)
        rss.flush_gf128(s)
        return rss.open_value(y, s)

    got = cluster.run(run)[1]
    for k in range(len(lengths)):
        assert A.gf128_to_bytes(got[k]).tobytes() == ghash_bits(hs[k], datas[k])


@pytest.mark.parametrize("m", [1, 2, 5, 8, 13])
def test_shared_powers(m, sh_cluster, rng):
    h = rng.integers(0, 2**63, (3, 2), dtype=np.uint64)
    sh = rss.share(h, rss.GF128, rng)
    got = sh_cluster.run(lambda s: rss.open_value(mpc_aesgcm.shared_powers(sh[s.party - 1], m, s), s))[1]
    assert got.shape == (m, 3, 2)
    for j in range(m):
        assert np.array_equal(got[j], A.gf128_pow(h, j + 1))


def test_dist_dec_matches_aesgcm(cluster, rng):
    key = rng.bytes(16)
    shares = _schedule_shares(key, rng)
    values = rng.uniform(-4, 4, (3, formats.SAMPLE_VALUES))
    records = [_record(key, "alice", v, rng.bytes(12)) for v in values]

    def run(s):
        sched = mpc_aesgcm.share_key_schedules([shares[s.party - 1]], s)
        vals, ok = mpc_aesgcm.dist_dec_batch(records, ["alice"] * 3, sched, [0, 0, 0], s)
        return rss.open_value(vals, s), ok

    got, ok = cluster.run(run)[3]
    assert ok.all()
    assert np.array_equal(got, A.fp_encode(values))


def test_dist_dec_multiple_keys(sh_cluster, rng):
    ks = [rng.bytes(16) for _ in range(2)]
    shares = [_schedule_shares(k, rng) for k in ks]
    vals = rng.uniform(0, 1, (2, formats.SAMPLE_VALUES))
    records = [_record(ks[1], "bob", vals[0], rng.bytes(12)), _record(ks[0], "amy", vals[1], rng.bytes(12))]

    def run(s):
        sched = mpc_aesgcm.share_key_schedules([sh[s.party - 1] for sh in shares], s)
        out, ok = mpc_aesgcm.dist_dec_batch(records, ["bob", "amy"], sched, [1, 0], s)
        return rss.open_value(out, s), ok

    got, ok = sh_cluster.run(run)[1]
    assert ok.all() and np.array_equal(got, A.fp_encode(vals))


@pytest.mark.parametrize("where", ["ct", "tag", "user"])
def test_dist_dec_rejects_tampering(where, cluster, rng):
    key = rng.bytes(16)
    shares = _schedule_shares(key, rng)
    rec = bytearray(_record(key, "alice", rng.uniform(0, 1, formats.SAMPLE_VALUES), rng.bytes(12)))
    user = "alice"
    if where == "ct":
        rec[40] ^= 0x10
    elif where == "tag":
        rec[-1] ^= 1
    else:
        user = "alicf"

    def run(s):
        sched = mpc_aesgcm.share_key_schedule(shares[s.party - 1], s)
        return mpc_aesgcm.dist_dec(bytes(rec), user, sched, s)

    with pytest.raises(mpc_aesgcm.AuthError):
        cluster.run(run)


def test_dist_enc_decrypts_with_aesgcm(cluster, rng):
    key = rng.bytes(16)
    shares = _schedule_shares(key, rng)
    logits = rng.integers(0, 2**64, (2, formats.CLASSES), dtype=np.uint64)
    ys = rss.share(logits, rss.Z64, rng)

    def run(s):
        sched = mpc_aesgcm.share_key_schedule(shares[s.party - 1], s)
        return mpc_aesgcm.dist_enc(ys[s.party - 1], sched, PKS, "a1", "alice", "ecg", s)

    res = cluster.run(run)
    assert res[1] == res[2] == res[3]
    assert len(res[1]) == formats.result_bytes(2)
    ad = formats.result_ad("alice", PKS, "a1", "ecg")
    pt = AESGCM(key).decrypt(formats.result_nonce(ad), res[1], ad)
    assert np.array_equal(np.frombuffer(pt, "<u8").reshape(2, 5), logits)


def test_gcm_general_roundtrip(sh_cluster, rng):
    key = rng.bytes(16)
    shares = _schedule_shares(key, rng)
    items = []
    for n in (0, 5, 33):
        nonce, ad, pt = rng.bytes(12), rng.bytes(7), rng.bytes(n)
        ct = AESGCM(key).encrypt(nonce, pt, ad)
        items.append((nonce, ad, ct[:-16], ct[-16:], pt))

    def run(s):
        sched = mpc_aesgcm.share_key_schedules([shares[s.party - 1]], s)
        out, ok = mpc_aesgcm.gcm_dec_batch([it[:4] for it in items], sched, [0] * 3, s)
        return rss.open_value(out, s), ok

    out, ok = sh_cluster.run(run)[1]
    assert ok.all()
    for k, it in enumerate(items):
        assert out[k, : len(it[4])].tobytes() == it[4]


def test_mal_lite_gcm_tag_products_are_verified(rng):
    key = rng.bytes(16)
    shares = _schedule_shares(key, rng)
    rec = _record(key, "u", rng.uniform(0, 1, formats.SAMPLE_VALUES), rng.bytes(12))

    def run(s):
        sched = mpc_aesgcm.share_key_schedule(shares[s.party - 1], s)
        mpc_aesgcm.dist_dec(rec, "u", sched, s)
        return s.stats["gf128_verified"]

    # 2 ad + 94 ciphertext + 1 length block: H^2..H^97 take 96 products, plus the tag check
    assert LocalCluster("mal-lite", seed=2).run(run)[1] == 97
