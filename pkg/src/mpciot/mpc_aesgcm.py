"""AES-128-GCM evaluated on XOR-shared key schedules.

Only the S-box is non-linear; ShiftRows, MixColumns, AddRoundKey, squaring
and the affine output map of the S-box act on each share component alone.
GHASH runs on GF(2^128) sharings of ``H = E_k(0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aes, formats, rss
from . import algebra as A
from .convert import BitVecShare, a2b, b2a, pack_bits, unpack_bits
from .errors import FormatError, MpcError
from .rss import GF8, GF128, RssShare, Session


class AuthError(MpcError):
    """A ciphertext failed GCM authentication inside the protocol."""

    reason = "auth-failed"


def _sq(a: np.ndarray, times: int = 1) -> np.ndarray:
    for _ in range(times):
        a = A.GF8_SQ[a]
    return a


def share_key_schedules(own_shares: list[bytes], session: Session) -> RssShare:
    """Each party inputs its 176-byte XOR shares; the sums are the shared schedules ``(K, 11, 16)``."""
    if any(len(s) != formats.KEY_SCHEDULE_BYTES for s in own_shares):
        raise FormatError("key-schedule shares must be 176 bytes")
    shape = (len(own_shares), 11, 16)
    mine = np.frombuffer(b"".join(own_shares), dtype=np.uint8).reshape(shape)
    total = None
    for owner in rss.PARTIES:
        part = rss.input_share(owner, mine if owner == session.party else None, GF8, shape, session)
        total = part if total is None else total + part
    return total


def share_key_schedule(own_share: bytes, session: Session) -> RssShare:
    return share_key_schedules([own_share], session)[0]


def sbox_shared(x: RssShare, session: Session, triples: list[rss.BeaverTriple] | None = None) -> RssShare:
    """S-box as ``x^254`` followed by the affine map; 4 products in 3 rounds."""
    t = triples or rss.triple_gen((4,) + x.shape, GF8, session).parts()
    x2 = x.map(_sq)
    x3 = rss.mul_beaver(x2, x, t[0], session)
    x12 = x3.map(lambda a: _sq(a, 2))
    x15, x14 = rss.mul_many([(x12, x3), (x12, x2)], t[1:3], session)
    x240 = x15.map(lambda a: _sq(a, 4))
    inv = rss.mul_beaver(x240, x14, t[3], session)
    return inv.map(lambda a: aes.AFFINE_LINEAR[a]).add_public(np.uint8(aes.AFFINE_CONST))


def aes_shared(round_keys: RssShare, blocks: np.ndarray, session: Session) -> RssShare:
    """Encrypt public ``(n, 16)`` blocks; ``round_keys`` is ``(11, 16)`` or per block ``(n, 11, 16)``."""
    blocks = np.asarray(blocks, dtype=np.uint8)
    n = blocks.shape[0]
    if round_keys.own.ndim == 2:
        round_keys = round_keys.map(lambda a: np.broadcast_to(a, (n, 11, 16)))
    if n == 0:
        return RssShare(GF8, GF8.zeros((0, 16)), GF8.zeros((0, 16)), session.party)
    state = round_keys[:, 0].add_public(blocks)
    triples = rss.triple_gen((aes.ROUNDS, 4, n, 16), GF8, session).parts()
    for r in range(1, aes.ROUNDS + 1):
        state = sbox_shared(state, session, triples[r - 1].parts()).map(aes.shift_rows)
        if r != aes.ROUNDS:
            state = state.map(aes.mix_columns)
        state = state + round_keys[:, r]
    return state


def keystream_shared(round_keys: RssShare, nonce: bytes, counter_start: int, nblocks: int,
                     session: Session) -> RssShare:
    """Shared ``E_k(nonce || be32(counter_start + j))`` for ``j < nblocks``.

    The payload keystream of GCM starts at counter 2 (``J0 + 1``).
    """
    return aes_shared(round_keys, aes.counter_blocks(nonce, counter_start, nblocks), session)


def ghash_blocks(ad: bytes, ct: bytes) -> np.ndarray:
    """Public GHASH input: padded ad, padded ct and the length block, as GF(2^128)."""
    def pad(b: bytes) -> bytes:
        return b + bytes(-len(b) % 16)

    lengths = (8 * len(ad)).to_bytes(8, "big") + (8 * len(ct)).to_bytes(8, "big")
    data = pad(ad) + pad(ct) + lengths
    return A.gf128_from_bytes(np.frombuffer(data, dtype=np.uint8).reshape(-1, 16))


def ghash_shared(hkey: RssShare, inputs: list[np.ndarray], session: Session) -> RssShare:
    """GHASH of public block sequences under a shared key, for several instances at once.

    ``hkey`` has shape ``(n,)`` and ``inputs[k]`` is the ``(m_k, 2)`` block
    sequence of instance ``k``.  The Horner form ``Y_i = (Y_{i-1} + X_i) H``
    unrolls to ``sum_i X_i H^(m-i+1)``; the shared powers ``H^1..H^m`` take
    ``ceil(log2 m)`` product rounds and the sum with public ``X_i`` is local.
    Shorter sequences are front-padded with zero blocks, which contribute
    nothing.  In mal-lite mode each shared product is queued for batch
    verification.
    """
    n = len(inputs)
    m = max((len(x) for x in inputs), default=0)
    blocks = np.zeros((n, m, 2), dtype=np.uint64)
    for k, x in enumerate(inputs):
        if len(x):
            blocks[k, m - len(x):] = x
    if m == 0:
        return RssShare(GF128, GF128.zeros((n,)), GF128.zeros((n,)), session.party)
    powers = shared_powers(hkey, m, session)  # (m, n): row j holds H^(j+1)
    # block i (0-based) is multiplied by H^(m-i)
    coeff = np.ascontiguousarray(np.swapaxes(blocks[:, ::-1], 0, 1))
    terms = powers.map(lambda p: A.gf128_mul(p, coeff))
    return terms.map(lambda t: np.bitwise_xor.reduce(t, axis=0))


def shared_powers(h: RssShare, m: int, session: Session) -> RssShare:
    """``H^1 .. H^m`` stacked on a new leading axis, by repeated doubling."""
    if m <= 1:
        return h.reshape(1, *h.shape)
    rounds = []
    k = 1
    while k < m:
        rounds.append(min(k, m - k))
        k += rounds[-1]
    triples = rss.triple_gen((m - 1,) + h.shape, GF128, session).consume()
    powers = h.reshape(1, *h.shape)
    used = 0
    for width in rounds:
        k = powers.shape[0]
        top = powers[k - 1 : k].map(lambda a: np.broadcast_to(a, (width,) + a.shape[1:]))
        low = powers[:width]
        new = rss.mul_beaver(top, low, triples.take(slice(used, used + width)), session)
        used += width
        if session.malicious:
            session.pending_gf128.append((top, low, new))
        powers = RssShare.concat([powers, new])
    return powers


def ghash(h: bytes, ad: bytes, ct: bytes) -> bytes:
    """Plain GHASH (used for reference checks and by the user tooling)."""
    hk = A.gf128_from_bytes(h)
    y = np.zeros(2, dtype=np.uint64)
    for x in ghash_blocks(ad, ct):
        y = A.gf128_mul(y ^ x, hk)
    return A.gf128_to_bytes(y).tobytes()


def _tag_equal(s: RssShare, tags: np.ndarray, session: Session) -> np.ndarray:
    """Compare shared tags with public ones, opening only ``rho * (S - T)``."""
    n = s.shape[0]
    rho = rss.rand_share(GF128, (n,), session)
    diff = s.add_public(tags)
    t = rss.triple_gen((n,), GF128, session)
    z = rss.mul_beaver(rho, diff, t, session)
    if session.malicious:
        session.pending_gf128.append((rho, diff, z))
    rss.flush_gf128(session)
    opened = rss.open_value(z, session)
    return np.all(opened == 0, axis=-1)


@dataclass
class _Layout:
    """Where each record's AES blocks sit inside one batched cipher call."""

    h_index: np.ndarray
    j0_index: np.ndarray
    ks_slices: list[slice]


def _plan(nonces: list[bytes], lengths: list[int], key_index: np.ndarray):
    inputs, owners = [], []
    h_index, j0_index, ks_slices = [], [], []
    pos = 0
    for k, (nonce, length) in enumerate(zip(nonces, lengths)):
        nb = -(-length // 16)
        inputs.append(np.zeros((1, 16), dtype=np.uint8))
        inputs.append(aes.counter_blocks(nonce, 1, 1 + nb))
        h_index.append(pos)
        j0_index.append(pos + 1)
        ks_slices.append(slice(pos + 2, pos + 2 + nb))
        owners += [key_index[k]] * (2 + nb)
        pos += 2 + nb
    blocks = np.concatenate(inputs) if inputs else np.zeros((0, 16), np.uint8)
    return blocks, np.asarray(owners, dtype=np.int64), _Layout(np.array(h_index), np.array(j0_index), ks_slices)


def _per_block_keys(schedules: RssShare, owners: np.ndarray) -> RssShare:
    if schedules.own.ndim == 2:
        schedules = schedules.map(lambda a: a[None])
    return schedules[owners]


def dist_dec_batch(records: list[bytes], user_ids: list[str], schedules: RssShare,
                   key_index, session: Session) -> tuple[RssShare, np.ndarray]:
    """Decrypt sample records into Z_{2^64} sharings of their fixed-point values.

    ``schedules`` is ``(K, 11, 16)``; record ``k`` uses key ``key_index[k]``.
    Returns ``(values (n, 187), ok)`` where ``ok[k]`` is False when record
    ``k`` failed authentication (its row is then meaningless).
    """
    n = len(records)
    parts = [formats.split_record(r) for r in records]
    nonces = [p[0] for p in parts]
    cts = [p[1] for p in parts]
    tags = np.stack([A.gf128_from_bytes(p[2]) for p in parts]) if n else np.zeros((0, 2), np.uint64)
    key_index = np.asarray(key_index, dtype=np.int64).reshape(n)
    with session.phase("online"):
        blocks, owners, lay = _plan(nonces, [len(c) for c in cts], key_index)
        enc = aes_shared(_per_block_keys(schedules, owners), blocks, session)
        hkey = enc[lay.h_index].map(A.gf128_from_bytes)
        ej0 = enc[lay.j0_index].map(A.gf128_from_bytes)
        ads = [formats.device_ad(u, nonce) for u, nonce in zip(user_ids, nonces)]
        s = ghash_shared(hkey.retag(GF128), [ghash_blocks(a, c) for a, c in zip(ads, cts)], session)
        ok = _tag_equal(s + ej0.retag(GF128), tags, session)

        idx = np.concatenate([np.arange(sl.start, sl.stop) for sl in lay.ks_slices])
        stream = enc[idx].reshape(n, -1)[:, : formats.SAMPLE_BYTES]
        ct = np.frombuffer(b"".join(cts), dtype=np.uint8).reshape(n, formats.SAMPLE_BYTES)
        pt = stream.add_public(ct)
        words = pt.map(lambda a: np.ascontiguousarray(a).view("<u8").astype(np.uint64).reshape(-1))
        planes = words.map(lambda w: pack_bits(w, 64)).retag(rss.GF2)
        values = b2a(BitVecShare(planes, n * formats.SAMPLE_VALUES), session)
    return values.reshape(n, formats.SAMPLE_VALUES), ok


def dist_dec(record: bytes, user_id: str, schedule: RssShare, session: Session) -> RssShare:
    values, ok = dist_dec_batch([record], [user_id], schedule, [0], session)
    if not ok[0]:
        raise AuthError("auth-failed")
    return values[0]


def gcm_dec_batch(items: list[tuple[bytes, bytes, bytes, bytes]], schedules: RssShare, key_index,
                  session: Session) -> tuple[RssShare, np.ndarray]:
    """General shared GCM decryption of ``(nonce, ad, ct, tag)`` items into GF(2^8) byte shares.

    Items may have different lengths; the result is ``(n, max_len)`` with
    zero-filled tails, plus the per-item authentication bits.
    """
    n = len(items)
    key_index = np.asarray(key_index, dtype=np.int64).reshape(n)
    with session.phase("online"):
        blocks, owners, lay = _plan([it[0] for it in items], [len(it[2]) for it in items], key_index)
        enc = aes_shared(_per_block_keys(schedules, owners), blocks, session)
        hkey = enc[lay.h_index].map(A.gf128_from_bytes).retag(GF128)
        ej0 = enc[lay.j0_index].map(A.gf128_from_bytes).retag(GF128)
        s = ghash_shared(hkey, [ghash_blocks(it[1], it[2]) for it in items], session)
        tags = np.stack([A.gf128_from_bytes(it[3]) for it in items])
        ok = _tag_equal(s + ej0, tags, session)
        width = max((len(it[2]) for it in items), default=0)
        own = np.zeros((n, width), np.uint8)
        nxt = np.zeros((n, width), np.uint8)
        for k, (it, sl) in enumerate(zip(items, lay.ks_slices)):
            length = len(it[2])
            ctb = np.frombuffer(it[2], dtype=np.uint8)
            ks = enc[sl].reshape(-1)[:length].add_public(ctb)
            own[k, :length], nxt[k, :length] = ks.own, ks.next
    return RssShare(GF8, own, nxt, session.party), ok


def gcm_enc_batch(items: list[tuple[bytes, bytes, RssShare]], schedules: RssShare, key_index,
                  session: Session) -> list[bytes]:
    """Shared GCM encryption of GF(2^8)-shared plaintexts; returns public ``ct | tag``."""
    n = len(items)
    key_index = np.asarray(key_index, dtype=np.int64).reshape(n)
    with session.phase("online"):
        blocks, owners, lay = _plan([it[0] for it in items], [len(it[2]) for it in items], key_index)
        enc = aes_shared(_per_block_keys(schedules, owners), blocks, session)
        masked = [enc[sl].reshape(-1)[: len(it[2])] + it[2] for it, sl in zip(items, lay.ks_slices)]
        opened = rss.open_values(masked, session) if masked else []
        cts = [o.tobytes() for o in opened]
        hkey = enc[lay.h_index].map(A.gf128_from_bytes).retag(GF128)
        ej0 = enc[lay.j0_index].map(A.gf128_from_bytes).retag(GF128)
        s = ghash_shared(hkey, [ghash_blocks(it[1], c) for it, c in zip(items, cts)], session) + ej0
        rss.flush_gf128(session)
        tags = rss.open_value(s, session) if n else np.zeros((0, 2), np.uint64)
    return [c + A.gf128_to_bytes(t).tobytes() for c, t in zip(cts, tags)]


def _z64_to_bytes(y: RssShare, session: Session) -> RssShare:
    """Arithmetic sharing of words -> XOR sharing of their little-endian bytes."""
    count = y.own.size
    bits = a2b(y, session)
    return bits.planes.map(lambda p: unpack_bits(p, count).astype("<u8").view(np.uint8)).retag(GF8)


def dist_enc_batch(results: list[RssShare], ads: list[bytes], schedules: RssShare, key_index,
                   session: Session) -> list[bytes]:
    """Encrypt per-analysis logit matrices; the nonce is the hash of each ad.

    Returns ``ct | tag`` per analysis with ``40 * rows + 16`` bytes.
    """
    rows = [r.own.size for r in results]
    if not results:
        return []
    with session.phase("online"):
        flat = RssShare.concat([r.reshape(-1) for r in results])
        as_bytes = _z64_to_bytes(flat, session)
    items, off = [], 0
    for ad, k in zip(ads, rows):
        items.append((formats.result_nonce(ad), ad, as_bytes[off * 8 : (off + k) * 8]))
        off += k
    return gcm_enc_batch(items, schedules, key_index, session)


def dist_enc(y: RssShare, schedule: RssShare, pks: list[bytes], analysis_id: str, user_id: str,
             analysis_type: str, session: Session) -> bytes:
    ad = formats.result_ad(user_id, pks, analysis_id, analysis_type)
    return dist_enc_batch([y], [ad], schedule, [0], session)[0]
