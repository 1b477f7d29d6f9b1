"""Boolean sharings, the ripple-carry adder and arithmetic/boolean conversions.

Boolean vectors are bit-sliced: plane ``k`` packs bit ``k`` of 64 values into
each uint64 word, so one GF(2) Beaver multiplication per plane evaluates an
AND gate for every value at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rss
from .rss import GF2, Z64, RssShare, Session


def nwords(count: int) -> int:
    return max(1, -(-count // 64))


def pack_bits(values, width: int) -> np.ndarray:
    """``(count,)`` integers -> ``(width, nwords)`` bit planes."""
    values = np.asarray(values, dtype=np.uint64).reshape(-1)
    n = nwords(len(values))
    shifts = np.arange(width, dtype=np.uint64)[:, None]
    bits = ((values[None, :] >> shifts) & np.uint64(1)).astype(np.uint8)
    padded = np.zeros((width, n * 64), dtype=np.uint8)
    padded[:, : len(values)] = bits
    return np.packbits(padded, axis=1, bitorder="little").view("<u8").astype(np.uint64)


def unpack_bits(planes: np.ndarray, count: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`."""
    planes = np.asarray(planes, dtype=np.uint64)
    width = planes.shape[0]
    raw = np.ascontiguousarray(planes.astype("<u8")).view(np.uint8).reshape(width, -1)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :count].astype(np.uint64)
    weights = np.uint64(1) << np.arange(width, dtype=np.uint64)[:, None]
    return (bits * weights).sum(axis=0, dtype=np.uint64) if width else np.zeros(count, np.uint64)


def _lane_mask(count: int) -> np.ndarray:
    """All-ones words covering exactly ``count`` lanes."""
    n = nwords(count)
    mask = np.zeros(n, dtype=np.uint64)
    full, rest = divmod(count, 64)
    mask[:full] = np.uint64(0xFFFFFFFFFFFFFFFF)
    if rest:
        mask[full] = np.uint64((1 << rest) - 1)
    return mask


@dataclass
class BitVecShare:
    """Boolean sharing of ``count`` integers of ``width`` bits each."""

    planes: RssShare
    count: int

    @property
    def width(self) -> int:
        return self.planes.shape[0]

    @property
    def party(self) -> int:
        return self.planes.party

    def __xor__(self, other: "BitVecShare") -> "BitVecShare":
        return BitVecShare(self.planes + other.planes, self.count)

    def plane(self, k) -> RssShare:
        return self.planes[k]

    def bits(self, lo: int, hi: int) -> "BitVecShare":
        return BitVecShare(self.planes[lo:hi], self.count)

    def invert(self) -> "BitVecShare":
        """Bitwise NOT, restricted to the live lanes."""
        mask = np.broadcast_to(_lane_mask(self.count), self.planes.own.shape)
        return BitVecShare(self.planes.add_public(mask), self.count)

    @staticmethod
    def from_planes(planes: list[RssShare], count: int) -> "BitVecShare":
        return BitVecShare(RssShare.concat([p.reshape(1, -1) for p in planes]), count)


def share_bits(values, width: int, rng=None) -> list[BitVecShare]:
    """Dealer-side boolean sharing (test and provisioning helper)."""
    values = np.asarray(values, dtype=np.uint64).reshape(-1)
    parts = rss.share(pack_bits(values, width), GF2, rng)
    return [BitVecShare(p, len(values)) for p in parts]


def reconstruct_bits(shares: list[BitVecShare]) -> np.ndarray:
    return unpack_bits(rss.reconstruct([s.planes for s in shares]), shares[0].count)


def component_bits(j: int, values, width: int, count: int, party: int) -> BitVecShare:
    """Boolean sharing whose component ``j`` carries ``values`` (known to its holders)."""
    n = nwords(count)
    planes = None if values is None else pack_bits(values, width)
    return BitVecShare(rss.component_share(j, planes, GF2, (width, n), party), count)


def zero_extend(x: BitVecShare, width: int) -> BitVecShare:
    if width <= x.width:
        return x.bits(0, width)
    zero = RssShare(GF2, GF2.zeros((width - x.width, x.planes.shape[1])),
                    GF2.zeros((width - x.width, x.planes.shape[1])), x.party)
    return BitVecShare(RssShare.concat([x.planes, zero]), x.count)


def rca(x: BitVecShare, y: BitVecShare, session: Session) -> BitVecShare:
    """Ripple-carry addition mod ``2^w`` with exactly ``w - 1`` AND gates.

    ``c_0 = x_0 y_0`` and ``c_i = ((x_i + c_{i-1})(y_i + c_{i-1})) + c_{i-1}``;
    the carry out of the top bit is never computed.
    """
    if x.width != y.width:
        raise ValueError(f"width mismatch: {x.width} vs {y.width}")
    if x.count != y.count:
        raise ValueError(f"lane count mismatch: {x.count} vs {y.count}")
    w = x.width
    if w == 0:
        return x
    triples = rss.triple_gen((w - 1, x.planes.shape[1]), GF2, session).parts() if w > 1 else []
    session.stats["and_gates"] += w - 1
    out = [x.plane(0) + y.plane(0)]
    carry = None
    for i in range(w):
        xi, yi = x.plane(i), y.plane(i)
        if i > 0:
            out.append(xi + yi + carry)
        if i == w - 1:
            break
        if carry is None:
            carry = rss.mul_beaver(xi, yi, triples[i], session)
        else:
            carry = rss.mul_beaver(xi + carry, yi + carry, triples[i], session) + carry
    return BitVecShare(RssShare.concat([p[None] for p in out]), x.count)


def csa(x: BitVecShare, y: BitVecShare, z: BitVecShare, session: Session) -> tuple[BitVecShare, BitVecShare]:
    """Carry-save layer: ``x + y + z == s + c (mod 2^w)`` in one round of ``w - 1`` ANDs.

    ``s = x ^ y ^ z`` and ``c`` is the majority shifted up one bit, with
    ``maj = ((x ^ z)(y ^ z)) ^ z``; the majority of the top bit is dropped.
    """
    w = x.width
    s = x ^ y ^ z
    zero = RssShare(GF2, GF2.zeros((1, x.planes.shape[1])), GF2.zeros((1, x.planes.shape[1])), x.party)
    if w == 1:
        return s, BitVecShare(zero, x.count)
    lo = slice(0, w - 1)
    zl = z.planes[lo]
    maj = rss.mul(x.planes[lo] + zl, y.planes[lo] + zl, session) + zl
    session.stats["and_gates"] += w - 1
    return s, BitVecShare(RssShare.concat([zero, maj]), x.count)


def a2b(x: RssShare, session: Session, width: int = 64) -> BitVecShare:
    """Arithmetic to boolean: reinterpret each component as bits, compress with a carry-save layer, add with one RCA."""
    count = x.own.size
    p = session.party
    comps = {p: x.own.reshape(-1), rss.succ(p): x.next.reshape(-1)}
    xs = [component_bits(j, comps.get(j), width, count, p) for j in rss.PARTIES]
    return rca(*csa(*xs, session), session)


def b2a(x: BitVecShare, session: Session) -> RssShare:
    """Boolean to arithmetic with masks ``r_1`` (pair 1-2) and ``r_2`` (pair 2-3).

    ``r_3 = x + r_1 + r_2`` is computed in the boolean domain and revealed to
    parties 1 and 3 only; the output components are ``(r_3, -r_1, -r_2)``.
    For ``width < 64`` the result is correct modulo ``2^width``.
    """
    w, count, p = x.width, x.count, session.party
    mask = np.uint64((1 << w) - 1) if w < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    r1 = rss.rand_component(2, Z64, (count,), session)
    r2 = rss.rand_component(3, Z64, (count,), session)
    r1 = None if r1 is None else r1 & mask
    r2 = None if r2 is None else r2 & mask
    r1b = component_bits(2, r1, w, count, p)
    r2b = component_bits(3, r2, w, count, p)
    r3b = rca(*csa(x, r1b, r2b, session), session)
    r3_planes = rss.open_value(r3b.planes, session, to={1, 3})
    r3 = None if r3_planes is None else unpack_bits(r3_planes, count)
    neg = Z64.neg
    if p == 1:
        return RssShare(Z64, r3, neg(r1), p)
    if p == 2:
        return RssShare(Z64, neg(r1), neg(r2), p)
    return RssShare(Z64, neg(r2), r3, p)


def b2a_bit(bit: BitVecShare, session: Session) -> RssShare:
    """Inject single shared bits into Z_{2^64} as 0/1: two sequential products."""
    if bit.width != 1:
        raise ValueError("b2a_bit takes width-1 vectors")
    count, p = bit.count, session.party
    comps = {p: unpack_bits(bit.planes.own, count), rss.succ(p): unpack_bits(bit.planes.next, count)}
    b = [rss.component_share(j, comps.get(j), Z64, (count,), p) for j in rss.PARTIES]
    triples = rss.triple_gen((2, count), Z64, session).parts()
    t = rss.mul_beaver(b[0], b[1], triples[0], session)
    u = b[0] + b[1] - t.scale(np.uint64(2))
    t = rss.mul_beaver(u, b[2], triples[1], session)
    return u + b[2] - t.scale(np.uint64(2))
