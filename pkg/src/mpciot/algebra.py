"""Exact arithmetic for the rings and fields used by the protocols.

Everything here is vectorized over numpy arrays:

* ``Z_{2^64}`` lives in ``uint64`` arrays and wraps natively.
* GF(2^8) uses the AES polynomial ``x^8 + x^4 + x^3 + x + 1``.
* GF(2^64) uses ``x^64 + x^4 + x^3 + x + 1`` in the natural bit order.
* GF(2^128) uses the GCM polynomial and the GCM bit-reflected convention;
  elements are ``(..., 2)`` uint64 arrays holding the big-endian block as
  ``(hi, lo)``.

None of this is constant-time.
"""

from __future__ import annotations

import functools

import numpy as np

MASK64 = (1 << 64) - 1
ALL_ONES = np.uint64(MASK64)
FRAC_BITS = 8

GF8_POLY = 0x11B
GF64_POLY_LOW = 0x1B  # x^4 + x^3 + x + 1
GF128_R_HI = np.uint64(0xE1 << 56)

TOWER_BETA = 1
TOWER_GAMMA = 1 << 61


class RangeError(ValueError):
    """A real value does not fit the fixed-point range."""


# ---------------------------------------------------------------------------
# Z_{2^64} and fixed point


def fp_encode(x, f: int = FRAC_BITS):
    """Encode reals as ``floor(x * 2^f)`` in two's complement mod 2^64."""
    arr = np.asarray(x, dtype=np.float64)
    bound = 2.0 ** (63 - f)
    if not np.all(np.abs(arr) < bound):
        raise RangeError(f"value outside (-2^{63 - f}, 2^{63 - f})")
    raw = np.floor(arr * (1 << f)).astype(np.int64).astype(np.uint64)
    if np.ndim(x) == 0:
        return int(raw)
    return raw


def fp_decode(raw, f: int = FRAC_BITS):
    signed = np.asarray(raw, dtype=np.uint64).astype(np.int64)
    out = signed.astype(np.float64) / (1 << f)
    if np.ndim(raw) == 0:
        return float(out)
    return out


def to_signed(raw):
    return np.asarray(raw, dtype=np.uint64).astype(np.int64)


# ---------------------------------------------------------------------------
# GF(2^8)


def _gf8_mul_scalar(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= GF8_POLY
    return r


def _build_gf8_tables():
    mul = np.zeros((256, 256), dtype=np.uint8)
    # log/exp over generator 3 makes the full table cheap to fill
    exp = [0] * 510
    log = [0] * 256
    v = 1
    for i in range(255):
        exp[i] = v
        log[v] = i
        v = _gf8_mul_scalar(v, 3)
    for i in range(255, 510):
        exp[i] = exp[i - 255]
    e = np.array(exp, dtype=np.int64)
    lg = np.array(log, dtype=np.int64)
    idx = lg[1:, None] + lg[None, 1:]
    mul[1:, 1:] = e[idx].astype(np.uint8)
    inv = np.zeros(256, dtype=np.uint8)
    for x in range(1, 256):
        inv[x] = exp[(255 - log[x]) % 255]
    return mul, inv


GF8_MUL, GF8_INV = _build_gf8_tables()
GF8_SQ = np.array([GF8_MUL[x, x] for x in range(256)], dtype=np.uint8)


def gf8_mul(a, b):
    return GF8_MUL[np.asarray(a, dtype=np.uint8), np.asarray(b, dtype=np.uint8)]


def gf8_inv(a):
    return GF8_INV[np.asarray(a, dtype=np.uint8)]


# ---------------------------------------------------------------------------
# GF(2^64)


def gf64_mul(a, b):
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    a, b = np.broadcast_arrays(a, b)
    r = np.zeros(a.shape, dtype=np.uint64)
    poly = np.uint64(GF64_POLY_LOW)
    one = np.uint64(1)
    for i in range(63, -1, -1):
        r = (r << one) ^ ((r >> np.uint64(63)) * poly)
        r ^= a & (((b >> np.uint64(i)) & one) * ALL_ONES)
    return r


def gf64_pow(a, e: int):
    a = np.asarray(a, dtype=np.uint64)
    result = np.ones(a.shape, dtype=np.uint64)
    base = a.copy()
    while e:
        if e & 1:
            result = gf64_mul(result, base)
        base = gf64_mul(base, base)
        e >>= 1
    return result


def gf64_inv(a):
    return gf64_pow(a, (1 << 64) - 2)


def gf64_trace(a: int) -> int:
    t, x = 0, np.uint64(a)
    for _ in range(64):
        t ^= int(x)
        x = gf64_mul(x, x)
    return t


# ---------------------------------------------------------------------------
# GF(2^128), GCM convention


def _r4_table() -> np.ndarray:
    # reduction of the four bits shifted out when multiplying by alpha^4
    table = np.zeros(16, dtype=np.uint64)
    for r in range(16):
        acc = 0
        for p in range(4):
            if r >> p & 1:
                acc ^= (0xE1 << 56) >> (3 - p)
        table[r] = acc
    return table


_R4 = _r4_table()
_NIBBLE_SHIFTS = np.arange(60, -4, -4, dtype=np.uint64)


def _gf128_times_alpha(h, l):
    lsb = l & np.uint64(1)
    return (h >> np.uint64(1)) ^ (lsb * GF128_R_HI), (l >> np.uint64(1)) | (h << np.uint64(63))


def gf128_mul(x, y):
    """GCM multiplication, vectorized over leading axes of ``(..., 2)`` arrays.

    4-bit windows: per element a 16-entry table of ``y`` times every nibble
    polynomial, then Horner over the 32 nibbles of ``x``.
    """
    x = np.asarray(x, dtype=np.uint64)
    y = np.asarray(y, dtype=np.uint64)
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape
    x = x.reshape(-1, 2)
    y = y.reshape(-1, 2)
    n = x.shape[0]
    # the leading bit of a nibble is the lowest power of alpha
    base = [(y[:, 0], y[:, 1])]
    for _ in range(3):
        base.append(_gf128_times_alpha(*base[-1]))
    table = np.zeros((n, 16, 2), dtype=np.uint64)
    for v in range(1, 16):
        low = v & -v
        h, l = base[3 - low.bit_length() + 1]
        table[:, v, 0] = table[:, v ^ low, 0] ^ h
        table[:, v, 1] = table[:, v ^ low, 1] ^ l
    flat_h = table[:, :, 0].reshape(-1)
    flat_l = table[:, :, 1].reshape(-1)
    nib = np.concatenate(
        [(x[:, :1] >> _NIBBLE_SHIFTS) & np.uint64(15), (x[:, 1:] >> _NIBBLE_SHIFTS) & np.uint64(15)],
        axis=1,
    ).astype(np.int64) + (np.arange(n, dtype=np.int64) * 16)[:, None]
    zh = flat_h[nib[:, 31]]
    zl = flat_l[nib[:, 31]]
    four, sixty, mask = np.uint64(4), np.uint64(60), np.uint64(15)
    for k in range(30, -1, -1):
        r = (zl & mask).astype(np.int64)
        zl = (zl >> four) | (zh << sixty)
        zh = (zh >> four) ^ _R4[r]
        idx = nib[:, k]
        zh ^= flat_h[idx]
        zl ^= flat_l[idx]
    return np.stack([zh, zl], axis=-1).reshape(shape)


def gf128_pow(a, e: int):
    a = np.asarray(a, dtype=np.uint64)
    result = np.broadcast_to(gf128_one(), a.shape).copy()
    base = a.copy()
    while e:
        if e & 1:
            result = gf128_mul(result, base)
        base = gf128_mul(base, base)
        e >>= 1
    return result


def gf128_inv(a):
    return gf128_pow(a, (1 << 128) - 2)


def gf128_one():
    return np.array([1 << 63, 0], dtype=np.uint64)


def gf128_from_int(v) -> np.ndarray:
    """Block value as a big-endian 128-bit integer -> ``(hi, lo)``."""
    if isinstance(v, (list, tuple)):
        return np.array([[x >> 64, x & MASK64] for x in v], dtype=np.uint64)
    return np.array([v >> 64, v & MASK64], dtype=np.uint64)


def gf128_to_int(a) -> int:
    a = np.asarray(a, dtype=np.uint64)
    return (int(a[0]) << 64) | int(a[1])


def gf128_from_bytes(buf) -> np.ndarray:
    """16-byte blocks (``(..., 16)`` uint8 or bytes) to GF(2^128) elements."""
    arr = np.frombuffer(buf, dtype=np.uint8) if isinstance(buf, (bytes, bytearray)) else np.asarray(buf, dtype=np.uint8)
    arr = np.ascontiguousarray(arr).reshape(arr.shape[:-1] + (2, 8))
    return arr.view(">u8")[..., 0].astype(np.uint64)


def gf128_to_bytes(a) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.uint64).astype(">u8"))
    return a.view(np.uint8).reshape(a.shape[:-1] + (16,))


# bit-level views used for GF(2)-linear maps; bit k of the 128-bit integer
# is (lo >> k) for k < 64 and (hi >> (k - 64)) otherwise


def _gf128_bits(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    lo = np.ascontiguousarray(a[..., 1].astype("<u8")).view(np.uint8)
    hi = np.ascontiguousarray(a[..., 0].astype("<u8")).view(np.uint8)
    lo_bits = np.unpackbits(lo.reshape(a.shape[:-1] + (8,)), axis=-1, bitorder="little")
    hi_bits = np.unpackbits(hi.reshape(a.shape[:-1] + (8,)), axis=-1, bitorder="little")
    return np.concatenate([lo_bits, hi_bits], axis=-1)


def _gf128_from_bits(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    lo = np.ascontiguousarray(packed[..., :8]).view("<u8")[..., 0]
    hi = np.ascontiguousarray(packed[..., 8:]).view("<u8")[..., 0]
    return np.stack([hi, lo], axis=-1).astype(np.uint64)


# ---------------------------------------------------------------------------
# Scalar helpers in the natural polynomial basis (bit i <-> z^i).  Only the
# one-off construction of the tower isomorphism uses these.

_G128_NAT = (1 << 128) | 0x87


def _bitrev128(v: int) -> int:
    return int(f"{v:0128b}"[::-1], 2)


def _clmul(a: int, b: int) -> int:
    r = 0
    while b:
        low = b & -b
        r ^= a << (low.bit_length() - 1)
        b ^= low
    return r


def _polymod2(a: int, m: int) -> int:
    dm = m.bit_length() - 1
    while a and a.bit_length() - 1 >= dm:
        a ^= m << (a.bit_length() - 1 - dm)
    return a


def _nat_mul(a: int, b: int) -> int:
    return _polymod2(_clmul(a, b), _G128_NAT)


def _nat_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("inverse of zero")
    r0, r1 = _G128_NAT, a
    s0, s1 = 0, 1
    while r1 != 1:
        shift = r0.bit_length() - r1.bit_length()
        if shift < 0:
            r0, r1, s0, s1 = r1, r0, s1, s0
            continue
        r0 ^= r1 << shift
        s0 ^= s1 << shift
        if r0.bit_length() < r1.bit_length():
            r0, r1, s0, s1 = r1, r0, s1, s0
    return _polymod2(s1, _G128_NAT)


def _nat_pow(a: int, e: int) -> int:
    r = 1
    while e:
        if e & 1:
            r = _nat_mul(r, a)
        a = _nat_mul(a, a)
        e >>= 1
    return r


# polynomials over GF(2^128) as coefficient lists, lowest degree first


def _ptrim(p):
    while p and p[-1] == 0:
        p.pop()
    return p


def _pdivmod(a, b):
    a = list(a)
    inv_lead = _nat_inv(b[-1])
    q = [0] * max(len(a) - len(b) + 1, 0)
    while len(_ptrim(a)) >= len(b):
        coef = _nat_mul(a[-1], inv_lead)
        shift = len(a) - len(b)
        q[shift] = coef
        for i, bc in enumerate(b):
            if bc:
                a[shift + i] ^= _nat_mul(coef, bc)
    return q, a


def _pgcd(a, b):
    a, b = _ptrim(list(a)), _ptrim(list(b))
    while b:
        _, r = _pdivmod(a, b)
        a, b = b, _ptrim(r)
    inv = _nat_inv(a[-1])
    return [_nat_mul(c, inv) for c in a]


def _root_in_gf128(modulus: int) -> int:
    """Find a root (natural basis) of a GF(2) polynomial that splits in GF(2^128).

    Equal-degree splitting with the absolute trace: for random d the gcd of
    f(X) and Tr(d X) separates roots by the value of Tr(d * root).
    """
    deg = modulus.bit_length() - 1
    # X^(2^k) mod f has GF(2) coefficients; precompute once as bitmasks
    frob = []
    cur = 0b10
    for _ in range(128):
        frob.append(cur)
        cur = _polymod2(_clmul(cur, cur), modulus)
    f = [(modulus >> i) & 1 for i in range(deg + 1)]
    rng = np.random.default_rng(0x5EED)
    while len(f) > 2:
        d = int.from_bytes(rng.bytes(16), "big")
        coeffs = [0] * deg
        dk = d
        for k in range(128):
            mask = frob[k]
            j = 0
            while mask:
                if mask & 1:
                    coeffs[j] ^= dk
                mask >>= 1
                j += 1
            dk = _nat_mul(dk, dk)
        _, trace = _pdivmod(coeffs, f)
        trace = _ptrim(trace)
        if not trace:
            continue
        g = _pgcd(f, trace)
        if 1 < len(g) < len(f):
            other, _ = _pdivmod(f, g)
            other = _ptrim(other)
            f = g if len(g) <= len(other) else [
                _nat_mul(c, _nat_inv(other[-1])) for c in other
            ]
    return f[0]  # monic linear factor X + r


def _gf2_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """One solution of ``matrix @ x = rhs`` over GF(2)."""
    m = matrix.astype(np.uint8) & 1
    n_rows, n_cols = m.shape
    aug = np.concatenate([m, (rhs.astype(np.uint8) & 1)[:, None]], axis=1)
    pivots = []
    row = 0
    for col in range(n_cols):
        sel = np.nonzero(aug[row:, col])[0]
        if sel.size == 0:
            continue
        p = row + sel[0]
        aug[[row, p]] = aug[[p, row]]
        hits = np.nonzero(aug[:, col])[0]
        hits = hits[hits != row]
        aug[hits] ^= aug[row]
        pivots.append(col)
        row += 1
        if row == n_rows:
            break
    if np.any(aug[row:, -1]):
        raise ArithmeticError("inconsistent GF(2) system")
    x = np.zeros(n_cols, dtype=np.uint8)
    for r, col in enumerate(pivots):
        x[col] = aug[r, -1]
    return x


def _gf2_inverse(matrix: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    aug = np.concatenate([matrix.astype(np.uint8) & 1, np.eye(n, dtype=np.uint8)], axis=1)
    for col in range(n):
        sel = np.nonzero(aug[col:, col])[0]
        if sel.size == 0:
            raise ArithmeticError("singular change-of-basis matrix")
        p = col + sel[0]
        aug[[col, p]] = aug[[p, col]]
        hits = np.nonzero(aug[:, col])[0]
        hits = hits[hits != col]
        aug[hits] ^= aug[col]
    return aug[:, n:]


class Tower:
    """Isomorphism GF(2^128) -> GF(2^64)[X] / (X^2 + X + 2^61).

    Elements of the tower are ``(..., 2)`` uint64 arrays ``(a, b)`` standing
    for ``a X + b``.
    """

    beta = TOWER_BETA
    gamma = TOWER_GAMMA

    def __init__(self):
        if gf64_trace(self.gamma) != 1:
            raise ArithmeticError("X^2 + X + gamma is reducible over GF(2^64)")
        gf64_modulus = (1 << 64) | GF64_POLY_LOW
        omega_nat = _root_in_gf128(gf64_modulus)
        if _nat_pow(omega_nat, 1 << 64) != omega_nat:
            raise ArithmeticError("root of the GF(2^64) modulus is not in the subfield")

        powers = [1]
        for _ in range(63):
            powers.append(_nat_mul(powers[-1], omega_nat))
        gamma_img = powers[61]

        # lambda^2 + lambda = gamma is GF(2)-linear in the bits of lambda
        lin = np.zeros((128, 128), dtype=np.uint8)
        for k in range(128):
            e = 1 << k
            img = _nat_mul(e, e) ^ e
            lin[:, k] = [(img >> r) & 1 for r in range(128)]
        rhs = np.array([(gamma_img >> r) & 1 for r in range(128)], dtype=np.uint8)
        lam_bits = _gf2_solve(lin, rhs)
        lam = sum(int(b) << r for r, b in enumerate(lam_bits))
        if _nat_mul(lam, lam) ^ lam ^ gamma_img:
            raise ArithmeticError("no root of X^2 + X + gamma found")

        # columns 0..63: b-part basis omega^j, columns 64..127: a-part lambda*omega^j,
        # expressed in GCM bit order
        inv_cols = []
        for j in range(64):
            inv_cols.append(_bitrev128(powers[j]))
        for j in range(64):
            inv_cols.append(_bitrev128(_nat_mul(lam, powers[j])))
        m_inv = np.zeros((128, 128), dtype=np.uint8)
        for c, v in enumerate(inv_cols):
            m_inv[:, c] = [(v >> r) & 1 for r in range(128)]
        self._to_field = m_inv
        self._to_tower = _gf2_inverse(m_inv)
        self.omega = _bitrev128(omega_nat)
        self.lam = _bitrev128(lam)

    @staticmethod
    def _apply(matrix: np.ndarray, bits: np.ndarray) -> np.ndarray:
        flat = bits.reshape(-1, 128).astype(np.int32)
        out = (flat @ matrix.T.astype(np.int32)) & 1
        return out.reshape(bits.shape).astype(np.uint8)

    def phi(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.uint64)
        bits = self._apply(self._to_tower, _gf128_bits(u))
        # tower bit layout: b in bits 0..63, a in bits 64..127
        packed = _gf128_from_bits(bits)
        return packed  # (..., 2) == (a, b)

    def phi_inv(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.uint64)
        bits = self._apply(self._to_field, _gf128_bits(t))
        return _gf128_from_bits(bits)

    @staticmethod
    def mul(s, t) -> np.ndarray:
        s = np.asarray(s, dtype=np.uint64)
        t = np.asarray(t, dtype=np.uint64)
        a, b = s[..., 0], s[..., 1]
        c, d = t[..., 0], t[..., 1]
        ac = gf64_mul(a, c)
        hi = gf64_mul(a, d) ^ gf64_mul(b, c) ^ (ac if TOWER_BETA == 1 else gf64_mul(TOWER_BETA, ac))
        lo = gf64_mul(b, d) ^ gf64_mul(np.uint64(TOWER_GAMMA), ac)
        return np.stack([hi, lo], axis=-1)


@functools.lru_cache(maxsize=1)
def tower() -> Tower:
    return Tower()


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


__all__ = [
    "FRAC_BITS",
    "MASK64",
    "RangeError",
    "Tower",
    "ceil_div",
    "fp_decode",
    "fp_encode",
    "gf128_from_bytes",
    "gf128_from_int",
    "gf128_inv",
    "gf128_mul",
    "gf128_one",
    "gf128_to_bytes",
    "gf128_to_int",
    "gf64_inv",
    "gf64_mul",
    "gf8_inv",
    "gf8_mul",
    "to_signed",
    "tower",
]
