"""Fixed-point inference on Z_{2^64} sharings: dense layers, ReLU, truncation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rss
from .algebra import FRAC_BITS
from .convert import BitVecShare, a2b, b2a, b2a_bit, nwords
from .rss import GF2, Z64, RssShare, Session

REFERENCE_DIMS = (187, 50, 50, 50, 50, 5)
ACTIVATIONS = ("linear", "relu")

_OFFSET_BITS = 62  # inputs to truncation must satisfy |x| < 2^62


@dataclass
class TruncPairs:
    """Preprocessed ``r``, ``floor(r / 2^f)`` and the top bit of ``r``."""

    r: RssShare
    r_high: RssShare
    r_msb: RssShare
    f: int


def trunc_pairs(count: int, session: Session, f: int = FRAC_BITS) -> TruncPairs:
    """Derive truncation masks from one random boolean sharing via a single B2A.

    The three arithmetic values are converted side by side: ``r`` itself,
    its bits ``f..63`` moved down, and bit 63 alone.
    """
    with session.phase("preprocessing"):
        n = nwords(count)
        r = rss.rand_share(GF2, (64, n), session)
        zeros = RssShare(GF2, GF2.zeros((64, n)), GF2.zeros((64, n)), session.party)
        high = RssShare.concat([r[f:], zeros[:f]])
        msb = RssShare.concat([r[63:], zeros[1:]])
        lanes = 64 * n
        out = b2a(BitVecShare(RssShare.concat([r, high, msb], axis=1), 3 * lanes), session)
        return TruncPairs(out[:count], out[lanes : lanes + count], out[2 * lanes : 2 * lanes + count], f)


def truncate(x: RssShare, session: Session, f: int = FRAC_BITS, pairs: TruncPairs | None = None) -> RssShare:
    """Shared ``floor(x / 2^f) + e`` with ``e`` in {0, 1}, for ``|x| < 2^62``.

    ``x + 2^62 + r`` is opened; ``r`` is uniform so the opening reveals
    nothing.  The top bit of the opened value tells whether adding ``r``
    wrapped around 2^64, which makes the correction exact; only the carry out
    of the low ``f`` bits remains as the one-ULP error.
    """
    shape = x.shape
    flat = x.reshape(-1)
    count = len(flat)
    if pairs is None:
        pairs = trunc_pairs(count, session, f)
    with session.phase("online"):
        shifted = flat.add_public(np.uint64(1 << _OFFSET_BITS))
        c = rss.open_value(shifted + pairs.r, session)
        c_msb = c >> np.uint64(63)
        wrap_weight = (np.uint64(1) - c_msb) << np.uint64(64 - f)
        out = rss.public_share(c >> np.uint64(f), Z64, session.party) - pairs.r_high
        out = out + pairs.r_msb.scale(wrap_weight)
        out = out.add_public(Z64.neg(np.uint64(1 << (_OFFSET_BITS - f))))
        session.stats["truncations"] += count
    return out.reshape(*shape)


def dense(x: RssShare, w: RssShare, b: RssShare, session: Session, f: int = FRAC_BITS) -> RssShare:
    """``trunc(x @ W) + b`` on fixed-point sharings."""
    n, k = x.shape
    k2, m = w.shape
    if k != k2 or b.shape != (m,):
        raise ValueError(f"dimension mismatch: x {x.shape}, W {w.shape}, b {b.shape}")
    t = rss.matmul_triple_gen(n, k, m, session)
    pairs = trunc_pairs(n * m, session, f)
    with session.phase("online"):
        prod = rss.matmul_beaver(x, w, t, session)
    y = truncate(prod, session, f, pairs)
    return y + b.map(lambda v: np.broadcast_to(v, (n, m)))


def relu(x: RssShare, session: Session) -> RssShare:
    """``x * (1 - msb(x))`` with the sign bit taken from a boolean conversion."""
    shape = x.shape
    flat = x.reshape(-1)
    triple = rss.triple_gen(flat.shape, Z64, session)
    with session.phase("online"):
        bits = a2b(flat, session)
        positive = bits.bits(63, 64).invert()
        mask = b2a_bit(positive, session)
        out = rss.mul_beaver(flat, mask, triple, session)
    return out.reshape(*shape)


@dataclass
class SharedModel:
    dims: tuple[int, ...]
    activations: tuple[str, ...]
    weights: list[RssShare]
    biases: list[RssShare]
    frac_bits: int = FRAC_BITS

    def __post_init__(self):
        if len(self.dims) != len(self.weights) + 1 or len(self.weights) != len(self.biases):
            raise ValueError("layer count mismatch")
        if len(self.activations) != len(self.weights):
            raise ValueError("one activation per layer is required")
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[j], self.dims[j + 1]) or b.shape != (self.dims[j + 1],):
                raise ValueError(f"layer {j}: shares do not match the declared dims")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")


def infer(d: RssShare, model: SharedModel, session: Session) -> RssShare:
    """Forward pass over all rows of ``d``; logits of the last layer."""
    y = d
    for w, b, act in zip(model.weights, model.biases, model.activations):
        y = dense(y, w, b, session, model.frac_bits)
        if act == "relu":
            y = relu(y, session)
    return y


@dataclass
class BatchLayout:
    """Row ranges of each analysis inside a flattened batch."""

    sizes: list[int] = field(default_factory=list)

    @property
    def rows(self) -> int:
        return sum(self.sizes)

    def ranges(self) -> list[tuple[int, int]]:
        bounds = np.concatenate([[0], np.cumsum(self.sizes, dtype=np.int64)])
        return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    def row_owner(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.sizes)), self.sizes)


def flatten_batch(mats: list):
    """Stack per-analysis matrices (arrays or sharings) into one matrix."""
    layout = BatchLayout([len(m) for m in mats])
    if not mats:
        return None, layout
    if isinstance(mats[0], RssShare):
        return RssShare.concat(mats), layout
    return np.concatenate(mats), layout


def unflatten_batch(matrix, layout: BatchLayout) -> list:
    n = 0 if matrix is None else len(matrix)
    if n != layout.rows:
        raise ValueError(f"batch has {n} rows, layout expects {layout.rows}")
    return [matrix[a:b] for a, b in layout.ranges()]


def plain_forward(x: np.ndarray, weights: list[np.ndarray], biases: list[np.ndarray],
                  activations, f: int = FRAC_BITS) -> np.ndarray:
    """Plaintext fixed-point forward pass with exact floor truncation (raw uint64 in and out)."""
    y = np.asarray(x, dtype=np.uint64)
    for w, b, act in zip(weights, biases, activations):
        prod = np.matmul(y, np.asarray(w, dtype=np.uint64)).astype(np.int64) >> f
        y = prod.astype(np.uint64) + np.asarray(b, dtype=np.uint64)
        if act == "relu":
            y = np.where(y.astype(np.int64) < 0, np.uint64(0), y)
    return y
