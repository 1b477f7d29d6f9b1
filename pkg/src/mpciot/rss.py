"""Three-party replicated secret sharing.

Party ``i`` (1-based) holds ``(x_i, x_{i+1})``.  Component ``j`` is therefore
known to parties ``j`` and ``j - 1``, and the pairwise PRF seed between those
two parties generates it whenever it has to be random.
"""

from __future__ import annotations

import contextlib
import hashlib
import os
import hmac
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from . import algebra as A
from .errors import ProtocolAbort
from .net import T_ABORT, T_COMMIT, T_INPUT, T_OPEN, T_RESHARE, T_REVEAL, T_TRANSCRIPT, Hub

PARTIES = (1, 2, 3)
MODES = ("sh", "mal-lite")


def succ(i: int) -> int:
    return i % 3 + 1


def pred(i: int) -> int:
    return (i + 1) % 3 + 1


# ---------------------------------------------------------------------------
# algebras


class Algebra:
    name = ""
    dtype = np.uint64
    elem_shape: tuple = ()
    elem_bytes = 8

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(tuple(shape) + self.elem_shape, dtype=self.dtype)

    def add(self, a, b):
        return a ^ b

    sub = add

    def neg(self, a):
        return a

    def mul(self, a, b):
        raise NotImplementedError

    def from_random(self, buf: bytes, shape) -> np.ndarray:
        arr = np.frombuffer(buf, dtype=self.dtype).copy()
        return arr.reshape(tuple(shape) + self.elem_shape)

    def nbytes(self, shape) -> int:
        return int(np.prod(shape, dtype=np.int64)) * self.elem_bytes

    def encode(self, arr: np.ndarray) -> bytes:
        return np.ascontiguousarray(arr, dtype=np.dtype(self.dtype).newbyteorder("<")).tobytes()

    def decode(self, buf: bytes, shape) -> np.ndarray:
        arr = np.frombuffer(buf, dtype=np.dtype(self.dtype).newbyteorder("<"))
        return arr.astype(self.dtype).reshape(tuple(shape) + self.elem_shape)

    def __repr__(self):
        return self.name


class _Z64(Algebra):
    name = "Z64"

    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b

    def neg(self, a):
        arr = np.asarray(a, dtype=np.uint64)
        return np.negative(arr.reshape(-1)).reshape(arr.shape)

    def mul(self, a, b):
        return a * b

    def matmul(self, a, b):
        return np.matmul(a, b)


class _GF2(Algebra):
    """64 independent GF(2) elements packed per uint64 word."""

    name = "GF2"

    def mul(self, a, b):
        return a & b


class _GF8(Algebra):
    name = "GF8"
    dtype = np.uint8
    elem_bytes = 1

    def mul(self, a, b):
        return A.gf8_mul(a, b)


class _GF64(Algebra):
    name = "GF64"

    def mul(self, a, b):
        return A.gf64_mul(a, b)


class _GF128(Algebra):
    name = "GF128"
    elem_shape = (2,)
    elem_bytes = 16

    def mul(self, a, b):
        return A.gf128_mul(a, b)

    def encode(self, arr):
        # 128-bit little-endian: low word first
        return np.ascontiguousarray(arr[..., ::-1], dtype="<u8").tobytes()

    def decode(self, buf, shape):
        arr = np.frombuffer(buf, dtype="<u8").astype(np.uint64).reshape(tuple(shape) + (2,))
        return np.ascontiguousarray(arr[..., ::-1])


Z64 = _Z64()
GF2 = _GF2()
GF8 = _GF8()
GF64 = _GF64()
GF128 = _GF128()


# ---------------------------------------------------------------------------
# shares


@dataclass
class RssShare:
    alg: Algebra
    own: np.ndarray
    next: np.ndarray
    party: int

    @property
    def shape(self) -> tuple:
        nd = len(self.alg.elem_shape)
        return self.own.shape[: self.own.ndim - nd] if nd else self.own.shape

    def __len__(self):
        return self.shape[0]

    def _new(self, own, nxt) -> "RssShare":
        return RssShare(self.alg, own, nxt, self.party)

    def __add__(self, other: "RssShare") -> "RssShare":
        return self._new(self.alg.add(self.own, other.own), self.alg.add(self.next, other.next))

    def __sub__(self, other: "RssShare") -> "RssShare":
        return self._new(self.alg.sub(self.own, other.own), self.alg.sub(self.next, other.next))

    __xor__ = __add__

    def __neg__(self) -> "RssShare":
        return self._new(self.alg.neg(self.own), self.alg.neg(self.next))

    def __getitem__(self, idx) -> "RssShare":
        return self._new(self.own[idx], self.next[idx])

    def scale(self, c) -> "RssShare":
        """Multiply by a public constant (broadcast elementwise)."""
        return self._new(self.alg.mul(self.own, c), self.alg.mul(self.next, c))

    def add_public(self, c) -> "RssShare":
        """Add a public constant; it lands in component 1."""
        c = np.asarray(c, dtype=self.alg.dtype)
        own, nxt = self.own, self.next
        if self.party == 1:
            own = self.alg.add(own, c)
        elif self.party == 3:
            nxt = self.alg.add(nxt, c)
        return self._new(own, nxt)

    def retag(self, alg: Algebra) -> "RssShare":
        """Reinterpret the same arrays over another algebra with equal addition."""
        return RssShare(alg, self.own, self.next, self.party)

    def map(self, fn) -> "RssShare":
        """Apply a map that is linear over the share algebra to both components."""
        return self._new(fn(self.own), fn(self.next))

    def reshape(self, *shape) -> "RssShare":
        es = self.alg.elem_shape
        return self._new(self.own.reshape(tuple(shape) + es), self.next.reshape(tuple(shape) + es))

    def copy(self) -> "RssShare":
        return self._new(self.own.copy(), self.next.copy())

    @staticmethod
    def concat(parts: list["RssShare"], axis: int = 0) -> "RssShare":
        first = parts[0]
        return first._new(
            np.concatenate([p.own for p in parts], axis=axis),
            np.concatenate([p.next for p in parts], axis=axis),
        )

    def components(self) -> dict[int, np.ndarray]:
        return {self.party: self.own, succ(self.party): self.next}


def share(secret, alg: Algebra = Z64, rng: np.random.Generator | None = None,
          randomness: tuple | None = None) -> list[RssShare]:
    """Dealer-side sharing of a public-to-the-dealer value into three shares."""
    secret = np.asarray(secret, dtype=alg.dtype)
    shape = secret.shape[: secret.ndim - len(alg.elem_shape)] if alg.elem_shape else secret.shape
    if randomness is not None:
        x1 = np.asarray(randomness[0], dtype=alg.dtype)
        x2 = np.asarray(randomness[1], dtype=alg.dtype)
    else:
        rng = rng or np.random.default_rng()
        x1 = alg.from_random(rng.bytes(alg.nbytes(shape)), shape)
        x2 = alg.from_random(rng.bytes(alg.nbytes(shape)), shape)
    x3 = alg.sub(alg.sub(secret, x1), x2)
    comps = {1: x1, 2: x2, 3: x3}
    return [RssShare(alg, comps[i], comps[succ(i)], i) for i in PARTIES]


def reconstruct(shares: list[RssShare]) -> np.ndarray:
    comps: dict[int, np.ndarray] = {}
    for s in shares:
        for j, v in s.components().items():
            if j in comps and not np.array_equal(comps[j], v):
                raise ProtocolAbort("open-inconsistent", f"component {j} disagrees")
            comps[j] = v
    if len(comps) != 3:
        raise ValueError("need shares of at least two distinct parties")
    alg = shares[0].alg
    return alg.add(alg.add(comps[1], comps[2]), comps[3])


# ---------------------------------------------------------------------------
# PRF


class PrfStream:
    """AES-128-CTR keystream keyed from a seed and a context label."""

    def __init__(self, seed: bytes, context: bytes):
        key = hmac.new(seed, b"mpciot-prf|" + context, hashlib.sha256).digest()[:16]
        self._enc = Cipher(algorithms.AES(key), modes.CTR(bytes(16))).encryptor()
        self.position = 0

    def read(self, n: int) -> bytes:
        self.position += n
        return self._enc.update(bytes(n))


class PrfSetup:
    """Party ``i``'s pairwise seeds: ``seed_prev`` = seed_{i-1,i}, ``seed_next`` = seed_{i,i+1}."""

    def __init__(self, party: int, seed_prev: bytes, seed_next: bytes):
        self.party = party
        self.seed_prev = seed_prev
        self.seed_next = seed_next

    @classmethod
    def from_pairwise(cls, party: int, seeds: dict[tuple[int, int], bytes]) -> "PrfSetup":
        def key(a, b):
            return seeds[(a, b)] if (a, b) in seeds else seeds[(b, a)]

        return cls(party, key(pred(party), party), key(party, succ(party)))

    def streams(self, context: bytes) -> tuple[PrfStream, PrfStream, PrfStream]:
        private_seed = hashlib.sha256(b"private|" + self.seed_prev + self.seed_next).digest()
        return (
            PrfStream(self.seed_prev, context),
            PrfStream(self.seed_next, context),
            PrfStream(private_seed, context),
        )


def make_seeds(rng: np.random.Generator | None = None) -> dict[tuple[int, int], bytes]:
    draw = os.urandom if rng is None else rng.bytes
    return {(1, 2): draw(16), (2, 3): draw(16), (3, 1): draw(16)}


# ---------------------------------------------------------------------------
# session


@dataclass
class BeaverTriple:
    a: RssShare
    b: RssShare
    c: RssShare
    used: bool = False
    matrix: bool = False

    def consume(self) -> "BeaverTriple":
        if self.used:
            raise ProtocolAbort("triple-reuse", "Beaver triple already consumed")
        self.used = True
        return self

    def parts(self) -> list["BeaverTriple"]:
        """Split along the leading axis into independent one-time triples."""
        self.consume()
        return [BeaverTriple(self.a[i], self.b[i], self.c[i]) for i in range(len(self.a))]

    def take(self, idx) -> "BeaverTriple":
        return BeaverTriple(self.a[idx], self.b[idx], self.c[idx])


class Session:
    """One party's state for one protocol run (one analysis or one batch)."""

    def __init__(self, party: int, hub: Hub, prf: PrfSetup, session_id: bytes, mode: str = "sh"):
        if party not in PARTIES:
            raise ValueError("party index must be 1, 2 or 3")
        if mode not in MODES:
            raise ValueError(f"unknown security mode {mode!r}")
        self.party = party
        self.hub = hub
        self.session_id = session_id
        self.mode = mode
        self.prev, self.next, self.private = prf.streams(session_id)
        self.stats: Counter = Counter()
        self.timings: Counter = Counter()
        self.transcript = hashlib.sha256(session_id)
        self.pending_gf128: list[tuple[RssShare, RssShare, RssShare]] = []
        self._phases: list[str] = []
        self._phase_start = 0.0

    @property
    def malicious(self) -> bool:
        return self.mode == "mal-lite"

    @property
    def succ(self) -> int:
        return succ(self.party)

    @property
    def pred(self) -> int:
        return pred(self.party)

    # -- messaging ---------------------------------------------------------

    def send(self, to: int, tag: int, payload: bytes) -> None:
        self.stats["messages"] += 1
        self.stats["bytes"] += len(payload)
        self.hub.send(self.session_id, to, tag, payload)

    def recv(self, frm: int, tag: int) -> bytes:
        return self.hub.recv(self.session_id, frm, tag)

    def abort(self, reason: str, detail: str = "") -> ProtocolAbort:
        msg = f"{reason} {detail}".strip().encode()
        for p in (self.pred, self.succ):
            try:
                self.hub.send(self.session_id, p, T_ABORT, msg)
            except Exception:  # noqa: BLE001 - best effort notification
                pass
        return ProtocolAbort(reason, detail)

    @contextlib.contextmanager
    def phase(self, name: str):
        """Attribute wall time to ``name``; nested phases pause the outer one."""
        now = time.perf_counter()
        if self._phases:
            self.timings[self._phases[-1]] += now - self._phase_start
        self._phases.append(name)
        self._phase_start = now
        try:
            yield
        finally:
            now = time.perf_counter()
            self.timings[self._phases.pop()] += now - self._phase_start
            self._phase_start = now

    def private_bytes(self, n: int) -> bytes:
        return self.private.read(n)

    def close(self) -> None:
        self.hub.release(self.session_id)

    def check_transcript(self) -> None:
        digest = self.transcript.digest()
        self.send(self.pred, T_TRANSCRIPT, digest)
        self.send(self.succ, T_TRANSCRIPT, digest)
        for p in (self.pred, self.succ):
            if self.recv(p, T_TRANSCRIPT) != digest:
                raise self.abort("transcript-mismatch", f"with party {p}")

    def coin(self, nbytes: int) -> bytes:
        """Joint public randomness by commit-then-reveal."""
        mine = self.private_bytes(32)
        commit = hashlib.sha256(b"coin|" + mine).digest()
        for p in (self.pred, self.succ):
            self.send(p, T_COMMIT, commit)
        commits = {p: self.recv(p, T_COMMIT) for p in (self.pred, self.succ)}
        for p in (self.pred, self.succ):
            self.send(p, T_REVEAL, mine)
        reveals = {self.party: mine}
        for p in (self.pred, self.succ):
            r = self.recv(p, T_REVEAL)
            if hashlib.sha256(b"coin|" + r).digest() != commits[p]:
                raise self.abort("coin-commitment", f"party {p}")
            reveals[p] = r
        seed = b"".join(reveals[i] for i in PARTIES) + self.transcript.digest()
        return hashlib.shake_256(seed).digest(nbytes)

    def coin_elements(self, alg: Algebra, shape) -> np.ndarray:
        return alg.from_random(self.coin(alg.nbytes(shape)), shape)


# ---------------------------------------------------------------------------
# local (non-interactive) sharings


def rand_share(alg: Algebra, shape, session: Session) -> RssShare:
    """Fresh uniformly random sharing; each component comes from its pair seed."""
    n = alg.nbytes(shape)
    own = alg.from_random(session.prev.read(n), shape)
    nxt = alg.from_random(session.next.read(n), shape)
    return RssShare(alg, own, nxt, session.party)


def rand_component(j: int, alg: Algebra, shape, session: Session) -> np.ndarray | None:
    """Value drawn jointly by the two holders of component ``j``; ``None`` elsewhere."""
    n = alg.nbytes(shape)
    if session.party == j:
        return alg.from_random(session.prev.read(n), shape)
    if session.party == pred(j):
        return alg.from_random(session.next.read(n), shape)
    return None


def component_share(j: int, value: np.ndarray | None, alg: Algebra, shape, party: int) -> RssShare:
    """Sharing whose component ``j`` equals ``value`` and whose others are zero."""
    zero = alg.zeros(shape)
    if party == j:
        return RssShare(alg, np.asarray(value, dtype=alg.dtype), zero, party)
    if party == pred(j):
        return RssShare(alg, zero, np.asarray(value, dtype=alg.dtype), party)
    return RssShare(alg, zero, zero.copy(), party)


def public_share(value, alg: Algebra, party: int) -> RssShare:
    value = np.asarray(value, dtype=alg.dtype)
    shape = value.shape[: value.ndim - len(alg.elem_shape)] if alg.elem_shape else value.shape
    return component_share(1, value, alg, shape, party)


def zero_share(alg: Algebra, shape, session: Session) -> np.ndarray:
    """Additive 3-out-of-3 sharing of zero (party's single summand)."""
    n = alg.nbytes(shape)
    a = alg.from_random(session.next.read(n), shape)
    b = alg.from_random(session.prev.read(n), shape)
    return alg.sub(a, b)


def reshare(z: np.ndarray, alg: Algebra, shape, session: Session) -> RssShare:
    """Turn additive summands into a replicated sharing (one round)."""
    session.send(session.pred, T_RESHARE, alg.encode(z))
    nxt = alg.decode(session.recv(session.succ, T_RESHARE), shape)
    session.stats["rounds"] += 1
    return RssShare(alg, z, nxt, session.party)


def input_share(owner: int, value, alg: Algebra, shape, session: Session) -> RssShare:
    """Share a value known only to ``owner``.  One message, owner -> pred(owner)."""
    s = rand_component(succ(owner), alg, shape, session)
    p = session.party
    if p == owner:
        masked = alg.sub(np.asarray(value, dtype=alg.dtype), s)
        session.send(pred(owner), T_INPUT, alg.encode(masked))
        return RssShare(alg, masked, s, p)
    if p == succ(owner):
        return RssShare(alg, s, alg.zeros(shape), p)
    masked = alg.decode(session.recv(owner, T_INPUT), shape)
    return RssShare(alg, alg.zeros(shape), masked, p)


# ---------------------------------------------------------------------------
# opening


def open_values(xs: list[RssShare], session: Session, to: frozenset | set | None = None,
                record: bool = True) -> list[np.ndarray] | None:
    """Open several sharings in one round.

    Party ``i`` lacks component ``i - 1``: its successor sends its ``next``,
    and in mal-lite mode its predecessor also sends its ``own`` so the two
    copies can be compared.
    """
    recipients = set(PARTIES) if to is None else set(to)
    me, p_pred, p_succ = session.party, session.pred, session.succ
    if p_pred in recipients:
        session.send(p_pred, T_OPEN, b"".join(x.alg.encode(x.next) for x in xs))
    if session.malicious and p_succ in recipients:
        session.send(p_succ, T_OPEN, b"".join(x.alg.encode(x.own) for x in xs))
    session.stats["rounds"] += 1
    if me not in recipients:
        return None

    def split(buf: bytes) -> list[np.ndarray]:
        out, off = [], 0
        for x in xs:
            n = x.alg.nbytes(x.shape)
            out.append(x.alg.decode(buf[off : off + n], x.shape))
            off += n
        return out

    buf = session.recv(p_succ, T_OPEN)
    missing = split(buf)
    if session.malicious:
        check = session.recv(p_pred, T_OPEN)
        if check != buf:
            raise session.abort("open-inconsistent", f"party {me} saw differing copies")
    values = []
    for x, m in zip(xs, missing):
        values.append(x.alg.add(x.alg.add(x.own, x.next), m))
        if record and to is None:
            session.transcript.update(x.alg.encode(values[-1]))
    return values


def open_value(x: RssShare, session: Session, to=None) -> np.ndarray | None:
    res = open_values([x], session, to)
    return None if res is None else res[0]


# ---------------------------------------------------------------------------
# preprocessing


def _cross_terms(alg: Algebra, a: RssShare, b: RssShare, matrix: bool) -> np.ndarray:
    if matrix:
        t = alg.matmul(a.own, b.own)
        t = alg.add(t, alg.matmul(a.own, b.next))
        return alg.add(t, alg.matmul(a.next, b.own))
    a_own, b_own = np.broadcast_arrays(a.own, b.own)
    p = alg.mul(np.stack([a_own, a_own, np.broadcast_to(a.next, a_own.shape)]),
                np.stack([b_own, np.broadcast_to(b.next, b_own.shape), b_own]))
    return alg.add(alg.add(p[0], p[1]), p[2])


def _product(a: RssShare, b: RssShare, session: Session, matrix: bool = False) -> RssShare:
    alg = a.alg
    z = _cross_terms(alg, a, b, matrix)
    shape = z.shape[: z.ndim - len(alg.elem_shape)] if alg.elem_shape else z.shape
    z = alg.add(z, zero_share(alg, shape, session))
    return reshare(z, alg, shape, session)


def triple_gen(shape, alg: Algebra, session: Session) -> BeaverTriple:
    """Random multiplication triples of the given shape.

    Semi-honest: one resharing round for ``c = a * b``.  mal-lite: a second
    triple sharing ``b`` is made alongside and sacrificed against a public
    challenge ``t``: open ``rho = t a - a'`` and require
    ``t c - c' - rho b == 0``.
    """
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    with session.phase("preprocessing"):
        if int(np.prod(shape, dtype=np.int64)) == 0:
            z = RssShare(alg, alg.zeros(shape), alg.zeros(shape), session.party)
            return BeaverTriple(z, z.copy(), z.copy())
        if not session.malicious:
            a = rand_share(alg, shape, session)
            b = rand_share(alg, shape, session)
            c = _product(a, b, session)
            session.stats["triples_generated"] += int(np.prod(shape))
            return BeaverTriple(a, b, c)
        a = rand_share(alg, (2,) + shape, session)
        b = rand_share(alg, shape, session)
        bb = RssShare.concat([b[None], b[None]])
        c = _product(a, bb, session)
        c = _tamper_hook(session, "triple", c)
        _sacrifice(a[0], a[1], b, c[0], c[1], alg, shape, session, matrix=False)
        session.stats["triples_generated"] += int(np.prod(shape))
        return BeaverTriple(a[0], b, c[0])


def matmul_triple_gen(n: int, k: int, m: int, session: Session) -> BeaverTriple:
    """Matrix triple ``C = A @ B`` over Z_{2^64} with ``A: n x k``, ``B: k x m``."""
    alg = Z64
    with session.phase("preprocessing"):
        b = rand_share(alg, (k, m), session)
        if not session.malicious:
            a = rand_share(alg, (n, k), session)
            c = _product(a, b, session, matrix=True)
            return BeaverTriple(a, b, c, matrix=True)
        a = rand_share(alg, (2, n, k), session)
        z = alg.add(_cross_terms(alg, a, RssShare(alg, b.own[None], b.next[None], b.party), True),
                    zero_share(alg, (2, n, m), session))
        c = reshare(z, alg, (2, n, m), session)
        c = _tamper_hook(session, "triple", c)
        _sacrifice(a[0], a[1], b, c[0], c[1], alg, (n, m), session, matrix=True)
        return BeaverTriple(a[0], b, c[0], matrix=True)


def _sacrifice(a, a2, b, c, c2, alg, out_shape, session, matrix):
    t = session.coin_elements(alg, ()) if matrix else session.coin_elements(alg, a.shape)
    rho = open_value(a.scale(t) - a2, session)
    if matrix:
        rb = b.map(lambda s: alg.matmul(rho, s))
    else:
        rb = b.scale(rho)
    check = open_value(c.scale(t) - c2 - rb, session)
    if np.any(check != 0):
        raise session.abort("preprocessing-corrupt", "triple sacrifice failed")


def _tamper_hook(session: Session, point: str, value: RssShare) -> RssShare:
    hook = getattr(session, "tamper", None)
    if hook is None:
        return value
    return hook(point, value)


# ---------------------------------------------------------------------------
# multiplication


def _beaver_finish(opened, triples: list[BeaverTriple], party: int) -> list[RssShare]:
    """Local part of Beaver multiplication, with all products in one field call."""
    alg = triples[0].a.alg
    es = alg.elem_shape
    left, right = [], []
    for (d, e), t in zip(opened, triples):
        for v, w in ((t.b.own, d), (t.b.next, d), (t.a.own, e), (t.a.next, e), (d, e)):
            v, w = np.broadcast_arrays(v, w)
            left.append(v)
            right.append(w)

    def flat(arrs):
        return np.concatenate([a.reshape((-1,) + es) for a in arrs])

    counts = [a.reshape((-1,) + es).shape[0] for a in left]
    pieces = np.split(alg.mul(flat(left), flat(right)), np.cumsum(counts)[:-1])
    out = []
    for k, t in enumerate(triples):
        p = [pieces[5 * k + j].reshape(left[5 * k + j].shape) for j in range(5)]
        own = alg.add(alg.add(p[0], p[2]), t.c.own)
        nxt = alg.add(alg.add(p[1], p[3]), t.c.next)
        out.append(RssShare(alg, own, nxt, party).add_public(p[4]))
    return out


def mul_beaver(x: RssShare, y: RssShare, t: BeaverTriple, session: Session) -> RssShare:
    """``z = d b + e a + c + d e`` with ``d = x - a`` and ``e = y - b`` opened."""
    t.consume()
    session.stats["triples_consumed"] += 1
    d, e = open_values([x - t.a, y - t.b], session)
    return _beaver_finish([(d, e)], [t], session.party)[0]


def mul_many(pairs: list[tuple[RssShare, RssShare]], triples: list[BeaverTriple],
             session: Session) -> list[RssShare]:
    """Several independent Beaver products sharing a single opening round."""
    for t in triples:
        t.consume()
        session.stats["triples_consumed"] += 1
    masked = []
    for (x, y), t in zip(pairs, triples):
        masked += [x - t.a, y - t.b]
    opened = open_values(masked, session)
    return _beaver_finish(list(zip(opened[0::2], opened[1::2])), triples, session.party)


def mul(x: RssShare, y: RssShare, session: Session) -> RssShare:
    t = triple_gen(x.shape, x.alg, session)
    return mul_beaver(x, y, t, session)


def matmul_beaver(x: RssShare, w: RssShare, t: BeaverTriple, session: Session) -> RssShare:
    """Shared matrix product ``x @ w`` consuming one matrix triple."""
    t.consume()
    session.stats["triples_consumed"] += 1
    d, e = open_values([x - t.a, w - t.b], session)
    mm = Z64.matmul
    z = t.b.map(lambda s: mm(d, s)) + t.a.map(lambda s: mm(s, e)) + t.c
    return z.add_public(mm(d, e))


# ---------------------------------------------------------------------------
# GF(2^128) product verification


def verify_gf128_products(batch: list[tuple[RssShare, RssShare, RssShare]], session: Session) -> None:
    """Check ``u * v == w`` for every shared triple in ``batch``.

    Each GF(2^128) element is mapped share-wise into GF(2^64)[X]/(X^2+X+gamma)
    as ``u -> aX+b``, ``v -> cX+d``, ``w -> eX+f``.  Both tower constraints
    are folded with public random coefficients ``r``, ``s`` into one inner
    product over GF(2^64), evaluated with Beaver products and opened; any
    nonzero result aborts.
    """
    if not batch:
        return
    with session.phase("verification"):
        tw = A.tower()
        u = RssShare.concat([b[0].reshape(-1) for b in batch])
        v = RssShare.concat([b[1].reshape(-1) for b in batch])
        w = RssShare.concat([b[2].reshape(-1) for b in batch])
        k = len(u)

        def split(x: RssShare) -> tuple[RssShare, RssShare]:
            t = x.map(tw.phi)
            hi = t.map(lambda s: np.ascontiguousarray(s[..., 0])).retag(GF64)
            lo = t.map(lambda s: np.ascontiguousarray(s[..., 1])).retag(GF64)
            return hi, lo

        a, b = split(u)
        c, d = split(v)
        e, f = split(w)
        coeffs = session.coin_elements(GF64, (2, k))
        r, s = coeffs[0], coeffs[1]
        gamma = np.uint64(A.TOWER_GAMMA)
        beta = np.uint64(A.TOWER_BETA)
        mix = A.gf64_mul(r, beta) ^ A.gf64_mul(s, gamma)
        x = RssShare.concat([a, b])
        y = RssShare.concat([d.scale(r) + c.scale(mix), c.scale(r) + d.scale(s)])
        target = e.scale(r) + f.scale(s)
        prods = mul_beaver(x, y, triple_gen(2 * k, GF64, session), session)
        total_own = np.bitwise_xor.reduce(prods.own ^ np.concatenate([target.own, np.zeros_like(target.own)]))
        total_next = np.bitwise_xor.reduce(prods.next ^ np.concatenate([target.next, np.zeros_like(target.next)]))
        z = RssShare(GF64, np.asarray(total_own), np.asarray(total_next), session.party)
        if open_value(z, session) != 0:
            raise session.abort("mul-verify-failed", f"{k} GF(2^128) products")
        session.stats["gf128_verified"] += k


def flush_gf128(session: Session) -> None:
    """Verify every queued GF(2^128) product (mal-lite) before anything derived is opened."""
    pending, session.pending_gf128 = session.pending_gf128, []
    if session.malicious:
        verify_gf128_products(pending, session)


__all__ = [
    "GF128", "GF2", "GF64", "GF8", "Z64", "Algebra", "BeaverTriple", "PrfSetup", "PrfStream",
    "RssShare", "Session", "component_share", "input_share", "make_seeds", "matmul_beaver",
    "matmul_triple_gen", "mul", "mul_beaver", "mul_many", "open_value", "open_values", "pred",
    "public_share", "rand_component", "rand_share", "reconstruct", "reshare", "share", "succ",
    "triple_gen", "verify_gf128_products", "zero_share", "flush_gf128",
]
