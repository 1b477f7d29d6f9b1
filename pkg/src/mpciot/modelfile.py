"""Plaintext model files and the per-party share files made from them.

Share file layout (all integers little-endian)::

    b"MPCMODEL" | u8 version | u8 party | u8 frac bits | u8 layers L
    | u32 dims[L+1] | u8 activation[L]
    | per layer: W own, W next, b own, b next as u64 words
    | SHA-256 of everything before it
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from . import rss
from .algebra import FRAC_BITS, fp_encode
from .errors import FormatError
from .infer import ACTIVATIONS, REFERENCE_DIMS, SharedModel
from .rss import Z64, RssShare

MAGIC = b"MPCMODEL"
VERSION = 1


def save_plain(path, weights: list[np.ndarray], biases: list[np.ndarray], activations) -> None:
    arrays = {f"W{j}": np.asarray(w, dtype=np.float64) for j, w in enumerate(weights)}
    arrays.update({f"b{j}": np.asarray(b, dtype=np.float64) for j, b in enumerate(biases)})
    arrays["activations"] = np.array(list(activations))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_plain(path) -> tuple[list[np.ndarray], list[np.ndarray], tuple[str, ...]]:
    with np.load(path, allow_pickle=False) as data:
        layers = sum(1 for k in data.files if k.startswith("W"))
        weights = [data[f"W{j}"] for j in range(layers)]
        biases = [data[f"b{j}"] for j in range(layers)]
        acts = tuple(str(a) for a in data["activations"])
    return weights, biases, acts


def random_plain(rng: np.random.Generator, dims=REFERENCE_DIMS, scale: str = "fan-in"):
    """Synthetic model with weights uniform in [-1, 1] times a per-layer factor.

    ``fan-in`` divides by the fan-in, ``sqrt`` by its root, and ``he``
    multiplies by ``sqrt(6 / fan-in)`` so ReLU layers keep unit-scale
    activations and the logits stay well above the fixed-point resolution.
    """
    factors = {"fan-in": lambda a: 1 / a, "sqrt": lambda a: 1 / np.sqrt(a), "he": lambda a: np.sqrt(6 / a)}
    if scale not in factors:
        raise ValueError(f"unknown weight scale {scale!r}")
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(rng.uniform(-1, 1, (a, b)) * factors[scale](a))
        biases.append(np.zeros(b))
    acts = ("relu",) * (len(dims) - 2) + ("linear",)
    return weights, biases, acts


def _check_dims(weights, biases, activations) -> tuple[int, ...]:
    if not weights or len(weights) != len(biases) or len(weights) != len(activations):
        raise FormatError("need one weight matrix, bias vector and activation per layer")
    dims = [weights[0].shape[0]]
    for j, (w, b) in enumerate(zip(weights, biases)):
        if w.ndim != 2 or w.shape[0] != dims[-1] or b.shape != (w.shape[1],):
            raise FormatError(f"layer {j}: shape {w.shape} / {b.shape} breaks the dimension chain")
        dims.append(w.shape[1])
    for a in activations:
        if a not in ACTIVATIONS:
            raise FormatError(f"unknown activation {a!r}")
    return tuple(dims)


def share_model(weights, biases, activations, rng=None, f: int = FRAC_BITS,
                expected_dims=None) -> list[bytes]:
    """Fixed-point encode and share a plaintext model; returns three share files."""
    weights = [np.asarray(w, dtype=np.float64) for w in weights]
    biases = [np.asarray(b, dtype=np.float64) for b in biases]
    dims = _check_dims(weights, biases, activations)
    if expected_dims is not None and tuple(expected_dims) != dims:
        raise FormatError(f"model dims {dims} do not match declared {tuple(expected_dims)}")
    w_sh = [rss.share(fp_encode(w, f), Z64, rng) for w in weights]
    b_sh = [rss.share(fp_encode(b, f), Z64, rng) for b in biases]
    files = []
    for p in rss.PARTIES:
        model = SharedModel(dims, tuple(activations), [w[p - 1] for w in w_sh], [b[p - 1] for b in b_sh], f)
        files.append(dump_shares(model, p))
    return files


def dump_shares(model: SharedModel, party: int) -> bytes:
    layers = len(model.weights)
    head = MAGIC + struct.pack("<BBBB", VERSION, party, model.frac_bits, layers)
    head += struct.pack(f"<{layers + 1}I", *model.dims)
    head += bytes(ACTIVATIONS.index(a) for a in model.activations)
    body = b"".join(
        Z64.encode(w.own) + Z64.encode(w.next) + Z64.encode(b.own) + Z64.encode(b.next)
        for w, b in zip(model.weights, model.biases)
    )
    blob = head + body
    return blob + hashlib.sha256(blob).digest()


def load_shares(blob: bytes, party: int | None = None) -> SharedModel:
    if len(blob) < len(MAGIC) + 4 + 32 or not blob.startswith(MAGIC):
        raise FormatError("not a model share file")
    data, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(data).digest() != digest:
        raise FormatError("model share file checksum mismatch")
    off = len(MAGIC)
    version, owner, f, layers = struct.unpack_from("<BBBB", data, off)
    off += 4
    if version != VERSION:
        raise FormatError(f"unsupported model file version {version}")
    if party is not None and owner != party:
        raise FormatError(f"share file belongs to party {owner}, not {party}")
    dims = struct.unpack_from(f"<{layers + 1}I", data, off)
    off += 4 * (layers + 1)
    acts = tuple(ACTIVATIONS[a] for a in data[off : off + layers])
    off += layers
    weights, biases = [], []

    def take(shape):
        nonlocal off
        n = Z64.nbytes(shape)
        arr = Z64.decode(data[off : off + n], shape)
        off += n
        return arr

    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(RssShare(Z64, take((a, b)), take((a, b)), owner))
        biases.append(RssShare(Z64, take((b,)), take((b,)), owner))
    if off != len(data):
        raise FormatError("trailing bytes in model share file")
    return SharedModel(tuple(dims), acts, weights, biases, f)


def write_share_files(files: list[bytes], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for p, blob in zip(rss.PARTIES, files):
        path = out / f"model.p{p}.bin"
        path.write_bytes(blob)
        paths.append(path)
    return paths
