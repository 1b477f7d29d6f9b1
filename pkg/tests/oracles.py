"""Independent reference implementations used only by the tests.

Everything here is written from the textbook definitions with plain Python
integers (or the ``cryptography`` package) and shares no code with the
package under test.
"""

from __future__ import annotations

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

GCM_R = 0xE1 << 120


def gf128_mul_bits(x: int, y: int) -> int:
    """GCM multiplication on big-endian block integers, bit by bit."""
    z, v = 0, y
    for i in range(127, -1, -1):
        if (x >> i) & 1:
            z ^= v
        v = (v >> 1) ^ GCM_R if v & 1 else v >> 1
    return z


def gf64_mul_bits(a: int, b: int) -> int:
    """Carry-less product reduced by x^64 + x^4 + x^3 + x + 1."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a >> 64:
            a ^= (1 << 64) | 0x1B
    return r


def gf8_mul_bits(a: int, b: int) -> int:
    r = 0
    for _ in range(8):
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= 0x11B
    return r


def sbox_table() -> list[int]:
    """AES S-box from the field inverse and the affine map."""
    inv = [0] * 256
    for a in range(1, 256):
        for b in range(1, 256):
            if gf8_mul_bits(a, b) == 1:
                inv[a] = b
                break
    out = []
    for a in range(256):
        x = inv[a]
        y = 0
        for i in range(8):
            bit = (x >> i) ^ (x >> ((i + 4) % 8)) ^ (x >> ((i + 5) % 8)) ^ (x >> ((i + 6) % 8)) ^ (x >> ((i + 7) % 8))
            y |= ((bit ^ (0x63 >> i)) & 1) << i
        out.append(y)
    return out


def aes_ecb(key: bytes, blocks: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(blocks) + enc.finalize()


def ghash_bits(h: bytes, data: bytes) -> bytes:
    """GHASH of already padded ``data`` under ``h``."""
    hk = int.from_bytes(h, "big")
    y = 0
    for k in range(0, len(data), 16):
        y = gf128_mul_bits(y ^ int.from_bytes(data[k : k + 16], "big"), hk)
    return y.to_bytes(16, "big")


def fixed_forward(x_raw: np.ndarray, weights_raw, biases_raw, activations, f: int = 8) -> np.ndarray:
    """Plaintext fixed-point forward pass with Python integers: floor shift after each product."""
    mod = 1 << 64

    def signed(v):
        v %= mod
        return v - mod if v >> 63 else v

    y = [[signed(int(v)) for v in row] for row in np.asarray(x_raw)]
    for w, b, act in zip(weights_raw, biases_raw, activations):
        w = [[signed(int(v)) for v in row] for row in np.asarray(w)]
        b = [signed(int(v)) for v in np.asarray(b)]
        out = []
        for row in y:
            acc = []
            for j in range(len(b)):
                s = sum(row[i] * w[i][j] for i in range(len(row)))
                v = signed(signed(s) >> f) + b[j]
                if act == "relu":
                    v = max(v, 0)
                acc.append(signed(v))
            out.append(acc)
        y = out
    return np.array([[v % mod for v in row] for row in y], dtype=np.uint64)


def float_forward(x: np.ndarray, weights, biases, activations) -> np.ndarray:
    y = np.asarray(x, dtype=np.float64)
    for w, b, act in zip(weights, biases, activations):
        y = y @ w + b
        if act == "relu":
            y = np.maximum(y, 0)
    return y
