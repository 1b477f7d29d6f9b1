"""AES-128 building blocks shared by the plaintext key tooling and the MPC cipher.

States are ``(..., 16)`` uint8 arrays in FIPS-197 column-major byte order
(byte ``r + 4c`` is row ``r`` of column ``c``).  The linear layers below act
independently on each XOR share, so the MPC code reuses them unchanged.
"""

from __future__ import annotations

import numpy as np

from .algebra import GF8_INV

ROUNDS = 10
SCHEDULE_BYTES = 16 * (ROUNDS + 1)


def _rotl8(b, n):
    return ((b << n) | (b >> (8 - n))) & 0xFF


def _affine_linear_table() -> np.ndarray:
    b = np.arange(256, dtype=np.int64)
    out = b ^ _rotl8(b, 1) ^ _rotl8(b, 2) ^ _rotl8(b, 3) ^ _rotl8(b, 4)
    return out.astype(np.uint8)


AFFINE_LINEAR = _affine_linear_table()
AFFINE_CONST = 0x63
SBOX = (AFFINE_LINEAR[GF8_INV] ^ AFFINE_CONST).astype(np.uint8)
XTIME = np.array([((x << 1) ^ (0x1B if x & 0x80 else 0)) & 0xFF for x in range(256)], dtype=np.uint8)

_SHIFT_ROWS = np.array([r + 4 * ((c + r) % 4) for c in range(4) for r in range(4)])
_RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36]


def shift_rows(state: np.ndarray) -> np.ndarray:
    # output index r + 4c takes input r + 4((c + r) mod 4)
    return state[..., _SHIFT_ROWS]


def mix_columns(state: np.ndarray) -> np.ndarray:
    s = state.reshape(state.shape[:-1] + (4, 4))
    a0, a1, a2, a3 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    t = a0 ^ a1 ^ a2 ^ a3
    out = np.stack(
        [
            a0 ^ t ^ XTIME[a0 ^ a1],
            a1 ^ t ^ XTIME[a1 ^ a2],
            a2 ^ t ^ XTIME[a2 ^ a3],
            a3 ^ t ^ XTIME[a3 ^ a0],
        ],
        axis=-1,
    )
    return out.reshape(state.shape)


def expand_key(key: bytes) -> bytes:
    """AES-128 key schedule: 11 round keys, 176 bytes."""
    if len(key) != 16:
        raise ValueError("AES-128 key must be 16 bytes")
    words = [list(key[4 * i : 4 * i + 4]) for i in range(4)]
    for i in range(4, 44):
        temp = list(words[i - 1])
        if i % 4 == 0:
            temp = temp[1:] + temp[:1]
            temp = [int(SBOX[b]) for b in temp]
            temp[0] ^= _RCON[i // 4 - 1]
        words.append([w ^ t for w, t in zip(words[i - 4], temp)])
    return bytes(b for w in words for b in w)


def encrypt_blocks(schedule: bytes, blocks: np.ndarray) -> np.ndarray:
    """Plain AES-128 over ``(n, 16)`` blocks with an expanded schedule."""
    rk = np.frombuffer(schedule, dtype=np.uint8).reshape(ROUNDS + 1, 16)
    state = np.asarray(blocks, dtype=np.uint8) ^ rk[0]
    for r in range(1, ROUNDS + 1):
        state = shift_rows(SBOX[state])
        if r != ROUNDS:
            state = mix_columns(state)
        state = state ^ rk[r]
    return state


def counter_blocks(nonce: bytes, first: int, count: int) -> np.ndarray:
    """GCM counter blocks ``nonce || be32(first + j)`` for ``j < count``."""
    if len(nonce) != 12:
        raise ValueError("nonce must be 12 bytes")
    out = np.empty((count, 16), dtype=np.uint8)
    out[:, :12] = np.frombuffer(nonce, dtype=np.uint8)
    ctr = (np.arange(count, dtype=np.uint64) + np.uint64(first)) & np.uint64(0xFFFFFFFF)
    out[:, 12:] = ctr.astype(">u4").view(np.uint8).reshape(count, 4)
    return out
