"""IoT device simulator: encrypts samples under a counter nonce and ships them."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import formats
from .errors import FormatError

COUNTER_LIMIT = 1 << 64


class CounterExhausted(RuntimeError):
    """The nonce domain of this key is used up; rotate the key."""


@dataclass
class DeviceState:
    key: bytes
    user_id: str
    counter: int = 0
    last_timestamp: int = -1

    def __post_init__(self):
        if len(self.key) != 16:
            raise FormatError("device key must be 16 bytes (AES-128)")

    @classmethod
    def new(cls, user_id: str) -> "DeviceState":
        return cls(os.urandom(16), user_id)

    def next_nonce(self) -> bytes:
        if self.counter >= COUNTER_LIMIT:
            raise CounterExhausted("device counter exhausted, rotate the key")
        nonce = self.counter.to_bytes(formats.NONCE_BYTES, "big")
        self.counter += 1
        return nonce

    def stamp(self, now_ms: int) -> int:
        # identifiers must be unique per user, so bump on collisions
        ts = max(now_ms, self.last_timestamp + 1)
        self.last_timestamp = ts
        return ts

    def encrypt(self, sample) -> bytes:
        nonce = self.next_nonce()
        ad = formats.device_ad(self.user_id, nonce)
        return nonce + AESGCM(self.key).encrypt(nonce, formats.encode_sample(sample), ad)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({
            "key": self.key.hex(), "user_id": self.user_id,
            "counter": self.counter, "last_timestamp": self.last_timestamp,
        }))

    @classmethod
    def load(cls, path) -> "DeviceState":
        raw = json.loads(Path(path).read_text())
        return cls(bytes.fromhex(raw["key"]), raw["user_id"], raw["counter"], raw["last_timestamp"])


def read_samples(path) -> Iterator[np.ndarray]:
    """Rows of a CSV file; the first 187 columns are the signal, extra columns (labels) are dropped."""
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < formats.SAMPLE_VALUES:
                raise FormatError(f"{path}:{lineno}: {len(row)} columns, need {formats.SAMPLE_VALUES}")
            yield np.array([float(v) for v in row[: formats.SAMPLE_VALUES]])


def random_sample(rng: np.random.Generator) -> np.ndarray:
    # heartbeat-like: values in [0, 1] as in normalized ECG beats
    return rng.uniform(0.0, 1.0, formats.SAMPLE_VALUES)
