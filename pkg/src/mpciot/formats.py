"""Byte layouts shared by devices, the orchestrator, the parties and users."""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from . import algebra
from .errors import FormatError

SAMPLE_VALUES = 187
SAMPLE_BYTES = SAMPLE_VALUES * 8  # 1496
NONCE_BYTES = 12
TAG_BYTES = 16
RECORD_BYTES = NONCE_BYTES + SAMPLE_BYTES + TAG_BYTES  # 1524
CLASSES = 5
RESULT_ROW_BYTES = CLASSES * 8  # 40
KEY_SCHEDULE_BYTES = 176
ENVELOPE_BYTES = 256
PUBLIC_KEY_BYTES = 256
CIPHER_ALG = "AES-128-GCM"
CLASS_LABELS = ("N", "S", "V", "F", "Q")

MODE_ADHOC = 0x01
MODE_STREAM = 0x02


def lp(field: bytes | str) -> bytes:
    """Two-byte big-endian length prefix."""
    if isinstance(field, str):
        field = field.encode()
    if len(field) > 0xFFFF:
        raise FormatError("associated-data field longer than 65535 bytes")
    return struct.pack(">H", len(field)) + field


def device_ad(user_id: str, nonce: bytes) -> bytes:
    return lp(user_id) + lp(nonce)


def result_ad(user_id: str, pks: list[bytes], analysis_id: str, analysis_type: str) -> bytes:
    return lp(user_id) + b"".join(lp(pk) for pk in pks) + lp(analysis_id) + lp(analysis_type)


def result_nonce(ad: bytes) -> bytes:
    return hashlib.sha256(ad).digest()[:NONCE_BYTES]


def data_ids_bytes(ids: list[int]) -> bytes:
    return b"".join(struct.pack(">Q", int(t)) for t in ids)


def keyshare_ad(*, user_id: str, pks: list[bytes], analysis_type: str, party: int,
                data_ids: list[int] | None = None, window: tuple[int, int] | None = None,
                alg: str = CIPHER_ALG) -> bytes:
    """Consent context binding one key-share envelope to one use.

    Ad hoc: ``0x01 | uid | PK1 | PK2 | PK3 | data IDs | type | alg | PK_i``;
    streaming replaces the data IDs by ``t_begin | t_end`` under ``0x02``.
    """
    if (data_ids is None) == (window is None):
        raise FormatError("exactly one of data_ids and window is required")
    if len(pks) != 3:
        raise FormatError("three party public keys are required")
    if data_ids is not None:
        head, scope = bytes([MODE_ADHOC]), lp(data_ids_bytes(data_ids))
    else:
        head = bytes([MODE_STREAM])
        scope = lp(struct.pack(">q", int(window[0]))) + lp(struct.pack(">q", int(window[1])))
    return (head + lp(user_id) + b"".join(lp(pk) for pk in pks) + scope
            + lp(analysis_type) + lp(alg) + lp(pks[party - 1]))


def encode_sample(values) -> bytes:
    raw = algebra.fp_encode(np.asarray(values, dtype=np.float64))
    if raw.shape != (SAMPLE_VALUES,):
        raise FormatError(f"a sample has {SAMPLE_VALUES} values, got shape {raw.shape}")
    return raw.astype("<u8").tobytes()


def decode_values(buf: bytes) -> np.ndarray:
    if len(buf) % 8:
        raise FormatError("fixed-point payload must be a multiple of 8 bytes")
    return algebra.fp_decode(np.frombuffer(buf, dtype="<u8").astype(np.uint64))


def split_record(record: bytes) -> tuple[bytes, bytes, bytes]:
    """``nonce | ciphertext | tag`` -> parts, checking the sample layout."""
    if len(record) != RECORD_BYTES:
        raise FormatError(f"record must be {RECORD_BYTES} bytes, got {len(record)}")
    return record[:NONCE_BYTES], record[NONCE_BYTES:-TAG_BYTES], record[-TAG_BYTES:]


def result_bytes(rows: int) -> int:
    return rows * RESULT_ROW_BYTES + TAG_BYTES
