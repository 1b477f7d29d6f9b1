"""Data-owner tooling: consent envelopes and result decryption."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import formats
from .keys import ConsentContext, make_keyshares
from .schemas import AnalysisCreate, b64e


class ResultTampered(Exception):
    """The result ciphertext failed authentication (modified or wrong context)."""


@dataclass
class Prediction:
    logits: np.ndarray  # (rows, 5) decoded fixed-point scores

    @property
    def classes(self) -> list[int]:
        return [int(i) for i in np.argmax(self.logits, axis=1)]

    @property
    def labels(self) -> list[str]:
        return [formats.CLASS_LABELS[i] for i in self.classes]


def decrypt_result(key: bytes, ciphertext: bytes, *, user_id: str, pks: list[bytes], analysis_id: str,
                   analysis_type: str = "ecg") -> Prediction:
    ad = formats.result_ad(user_id, pks, analysis_id, analysis_type)
    if (len(ciphertext) - formats.TAG_BYTES) % formats.RESULT_ROW_BYTES:
        raise ResultTampered(f"result length {len(ciphertext)} is not 40*rows+16")
    try:
        pt = AESGCM(key).decrypt(formats.result_nonce(ad), ciphertext, ad)
    except InvalidTag:
        raise ResultTampered("result does not authenticate, it may have been modified") from None
    return Prediction(formats.decode_values(pt).reshape(-1, formats.CLASSES))


def adhoc_request(key: bytes, user_id: str, pks: list[bytes], data_ids: list[int],
                  analysis_type: str = "ecg", rng=None) -> AnalysisCreate:
    ctx = ConsentContext(user_id, tuple(pks), analysis_type, data_ids=tuple(data_ids))
    envs = make_keyshares(key, ctx, rng)
    return AnalysisCreate(mode="adhoc", type=analysis_type, data_ids=list(data_ids),
                          envelopes=[b64e(e) for e in envs])


def stream_request(key: bytes, user_id: str, pks: list[bytes], t_begin: int, t_end: int,
                   batch_size: int | None = None, analysis_type: str = "ecg", rng=None) -> AnalysisCreate:
    ctx = ConsentContext(user_id, tuple(pks), analysis_type, window=(t_begin, t_end))
    envs = make_keyshares(key, ctx, rng)
    return AnalysisCreate(mode="stream", type=analysis_type, t_begin=t_begin, t_end=t_end,
                          batch_size=batch_size, envelopes=[b64e(e) for e in envs])
