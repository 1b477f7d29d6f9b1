"""Party key pairs and key-share envelopes bound to a consent context."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidKey
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from . import aes, formats
from .errors import FormatError

RSA_BITS = 2048


class ConsentError(Exception):
    """The envelope does not open under the derived context."""

    reason = "consent-context-mismatch"


def generate_keypair() -> rsa.RSAPrivateKey:
    return rsa.generate_private_key(public_exponent=65537, key_size=RSA_BITS)


def public_key_bytes(key: rsa.RSAPublicKey | rsa.RSAPrivateKey) -> bytes:
    """Canonical 256-byte encoding of a party key (the big-endian modulus)."""
    pub = key.public_key() if isinstance(key, rsa.RSAPrivateKey) else key
    n = pub.public_numbers().n
    return n.to_bytes(formats.PUBLIC_KEY_BYTES, "big")


def public_key_from_bytes(raw: bytes) -> rsa.RSAPublicKey:
    if len(raw) != formats.PUBLIC_KEY_BYTES:
        raise FormatError("public keys are 256 bytes")
    return rsa.RSAPublicNumbers(65537, int.from_bytes(raw, "big")).public_key()


def private_key_pem(key: rsa.RSAPrivateKey) -> bytes:
    return key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
                             serialization.NoEncryption())


def load_private_key(pem: bytes) -> rsa.RSAPrivateKey:
    return serialization.load_pem_private_key(pem, password=None)


def _oaep(ad: bytes) -> padding.OAEP:
    return padding.OAEP(mgf=padding.MGF1(hashes.SHA256()), algorithm=hashes.SHA256(),
                        label=hashlib.sha256(ad).digest())


def wrap(share: bytes, ad: bytes, pk: bytes) -> bytes:
    return public_key_from_bytes(pk).encrypt(share, _oaep(ad))


def unwrap_key_share(envelope: bytes, ad: bytes, sk: rsa.RSAPrivateKey) -> bytes:
    """Open an envelope; any context mismatch raises :class:`ConsentError`."""
    if len(envelope) != formats.ENVELOPE_BYTES:
        raise ConsentError("envelope must be 256 bytes")
    try:
        share = sk.decrypt(envelope, _oaep(ad))
    except (ValueError, InvalidKey) as exc:
        raise ConsentError("envelope does not open under this context") from exc
    if len(share) != formats.KEY_SCHEDULE_BYTES:
        raise ConsentError("unexpected key-share length")
    return share


def split_schedule(key: bytes, rng=None) -> list[bytes]:
    """XOR-split the expanded AES-128 schedule into three 176-byte shares."""
    sched = np.frombuffer(aes.expand_key(key), dtype=np.uint8)
    r1 = np.frombuffer(os.urandom(176) if rng is None else rng.bytes(176), dtype=np.uint8)
    r2 = np.frombuffer(os.urandom(176) if rng is None else rng.bytes(176), dtype=np.uint8)
    return [r1.tobytes(), r2.tobytes(), (sched ^ r1 ^ r2).tobytes()]


@dataclass(frozen=True)
class ConsentContext:
    """Everything a key share is bound to, minus the party index."""

    user_id: str
    pks: tuple[bytes, bytes, bytes]
    analysis_type: str
    data_ids: tuple[int, ...] | None = None
    window: tuple[int, int] | None = None
    alg: str = formats.CIPHER_ALG

    def ad(self, party: int) -> bytes:
        return formats.keyshare_ad(
            user_id=self.user_id, pks=list(self.pks), analysis_type=self.analysis_type, party=party,
            data_ids=None if self.data_ids is None else list(self.data_ids),
            window=self.window, alg=self.alg,
        )


def make_keyshares(key: bytes, ctx: ConsentContext, rng=None) -> list[bytes]:
    """Three 256-byte envelopes, envelope ``i`` readable only by party ``i`` in ``ctx``."""
    shares = split_schedule(key, rng)
    return [wrap(shares[i - 1], ctx.ad(i), ctx.pks[i - 1]) for i in (1, 2, 3)]
