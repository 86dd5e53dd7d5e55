"""Cryptographic primitives: SHA-1 digests, RSA-OAEP encryption, PKCS#1 v1.5 signatures.

Every other component goes through these functions. Digests and signatures are
rendered as lowercase hex; ciphertexts as one 256-byte OAEP block per reading.
"""

import logging
import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

from Crypto.Cipher import PKCS1_OAEP
from Crypto.Hash import SHA1
from Crypto.PublicKey import RSA
from Crypto.PublicKey.RSA import RsaKey
from Crypto.Random import get_random_bytes
from Crypto.Signature import pkcs1_15

from ..errors import DecryptFailure, PlaintextTooLarge

logger = logging.getLogger(__name__)

KEY_BITS = 2048
# Single seam for the hash algorithm; all tests pin SHA-1.
HASH = SHA1
# Plaintext limit per OAEP block (SHA-1 padding alone would admit 214 bytes).
OAEP_CAPACITY = 190

RandFunc = Callable[[int], bytes]


class SeededBytes:
    """Deterministic byte source for key generation and OAEP padding."""

    def __init__(self, seed: object):
        self._rng = random.Random(str(seed))

    def __call__(self, n: int) -> bytes:
        return self._rng.getrandbits(8 * n).to_bytes(n, "big") if n else b""


@dataclass(frozen=True)
class KeyPair:
    """RSA keypair labelled with its owner's identity."""

    owner_id: str
    private_key: RsaKey = field(repr=False)

    @property
    def public_key(self) -> RsaKey:
        return self.private_key.publickey()

    @property
    def modulus_bits(self) -> int:
        return self.private_key.size_in_bits()

    def export_private(self) -> bytes:
        return self.private_key.export_key(format="DER")

    def export_public(self) -> bytes:
        return self.public_key.export_key(format="DER")


def digest(data: bytes) -> str:
    """Return the 160-bit hash of data as 40 lowercase hex characters."""
    return HASH.new(data).hexdigest()


@lru_cache(maxsize=None)
def generate_keypair(owner_id: str, seed: Optional[int] = None) -> KeyPair:
    """Generate a 2048-bit keypair; deterministic when seed is given."""
    randfunc = SeededBytes(f"{owner_id}:{seed}") if seed is not None else get_random_bytes
    logger.debug("Generating %d-bit key for %s", KEY_BITS, owner_id)
    return KeyPair(owner_id=owner_id, private_key=RSA.generate(KEY_BITS, randfunc=randfunc))


def encrypt(recipient: RsaKey, plaintext: bytes, randfunc: Optional[RandFunc] = None) -> str:
    """Encrypt plaintext into one OAEP block for recipient, as hex."""
    if len(plaintext) > OAEP_CAPACITY:
        raise PlaintextTooLarge(len(plaintext), OAEP_CAPACITY)
    cipher = PKCS1_OAEP.new(recipient, hashAlgo=HASH, randfunc=randfunc or get_random_bytes)
    return cipher.encrypt(plaintext).hex()


def decrypt(owner: RsaKey, ciphertext: str) -> bytes:
    """Recover the plaintext; any tampering or wrong key raises DecryptFailure."""
    try:
        raw = bytes.fromhex(ciphertext)
        return PKCS1_OAEP.new(owner, hashAlgo=HASH).decrypt(raw)
    except (ValueError, TypeError) as exc:
        raise DecryptFailure(str(exc)) from exc


def sign(owner: RsaKey, value: str) -> str:
    """Sign a digest (its hex text) with PKCS#1 v1.5."""
    return pkcs1_15.new(owner).sign(HASH.new(value.encode("ascii"))).hex()


def verify(signer: RsaKey, value: str, signature: str) -> bool:
    """True iff signature is signer's signature over value; never raises."""
    try:
        pkcs1_15.new(signer).verify(HASH.new(value.encode("ascii")), bytes.fromhex(signature))
        return True
    except (ValueError, TypeError, UnicodeEncodeError):
        return False
