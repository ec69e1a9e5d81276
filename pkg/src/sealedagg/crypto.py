"""Cryptographic primitives for the aggregation protocol.

Three families live here:

* per-user symmetric record encryption (AES-256-CBC with PKCS#7 padding),
* hybrid sealing to an RSA public key (fresh AES key wrapped with
  OAEP-SHA256), used both for the recipient's result and for key uploads
  to the enclave channel,
* Ed25519 signatures for the attestation chain.

All failures on the decrypt/open side are deliberately uniform: a caller
cannot tell a wrong key from corrupted bytes.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field
from typing import Callable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, padding as sym_padding, serialization
from cryptography.hazmat.primitives.asymmetric import padding as asym_padding, rsa
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import DecryptionError, InvalidArgument, OpenError, SizeError

AES_BLOCK = 16
KEY_BYTES = 32
IV_BYTES = 16
RSA_KEY_BITS = 2048
SIGNATURE_BYTES = 64
VERIFY_KEY_BYTES = 32

#: Sealed payloads larger than this are refused outright.
MAX_SEAL_PAYLOAD = 16 * 1024 * 1024

_OAEP = asym_padding.OAEP(
    mgf=asym_padding.MGF1(algorithm=hashes.SHA256()),
    algorithm=hashes.SHA256(),
    label=None,
)

RandomSource = Callable[[int], bytes]


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# ---------------------------------------------------------------------------
# Symmetric record encryption
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataKey:
    """A user's 256-bit AES key. Its repr never shows the key bytes."""

    key_bytes: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if not isinstance(self.key_bytes, bytes) or len(self.key_bytes) != KEY_BYTES:
            raise InvalidArgument(f"data key must be exactly {KEY_BYTES} bytes")

    def __repr__(self) -> str:  # pragma: no cover - trivial
        return "DataKey(<redacted>)"


@dataclass(frozen=True)
class EncryptedRecord:
    """One encrypted datum as it travels and as the middleware stores it."""

    user_id: str
    iv: bytes
    ciphertext: bytes

    def __post_init__(self) -> None:
        validate_user_id(self.user_id)
        if len(self.iv) != IV_BYTES:
            raise InvalidArgument(f"iv must be exactly {IV_BYTES} bytes")
        if len(self.ciphertext) == 0 or len(self.ciphertext) % AES_BLOCK != 0:
            raise InvalidArgument(
                "ciphertext length must be a positive multiple of the AES block size"
            )


def validate_user_id(user_id: str) -> None:
    """Reject empty or non-printable user identifiers."""
    if not isinstance(user_id, str) or not user_id or not user_id.isprintable():
        raise InvalidArgument("user_id must be a non-empty printable string")


def generate_data_key(rng: RandomSource = secrets.token_bytes) -> DataKey:
    """Draw a fresh 256-bit key from ``rng`` (a CSPRNG by default)."""
    return DataKey(rng(KEY_BYTES))


def encrypt_record(key: DataKey, user_id: str, plaintext: bytes, iv: bytes) -> EncryptedRecord:
    """Encrypt one payload under the user's key.

    Args:
        key: the user's data key.
        user_id: non-empty printable identifier, stored alongside the
            ciphertext so the enclave can pick the right key.
        plaintext: non-empty payload bytes.
        iv: fresh 16-byte initialisation vector; never reuse one per key.

    Returns:
        An EncryptedRecord whose ciphertext length is
        ``16 * ceil((len(plaintext) + 1) / 16)`` (PKCS#7 always pads).
    """
    if not plaintext:
        raise InvalidArgument("plaintext must be non-empty")
    if len(iv) != IV_BYTES:
        raise InvalidArgument(f"iv must be exactly {IV_BYTES} bytes")
    validate_user_id(user_id)
    padder = sym_padding.PKCS7(AES_BLOCK * 8).padder()
    padded = padder.update(plaintext) + padder.finalize()
    enc = Cipher(algorithms.AES(key.key_bytes), modes.CBC(iv)).encryptor()
    ciphertext = enc.update(padded) + enc.finalize()
    return EncryptedRecord(user_id=user_id, iv=iv, ciphertext=ciphertext)


def decrypt_record(key: DataKey, record: EncryptedRecord) -> bytes:
    """Invert encrypt_record.

    Raises:
        DecryptionError: on any failure; wrong key, tampered ciphertext and
            malformed padding all produce the same error.
    """
    dec = Cipher(algorithms.AES(key.key_bytes), modes.CBC(record.iv)).decryptor()
    try:
        padded = dec.update(record.ciphertext) + dec.finalize()
        unpadder = sym_padding.PKCS7(AES_BLOCK * 8).unpadder()
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError:
        raise DecryptionError("decryption failed") from None


# ---------------------------------------------------------------------------
# Hybrid sealing to an RSA public key
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RsaKeyPair:
    """An RSA-2048 key pair (recipient identity or enclave channel key)."""

    private_key: rsa.RSAPrivateKey = field(repr=False)
    public_key: rsa.RSAPublicKey = field(repr=False)

    def public_der(self) -> bytes:
        return public_key_der(self.public_key)


@dataclass(frozen=True)
class SealedResult:
    """Hybrid-encrypted payload only the key-pair owner can open."""

    wrapped_key: bytes
    iv: bytes
    payload_ciphertext: bytes

    def __post_init__(self) -> None:
        if len(self.wrapped_key) != RSA_KEY_BITS // 8:
            raise InvalidArgument("wrapped_key has the wrong length")
        if len(self.iv) != IV_BYTES:
            raise InvalidArgument(f"iv must be exactly {IV_BYTES} bytes")
        if len(self.payload_ciphertext) == 0 or len(self.payload_ciphertext) % AES_BLOCK != 0:
            raise InvalidArgument(
                "payload ciphertext length must be a positive multiple of the block size"
            )


def generate_rsa_keypair() -> RsaKeyPair:
    private = rsa.generate_private_key(public_exponent=65537, key_size=RSA_KEY_BITS)
    return RsaKeyPair(private_key=private, public_key=private.public_key())


def public_key_der(public_key: rsa.RSAPublicKey) -> bytes:
    """Canonical DER (SubjectPublicKeyInfo) encoding of an RSA public key."""
    return public_key.public_bytes(
        encoding=serialization.Encoding.DER,
        format=serialization.PublicFormat.SubjectPublicKeyInfo,
    )


def load_public_key_der(data: bytes) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_der_public_key(data)
    except (ValueError, TypeError) as exc:
        raise InvalidArgument(f"not a DER-encoded public key: {exc}") from None
    if not isinstance(key, rsa.RSAPublicKey):
        raise InvalidArgument("expected an RSA public key")
    return key


def seal_result(recipient_pub: rsa.RSAPublicKey, payload: bytes) -> SealedResult:
    """Seal ``payload`` so that only the holder of the private key opens it.

    A fresh 256-bit AES key encrypts ``sha256(payload) || payload`` in CBC
    mode; the AES key is wrapped under ``recipient_pub`` with OAEP-SHA256.
    The embedded digest makes any tampering with the sealed bytes detectable
    at open time.
    """
    if not payload:
        raise InvalidArgument("payload must be non-empty")
    if len(payload) > MAX_SEAL_PAYLOAD:
        raise SizeError(f"payload exceeds {MAX_SEAL_PAYLOAD} bytes")
    session_key = secrets.token_bytes(KEY_BYTES)
    iv = secrets.token_bytes(IV_BYTES)
    padder = sym_padding.PKCS7(AES_BLOCK * 8).padder()
    padded = padder.update(sha256(payload) + payload) + padder.finalize()
    enc = Cipher(algorithms.AES(session_key), modes.CBC(iv)).encryptor()
    ciphertext = enc.update(padded) + enc.finalize()
    wrapped = recipient_pub.encrypt(session_key, _OAEP)
    return SealedResult(wrapped_key=wrapped, iv=iv, payload_ciphertext=ciphertext)


def open_result(recipient_priv: rsa.RSAPrivateKey, sealed: SealedResult) -> bytes:
    """Invert seal_result.

    Raises:
        OpenError: on any failure. Wrong private key, a tampered wrapped
            key, a flipped ciphertext bit and a corrupted digest are all
            reported identically.
    """
    try:
        session_key = recipient_priv.decrypt(sealed.wrapped_key, _OAEP)
    except ValueError:
        raise OpenError("open failed") from None
    if len(session_key) != KEY_BYTES:
        raise OpenError("open failed")
    dec = Cipher(algorithms.AES(session_key), modes.CBC(sealed.iv)).decryptor()
    try:
        padded = dec.update(sealed.payload_ciphertext) + dec.finalize()
        unpadder = sym_padding.PKCS7(AES_BLOCK * 8).unpadder()
        plain = unpadder.update(padded) + unpadder.finalize()
    except ValueError:
        raise OpenError("open failed") from None
    if len(plain) < 32:
        raise OpenError("open failed")
    digest, payload = plain[:32], plain[32:]
    if digest != sha256(payload):
        raise OpenError("open failed")
    return payload


# ---------------------------------------------------------------------------
# Signatures (attestation chain)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SigningKeyPair:
    """An Ed25519 key pair (TEE signing key or manufacturer root)."""

    private_key: Ed25519PrivateKey = field(repr=False)
    public_key: Ed25519PublicKey = field(repr=False)

    def public_raw(self) -> bytes:
        return verify_key_raw(self.public_key)


def generate_signing_keypair() -> SigningKeyPair:
    private = Ed25519PrivateKey.generate()
    return SigningKeyPair(private_key=private, public_key=private.public_key())


def verify_key_raw(public_key: Ed25519PublicKey) -> bytes:
    return public_key.public_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PublicFormat.Raw,
    )


def load_verify_key(raw: bytes) -> Ed25519PublicKey:
    try:
        return Ed25519PublicKey.from_public_bytes(raw)
    except (ValueError, TypeError) as exc:
        raise InvalidArgument(f"not a raw Ed25519 public key: {exc}") from None


def sign(signing_priv: Ed25519PrivateKey, message: bytes) -> bytes:
    """Sign ``message``; Ed25519 signatures are 64 bytes and deterministic."""
    return signing_priv.sign(message)


def verify(verify_pub: Ed25519PublicKey, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` is valid; malformed signatures are just False."""
    if len(signature) != SIGNATURE_BYTES:
        return False
    try:
        verify_pub.verify(signature, message)
        return True
    except InvalidSignature:
        return False
