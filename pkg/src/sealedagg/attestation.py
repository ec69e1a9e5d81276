"""Simulated remote attestation.

The enclave's identity (what code, which aggregation, whose result key,
which model) is hashed into a 32-byte measurement. A quote binds that
measurement, the enclave's channel key and a verifier-chosen nonce under
the TEE's Ed25519 signing key, which in turn is endorsed by a simulated
manufacturer root key. Verifiers hold the manufacturer public key as
their trust anchor and recompute the expected measurement themselves.

Byte layouts are fixed and documented in docs/protocol.md; every field is
fixed-length so the serialization is trivially unambiguous.
"""

from __future__ import annotations

import hmac
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from . import crypto
from .crypto import SigningKeyPair, sha256
from .errors import DecodeError, InvalidArgument

PROTOCOL_VERSION = 1

MEASUREMENT_BYTES = 32
BINDING_BYTES = 32
NONCE_BYTES = 16
QUOTE_BYTES = (
    MEASUREMENT_BYTES
    + BINDING_BYTES
    + NONCE_BYTES
    + crypto.VERIFY_KEY_BYTES
    + crypto.SIGNATURE_BYTES
    + crypto.SIGNATURE_BYTES
)
_SIGNED_PREFIX = MEASUREMENT_BYTES + BINDING_BYTES + NONCE_BYTES + crypto.VERIFY_KEY_BYTES


def _check_len(name: str, value: bytes, expected: int) -> None:
    if not isinstance(value, bytes) or len(value) != expected:
        raise InvalidArgument(f"{name} must be exactly {expected} bytes")


@dataclass(frozen=True)
class EnclaveIdentity:
    """Everything a user must agree to before releasing a key.

    Attributes:
        protocol_version: version of this wire/identity format.
        aggregation_spec_digest: SHA-256 of the canonical aggregation spec.
        recipient_pub_digest: SHA-256 of the recipient public key (DER).
        model_digest: SHA-256 of the embedded model bytes, or 32 zero bytes
            when the aggregation carries no model.
    """

    protocol_version: int
    aggregation_spec_digest: bytes
    recipient_pub_digest: bytes
    model_digest: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.protocol_version, int) or not (0 <= self.protocol_version < 2**32):
            raise InvalidArgument("protocol_version must fit an unsigned 32-bit integer")
        _check_len("aggregation_spec_digest", self.aggregation_spec_digest, 32)
        _check_len("recipient_pub_digest", self.recipient_pub_digest, 32)
        _check_len("model_digest", self.model_digest, 32)


@dataclass(frozen=True)
class Measurement:
    digest: bytes

    def __post_init__(self) -> None:
        _check_len("measurement digest", self.digest, MEASUREMENT_BYTES)


def canonical_identity_bytes(identity: EnclaveIdentity) -> bytes:
    """Length-prefixed field concatenation; the byte-exact measurement input."""
    version = struct.pack(">I", identity.protocol_version)
    out = bytearray()
    for piece in (
        version,
        identity.aggregation_spec_digest,
        identity.recipient_pub_digest,
        identity.model_digest,
    ):
        out += struct.pack(">I", len(piece))
        out += piece
    return bytes(out)


def measure(identity: EnclaveIdentity) -> Measurement:
    """The 32-byte measurement a quote attests to."""
    return Measurement(sha256(canonical_identity_bytes(identity)))


def channel_binding(channel_pub_der: bytes) -> bytes:
    """Bind a quote to one concrete channel key: SHA-256 of its DER encoding."""
    if not channel_pub_der:
        raise InvalidArgument("channel public key bytes must be non-empty")
    return sha256(channel_pub_der)


@dataclass(frozen=True)
class AttestationQuote:
    """A signed statement: this measured enclave owns this channel, fresh."""

    measurement: Measurement
    channel_binding: bytes
    nonce: bytes
    tee_pub_raw: bytes
    signature: bytes
    root_signature: bytes

    def __post_init__(self) -> None:
        _check_len("channel_binding", self.channel_binding, BINDING_BYTES)
        _check_len("nonce", self.nonce, NONCE_BYTES)
        _check_len("tee_pub_raw", self.tee_pub_raw, crypto.VERIFY_KEY_BYTES)
        _check_len("signature", self.signature, crypto.SIGNATURE_BYTES)
        _check_len("root_signature", self.root_signature, crypto.SIGNATURE_BYTES)

    def signed_payload(self) -> bytes:
        return (
            self.measurement.digest + self.channel_binding + self.nonce + self.tee_pub_raw
        )

    def to_bytes(self) -> bytes:
        return self.signed_payload() + self.signature + self.root_signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttestationQuote":
        if len(data) != QUOTE_BYTES:
            raise DecodeError(
                f"quote: expected {QUOTE_BYTES} bytes, got {len(data)}"
            )
        off = 0

        def take(n: int) -> bytes:
            nonlocal off
            piece = data[off : off + n]
            off += n
            return piece

        return cls(
            measurement=Measurement(take(MEASUREMENT_BYTES)),
            channel_binding=take(BINDING_BYTES),
            nonce=take(NONCE_BYTES),
            tee_pub_raw=take(crypto.VERIFY_KEY_BYTES),
            signature=take(crypto.SIGNATURE_BYTES),
            root_signature=take(crypto.SIGNATURE_BYTES),
        )


def endorse_tee_key(manufacturer: SigningKeyPair, tee_pub_raw: bytes) -> bytes:
    """The manufacturing step: the root key signs the TEE's public key."""
    _check_len("tee_pub_raw", tee_pub_raw, crypto.VERIFY_KEY_BYTES)
    return crypto.sign(manufacturer.private_key, tee_pub_raw)


def issue_quote(
    tee_signing: SigningKeyPair,
    root_signature: bytes,
    measurement: Measurement,
    binding: bytes,
    nonce: bytes,
) -> AttestationQuote:
    """Produce a quote over (measurement, binding, nonce) with the TEE key.

    ``root_signature`` is the manufacturer's endorsement of the TEE public
    key, obtained once at provisioning via endorse_tee_key.
    """
    _check_len("channel binding", binding, BINDING_BYTES)
    _check_len("nonce", nonce, NONCE_BYTES)
    _check_len("root_signature", root_signature, crypto.SIGNATURE_BYTES)
    tee_pub_raw = tee_signing.public_raw()
    payload = measurement.digest + binding + nonce + tee_pub_raw
    return AttestationQuote(
        measurement=measurement,
        channel_binding=binding,
        nonce=nonce,
        tee_pub_raw=tee_pub_raw,
        signature=crypto.sign(tee_signing.private_key, payload),
        root_signature=root_signature,
    )


@dataclass(frozen=True)
class QuoteVerification:
    """Outcome of verify_quote; ``reason`` names the first failed check."""

    accepted: bool
    reason: str | None = None


_REJECT_ORDER = ("chain-invalid", "signature-invalid", "measurement-mismatch",
                 "binding-mismatch", "nonce-mismatch")


def verify_quote(
    manufacturer_pub: Ed25519PublicKey,
    quote: AttestationQuote,
    expected_measurement: Measurement,
    expected_binding: bytes,
    expected_nonce: bytes,
) -> QuoteVerification:
    """Check a quote against the verifier's own expectations.

    The checks run in a fixed order (key chain, quote signature,
    measurement, channel binding, nonce) and the first failure is
    reported; a quote is accepted only if all five hold.
    """
    try:
        tee_pub = crypto.load_verify_key(quote.tee_pub_raw)
    except InvalidArgument:
        return QuoteVerification(False, "chain-invalid")
    if not crypto.verify(manufacturer_pub, quote.tee_pub_raw, quote.root_signature):
        return QuoteVerification(False, "chain-invalid")
    if not crypto.verify(tee_pub, quote.signed_payload(), quote.signature):
        return QuoteVerification(False, "signature-invalid")
    if quote.measurement.digest != expected_measurement.digest:
        return QuoteVerification(False, "measurement-mismatch")
    if not hmac.compare_digest(quote.channel_binding, expected_binding):
        return QuoteVerification(False, "binding-mismatch")
    if not hmac.compare_digest(quote.nonce, expected_nonce):
        return QuoteVerification(False, "nonce-mismatch")
    return QuoteVerification(True, None)
