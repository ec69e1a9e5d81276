"""The human ends of the protocol: data-owning users and the recipient.

A user never talks to the enclave until attestation has convinced them
that the right code, serving the right recipient, owns the channel key;
only then does the data key travel, and only sealed to that channel key.
The recipient deploys the enclave, triggers aggregation and is the only
party able to open the sealed result.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from . import aggregation, attestation, crypto, wire
from .attestation import EnclaveIdentity, Measurement
from .clients import EnclaveClient, MiddlewareClient
from .crypto import DataKey, RsaKeyPair, SigningKeyPair
from .enclave import EnclaveCore, provision_enclave
from .errors import DecodeError, IntegrityError, OpenError


@dataclass(frozen=True)
class AuthorizationOutcome:
    """Whether a user released their key, and if not, why not."""

    authorized: bool
    reason: str | None = None


class UserActor:
    """One data owner: their key, their middleware, their trust anchor.

    Args:
        user_id: non-empty printable identifier.
        middleware: client for the ciphertext store.
        identity: the published deployment identity this user agreed to.
        trust_anchor: the TEE manufacturer's public verify key.
        data_key: pre-existing key, e.g. loaded from disk; a fresh one is
            drawn when omitted.
    """

    def __init__(
        self,
        user_id: str,
        middleware: MiddlewareClient | None,
        identity: EnclaveIdentity,
        trust_anchor: Ed25519PublicKey,
        data_key: DataKey | None = None,
    ):
        crypto.validate_user_id(user_id)
        self.user_id = user_id
        self.data_key = data_key or crypto.generate_data_key()
        self._middleware = middleware
        self._identity = identity
        self._trust_anchor = trust_anchor
        self._expected_measurement: Measurement = attestation.measure(identity)
        self._authorized_bindings: set[bytes] = set()

    def encrypt_payload(self, payload: bytes) -> wire.EncryptedRecordMsg:
        """Encrypt one payload under this user's key with a fresh IV."""
        record = crypto.encrypt_record(
            self.data_key, self.user_id, payload, secrets.token_bytes(crypto.IV_BYTES)
        )
        return wire.record_to_msg(record)

    def submit(self, payload: bytes) -> wire.IngestAckMsg:
        """Encrypt and hand one payload to the middleware."""
        if self._middleware is None:
            raise IntegrityError("user has no middleware client")
        return self._middleware.ingest(self.encrypt_payload(payload))

    def authorize(self, enclave: EnclaveClient) -> AuthorizationOutcome:
        """Attest the enclave and, only on success, release the data key.

        The check recomputes the expected measurement from the published
        identity, fetches the channel key, binds a fresh nonce, and
        verifies the quote chain against the manufacturer trust anchor.
        On any verification failure the key is not sent and the reason is
        reported. Authorization is one-shot per enclave channel: calling
        again for an already-authorized channel does nothing.
        """
        channel_der = enclave.channel_pub_der()
        binding = attestation.channel_binding(channel_der)
        if binding in self._authorized_bindings:
            return AuthorizationOutcome(authorized=True, reason="already-authorized")
        nonce = secrets.token_bytes(attestation.NONCE_BYTES)
        try:
            quote = enclave.attest_quote(nonce)
        except DecodeError:
            return AuthorizationOutcome(authorized=False, reason="malformed-quote")
        verdict = attestation.verify_quote(
            self._trust_anchor, quote, self._expected_measurement, binding, nonce
        )
        if not verdict.accepted:
            return AuthorizationOutcome(authorized=False, reason=verdict.reason)
        upload = wire.KeyUploadMsg(
            user_id=self.user_id, key_b64=wire.b64e(self.data_key.key_bytes)
        )
        sealed = crypto.seal_result(
            crypto.load_public_key_der(channel_der), wire.encode(upload)
        )
        enclave.upload_sealed_key(wire.sealed_to_msg(sealed))
        self._authorized_bindings.add(binding)
        return AuthorizationOutcome(authorized=True, reason=None)


@dataclass
class CollectedResult:
    """What the recipient ends up holding after a successful collect."""

    value: object
    result_text: str
    included_user_count: int
    record_count: int


class RecipientActor:
    """The analyst: deploys, verifies, triggers, opens."""

    def __init__(
        self,
        keypair: RsaKeyPair,
        trust_anchor: Ed25519PublicKey,
        identity: EnclaveIdentity | None = None,
    ):
        """``identity`` may be preloaded when the deployment happened
        elsewhere (e.g. a served enclave this actor only talks to)."""
        self.keypair = keypair
        self._trust_anchor = trust_anchor
        self._identity: EnclaveIdentity | None = identity

    @property
    def identity(self) -> EnclaveIdentity | None:
        return self._identity

    def deploy(
        self,
        spec: aggregation.AggregationSpec,
        manufacturer: SigningKeyPair,
        model_bytes: bytes | None = None,
        **kwargs,
    ) -> tuple[EnclaveIdentity, EnclaveCore]:
        """Provision an enclave running ``spec`` sealed to this recipient."""
        identity, core = provision_enclave(
            spec, self.keypair.public_key, manufacturer, model_bytes, **kwargs
        )
        self._identity = identity
        return identity, core

    def verify_enclave(self, enclave: EnclaveClient) -> attestation.QuoteVerification:
        """Recipient-side attestation, same checks as a user's."""
        if self._identity is None:
            raise IntegrityError("recipient has not deployed an enclave")
        channel_der = enclave.channel_pub_der()
        binding = attestation.channel_binding(channel_der)
        nonce = secrets.token_bytes(attestation.NONCE_BYTES)
        try:
            quote = enclave.attest_quote(nonce)
        except DecodeError:
            return attestation.QuoteVerification(False, "malformed-quote")
        return attestation.verify_quote(
            self._trust_anchor,
            quote,
            attestation.measure(self._identity),
            binding,
            nonce,
        )

    def collect(
        self,
        enclave: EnclaveClient,
        spec: aggregation.AggregationSpec,
        *,
        verify: bool = True,
    ) -> CollectedResult:
        """Trigger, open and parse the aggregate.

        Raises:
            IntegrityError: attestation failed (when ``verify``), the
                sealed result would not open, or the opened document does
                not match the aggregation's serialization.
            SealedErrorReport: the enclave reported an aggregation error
                (e.g. a degenerate least-squares input).
        """
        if verify:
            verdict = self.verify_enclave(enclave)
            if not verdict.accepted:
                raise IntegrityError(f"enclave attestation failed: {verdict.reason}")
        return self.open_reply(enclave.trigger(), spec)

    def open_reply(
        self, reply: wire.ResultMsg, spec: aggregation.AggregationSpec
    ) -> CollectedResult:
        """Open and parse an already-received trigger reply."""
        try:
            document = crypto.open_result(
                self.keypair.private_key, wire.sealed_from_result_msg(reply)
            )
        except OpenError:
            raise IntegrityError("sealed result failed to open") from None
        text = document.decode("utf-8")
        if not text.endswith("\n"):
            raise IntegrityError("sealed result document is not newline-terminated")
        text = text[:-1]
        try:
            value = aggregation.parse_result_text(spec, text)
        except ValueError as exc:
            raise IntegrityError(f"result text does not parse: {exc}") from None
        return CollectedResult(
            value=value,
            result_text=text,
            included_user_count=reply.included_user_count,
            record_count=reply.record_count,
        )
