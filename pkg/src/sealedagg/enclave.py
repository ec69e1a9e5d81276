"""The simulated enclave: key custody, decryption, aggregation, sealing.

EnclaveCore is a plain object; the HTTP surface in sealedagg.service and
the in-process dispatcher both delegate here. Everything that leaves this
object is either public by construction (channel key, quotes, counts) or
sealed to the recipient; stored data keys never appear in any return
value, and decrypted payloads are folded into the running aggregate as
records arrive and then discarded. Upload therefore carries all the
per-record cost (decrypt, parse, fold) while triggering only serializes
and seals finished state, whatever the record volume.

The sealed key-upload channel stands in for attested TLS: callers seal
KeyUploadMsg bytes to the channel public key, and the quote's channel
binding is derived from that same key, so a verifier who checked a quote
knows exactly which key its upload will be readable by.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric import rsa

from . import aggregation, attestation, crypto, wire
from .aggregation import AggregationSpec
from .attestation import AttestationQuote, EnclaveIdentity, Measurement
from .crypto import DataKey, RsaKeyPair, SigningKeyPair
from .errors import ArithmeticOverflow, DecryptionError, DegenerateInput

logger = logging.getLogger(__name__)

_ZERO_DIGEST = bytes(32)


def build_identity(
    spec: AggregationSpec,
    recipient_pub: rsa.RSAPublicKey,
    model_bytes: bytes | None = None,
    protocol_version: int = attestation.PROTOCOL_VERSION,
) -> EnclaveIdentity:
    """Compute the identity a deployment publishes and a quote attests to."""
    return EnclaveIdentity(
        protocol_version=protocol_version,
        aggregation_spec_digest=aggregation.spec_digest(spec),
        recipient_pub_digest=crypto.sha256(crypto.public_key_der(recipient_pub)),
        model_digest=crypto.sha256(model_bytes) if model_bytes else _ZERO_DIGEST,
    )


@dataclass
class _RecordCounters:
    accepted: int = 0
    skipped_no_key: int = 0
    failed_decrypt: int = 0


class EnclaveCore:
    """One deployed enclave instance.

    Args:
        spec: the aggregation this instance runs.
        recipient_pub: RSA public key results are sealed to.
        manufacturer: the simulated TEE vendor's signing pair; only its
            endorsement of this instance's TEE key is retained.
        model_bytes: exact bytes of the embedded model file, when the
            aggregation carries one (hashed into the identity).
        channel_keypair / tee_signing: override the generated keys, e.g.
            in tests. Fresh instances get fresh channel keys, so their
            quotes have distinct channel bindings.
    """

    def __init__(
        self,
        spec: AggregationSpec,
        recipient_pub: rsa.RSAPublicKey,
        manufacturer: SigningKeyPair,
        model_bytes: bytes | None = None,
        *,
        channel_keypair: RsaKeyPair | None = None,
        tee_signing: SigningKeyPair | None = None,
        protocol_version: int = attestation.PROTOCOL_VERSION,
    ):
        self._spec = spec
        self._recipient_pub = recipient_pub
        self._identity = build_identity(spec, recipient_pub, model_bytes, protocol_version)
        self._measurement = attestation.measure(self._identity)
        self._channel = channel_keypair or crypto.generate_rsa_keypair()
        self._tee_signing = tee_signing or crypto.generate_signing_keypair()
        self._root_signature = attestation.endorse_tee_key(
            manufacturer, self._tee_signing.public_raw()
        )
        self._keys: dict[str, DataKey] = {}
        self._fold = aggregation.make_accumulator(spec)
        self._included_users: set[str] = set()
        self._parsed_count = 0
        self._parse_failures = 0
        self._counters = _RecordCounters()
        self._lock = threading.RLock()

    # -- public facts -------------------------------------------------

    @property
    def identity(self) -> EnclaveIdentity:
        return self._identity

    @property
    def measurement(self) -> Measurement:
        return self._measurement

    def channel_pub_der(self) -> bytes:
        return self._channel.public_der()

    @property
    def key_count(self) -> int:
        with self._lock:
            return len(self._keys)

    @property
    def record_count(self) -> int:
        """Records decrypted and folded (or discarded as unparseable)."""
        with self._lock:
            return self._parsed_count + self._parse_failures

    # -- protocol handlers ---------------------------------------------

    def handle_channel_info(self) -> wire.ChannelInfoMsg:
        return wire.ChannelInfoMsg(channel_pub_b64=wire.b64e(self.channel_pub_der()))

    def handle_attest(self, msg: wire.AttestChallengeMsg) -> wire.AttestResponseMsg:
        """Issue a quote over the caller's nonce.

        The channel binding is always derived from this instance's own
        channel key; a caller cannot ask for a quote bound to someone
        else's channel, which is what makes the quote useful against
        relays.
        """
        nonce = wire.b64d(msg.nonce_b64, length=attestation.NONCE_BYTES)
        binding = attestation.channel_binding(self.channel_pub_der())
        with self._lock:
            quote: AttestationQuote = attestation.issue_quote(
                self._tee_signing,
                self._root_signature,
                self._measurement,
                binding,
                nonce,
            )
        return wire.AttestResponseMsg(quote_b64=wire.b64e(quote.to_bytes()))

    def handle_sealed_key_upload(self, msg: wire.SealedBoxMsg) -> wire.KeyUploadAckMsg:
        """Open a key upload sealed to the channel key and store it.

        Raises:
            OpenError: the envelope was not sealed to this channel key or
                was tampered with.
            DecodeError: the envelope opened but did not contain a valid
                KeyUploadMsg.
        """
        payload = crypto.open_result(self._channel.private_key, wire.sealed_from_msg(msg))
        upload = wire.decode(payload, wire.KeyUploadMsg)
        return self.handle_key_upload(upload)

    def handle_key_upload(self, msg: wire.KeyUploadMsg) -> wire.KeyUploadAckMsg:
        """Store a user's data key; re-uploads replace the previous key."""
        key = DataKey(wire.b64d(msg.key_b64, length=crypto.KEY_BYTES))
        with self._lock:
            self._keys[msg.user_id] = key
        return wire.KeyUploadAckMsg(stored=True)

    def handle_data_batch(self, msg: wire.DataBatchMsg) -> wire.UploadAckMsg:
        """Decrypt and fold every record whose user already released a key.

        Records without a stored key are skipped and counted; records
        whose ciphertext fails to decrypt are counted separately. Both
        are visible in the returned ack and in the trigger-time counts,
        never fatal. Decrypted payloads that parse go straight into the
        running aggregate; nothing decrypted is retained.
        """
        ack = wire.UploadAckMsg()
        decrypted: list[tuple[str, bytes]] = []
        with self._lock:
            keys = dict(self._keys)
        for record_msg in msg.records:
            key = keys.get(record_msg.user_id)
            if key is None:
                ack.skipped_no_key += 1
                continue
            record = wire.record_from_msg(record_msg)
            try:
                payload = crypto.decrypt_record(key, record)
            except DecryptionError:
                ack.failed_decrypt += 1
                continue
            decrypted.append((record.user_id, payload))
            ack.accepted += 1
        with self._lock:
            for user_id, payload in decrypted:
                value = aggregation.parse_payload(self._spec, payload)
                if value is None:
                    self._parse_failures += 1
                else:
                    self._fold.add(value)
                    self._included_users.add(user_id)
                    self._parsed_count += 1
            self._counters.accepted += ack.accepted
            self._counters.skipped_no_key += ack.skipped_no_key
            self._counters.failed_decrypt += ack.failed_decrypt
        if ack.accepted and self._parse_failures:
            logger.debug(
                "data batch: %d records so far failed payload parsing",
                self._parse_failures,
            )
        return ack

    def handle_trigger(self, msg: wire.TriggerMsg) -> wire.ResultMsg:
        """Serialize the running aggregate and seal it to the recipient.

        The sealed plaintext is the one-line result document (result text
        plus a trailing newline); aggregation failures seal an
        ``error:<code>`` report instead of aborting the round-trip.
        Triggering is repeatable: it reads the accumulated state without
        consuming it.
        """
        with self._lock:
            included_user_count = len(self._included_users)
            record_count = self._parsed_count
            try:
                result = self._fold.result()
                text = aggregation.serialize_result(self._spec, result)
            except DegenerateInput:
                text = aggregation.error_report_text("degenerate-input")
            except ArithmeticOverflow:
                text = aggregation.error_report_text("arithmetic-error")
        document = (text + "\n").encode("utf-8")
        sealed = crypto.seal_result(self._recipient_pub, document)
        box = wire.sealed_to_msg(sealed)
        return wire.ResultMsg(
            wrapped_key_b64=box.wrapped_key_b64,
            iv_b64=box.iv_b64,
            payload_ct_b64=box.payload_ct_b64,
            included_user_count=included_user_count,
            record_count=record_count,
        )

    # -- bench support --------------------------------------------------

    def reset_records(self) -> None:
        """Drop the accumulated aggregate (keys are kept).

        Exists for iterated benchmark rounds that re-upload the same
        deployed data against a long-running instance; it is not part of
        the HTTP surface.
        """
        with self._lock:
            self._fold = aggregation.make_accumulator(self._spec)
            self._included_users.clear()
            self._parsed_count = 0
            self._parse_failures = 0


def provision_enclave(
    spec: AggregationSpec,
    recipient_pub: rsa.RSAPublicKey,
    manufacturer: SigningKeyPair,
    model_bytes: bytes | None = None,
    **kwargs,
) -> tuple[EnclaveIdentity, EnclaveCore]:
    """Create a deployment and return (published identity, running core)."""
    core = EnclaveCore(spec, recipient_pub, manufacturer, model_bytes, **kwargs)
    return core.identity, core
