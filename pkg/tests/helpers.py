"""Shared test scaffolding: transcript-recording protocol stacks and
byte-level secret scanning."""

from __future__ import annotations

import base64
from dataclasses import dataclass

from sealedagg import crypto
from sealedagg.actors import RecipientActor, UserActor
from sealedagg.clients import (
    EnclaveClient,
    LocalTransport,
    MiddlewareClient,
    Transcript,
)
from sealedagg.middleware import MiddlewareCore
from sealedagg.service.dispatch import enclave_dispatch, middleware_dispatch


def b64_windows(needle: bytes) -> list[bytes]:
    """Substrings that appear in any base64 stream embedding ``needle``.

    A needle at arbitrary byte offset k inside a larger encoded blob is
    encoded in one of three phases (k mod 3). For each phase, encode with
    that alignment and keep the interior 4-char groups, which are fully
    determined by the needle bytes alone.
    """
    windows = []
    for phase in range(3):
        enc = base64.b64encode(b"\x00" * phase + needle)
        start = 4 if phase else 0
        trailing = (phase + len(needle)) % 3
        end = len(enc) - (4 if trailing else 0)
        windows.append(enc[start:end])
    return windows


def leaks_secret(haystack: bytes, secret: bytes) -> bool:
    """True when ``secret`` appears raw, hex-encoded, or base64-embedded."""
    if secret in haystack:
        return True
    if secret.hex().encode() in haystack or secret.hex().upper().encode() in haystack:
        return True
    return any(w in haystack for w in b64_windows(secret))


@dataclass
class RecordedStack:
    """One deployment where every byte to/from each service is captured."""

    identity: object
    enclave_core: object
    enclave: EnclaveClient
    enclave_transcript: Transcript
    middleware_core: MiddlewareCore
    middleware: MiddlewareClient
    middleware_transcript: Transcript
    recipient: RecipientActor
    manufacturer: crypto.SigningKeyPair

    def new_user(self, user_id: str, key: crypto.DataKey | None = None) -> UserActor:
        return UserActor(
            user_id,
            self.middleware,
            self.identity,
            self.manufacturer.public_key,
            data_key=key,
        )


def build_recorded_stack(
    spec,
    *,
    manufacturer: crypto.SigningKeyPair | None = None,
    recipient_pair: crypto.RsaKeyPair | None = None,
    model_bytes: bytes | None = None,
) -> RecordedStack:
    manufacturer = manufacturer or crypto.generate_signing_keypair()
    recipient = RecipientActor(
        recipient_pair or crypto.generate_rsa_keypair(), manufacturer.public_key
    )
    identity, enclave_core = recipient.deploy(spec, manufacturer, model_bytes)
    enclave_transcript = Transcript()
    enclave = EnclaveClient(
        LocalTransport(enclave_dispatch(enclave_core), enclave_transcript)
    )
    middleware_core = MiddlewareCore()
    middleware_transcript = Transcript()
    middleware = MiddlewareClient(
        LocalTransport(
            middleware_dispatch(middleware_core, enclave), middleware_transcript
        )
    )
    return RecordedStack(
        identity=identity,
        enclave_core=enclave_core,
        enclave=enclave,
        enclave_transcript=enclave_transcript,
        middleware_core=middleware_core,
        middleware=middleware,
        middleware_transcript=middleware_transcript,
        recipient=recipient,
        manufacturer=manufacturer,
    )
