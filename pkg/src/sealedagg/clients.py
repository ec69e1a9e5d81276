"""Typed clients over interchangeable transports.

A transport moves (method, path, body bytes) to a service and returns
(status, body bytes). Two implementations exist:

* HttpTransport wraps any httpx-compatible client (a real
  ``httpx.Client(base_url=...)`` or starlette's TestClient), so the CLI
  and the in-process FastAPI apps share one code path.
* LocalTransport calls an in-process dispatch function directly. It is
  byte-faithful: requests are encoded and responses decoded exactly as
  over HTTP, just without a socket. Heavy simulations use it.

Both record their raw traffic into an optional Transcript, which the
security tests scan for key material that must never travel in the
clear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

from . import wire
from .attestation import AttestationQuote
from .errors import (
    DecodeError,
    InvalidArgument,
    OpenError,
    SealedAggError,
    SizeError,
    TransportError,
)

#: (method, path, body or None) -> (status, response body)
DispatchFn = Callable[[str, str, bytes | None], tuple[int, bytes]]


@dataclass(frozen=True)
class TranscriptEntry:
    direction: str  # "request" | "response"
    method: str
    path: str
    body: bytes


@dataclass
class Transcript:
    """Everything a transport sent and received, in order."""

    entries: list[TranscriptEntry] = field(default_factory=list)

    def record(self, direction: str, method: str, path: str, body: bytes) -> None:
        self.entries.append(TranscriptEntry(direction, method, path, body))

    def all_bytes(self) -> bytes:
        return b"\n".join(e.body for e in self.entries)

    def request_bytes(self) -> bytes:
        return b"\n".join(e.body for e in self.entries if e.direction == "request")

    def response_bytes(self) -> bytes:
        return b"\n".join(e.body for e in self.entries if e.direction == "response")


class Transport(Protocol):
    def request(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        ...  # pragma: no cover


class LocalTransport:
    def __init__(self, dispatch: DispatchFn, transcript: Transcript | None = None):
        self._dispatch = dispatch
        self.transcript = transcript

    def request(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        if self.transcript is not None:
            self.transcript.record("request", method, path, body or b"")
        status, reply = self._dispatch(method, path, body)
        if self.transcript is not None:
            self.transcript.record("response", method, path, reply)
        return status, reply


class HttpTransport:
    """Adapter over httpx.Client / TestClient; bodies are raw JSON bytes."""

    def __init__(self, client, transcript: Transcript | None = None):
        self._client = client
        self.transcript = transcript

    def request(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        if self.transcript is not None:
            self.transcript.record("request", method, path, body or b"")
        headers = {"content-type": "application/json"} if body is not None else {}
        try:
            response = self._client.request(method, path, content=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"request failed: {exc}") from None
        status, reply = response.status_code, response.content
        if self.transcript is not None:
            self.transcript.record("response", method, path, reply)
        return status, reply


_ERROR_TYPES: dict[str, type[SealedAggError]] = {
    "decode-error": DecodeError,
    "open-failure": OpenError,
    "size-error": SizeError,
    "invalid-argument": InvalidArgument,
}


def raise_for_reply(status: int, body: bytes) -> None:
    """Map a non-2xx reply body back onto the package's exception types."""
    code, message = "transport-error", f"status {status}"
    try:
        err = wire.decode(body, wire.ErrorMsg)
        code, message = err.error.code, err.error.message
    except DecodeError:
        pass
    exc_type = _ERROR_TYPES.get(code, TransportError)
    raise exc_type(f"{code}: {message}")


class _BaseClient:
    def __init__(self, transport: Transport):
        self._transport = transport

    def _get(self, path: str, reply_kind):
        status, body = self._transport.request("GET", path, None)
        if not 200 <= status < 300:
            raise_for_reply(status, body)
        return wire.decode(body, reply_kind)

    def _post(self, path: str, msg, reply_kind):
        status, body = self._transport.request("POST", path, wire.encode(msg))
        if not 200 <= status < 300:
            raise_for_reply(status, body)
        return wire.decode(body, reply_kind)


class EnclaveClient(_BaseClient):
    """Speaks the enclave's five-route protocol over any transport."""

    def channel_info(self) -> wire.ChannelInfoMsg:
        return self._get(wire.ROUTE_CHANNEL, wire.ChannelInfoMsg)

    def channel_pub_der(self) -> bytes:
        return wire.b64d(self.channel_info().channel_pub_b64)

    def attest(self, nonce: bytes) -> wire.AttestResponseMsg:
        msg = wire.AttestChallengeMsg(nonce_b64=wire.b64e(nonce))
        return self._post(wire.ROUTE_ATTEST, msg, wire.AttestResponseMsg)

    def attest_quote(self, nonce: bytes) -> AttestationQuote:
        reply = self.attest(nonce)
        return AttestationQuote.from_bytes(wire.b64d(reply.quote_b64))

    def upload_sealed_key(self, sealed: wire.SealedBoxMsg) -> wire.KeyUploadAckMsg:
        return self._post(wire.ROUTE_KEYS, sealed, wire.KeyUploadAckMsg)

    def upload_batch(self, batch: wire.DataBatchMsg) -> wire.UploadAckMsg:
        return self._post(wire.ROUTE_DATA, batch, wire.UploadAckMsg)

    def trigger(self) -> wire.ResultMsg:
        return self._post(wire.ROUTE_TRIGGER, wire.TriggerMsg(), wire.ResultMsg)


class MiddlewareClient(_BaseClient):
    def ingest(self, record: wire.EncryptedRecordMsg) -> wire.IngestAckMsg:
        return self._post(wire.ROUTE_RECORDS, record, wire.IngestAckMsg)

    def forward(self) -> wire.UploadAckMsg:
        return self._post(wire.ROUTE_FORWARD, wire.TriggerMsg(), wire.UploadAckMsg)

    def stats(self) -> wire.StatsMsg:
        return self._get(wire.ROUTE_STATS, wire.StatsMsg)


class PlainClient(_BaseClient):
    """Client for the no-crypto twin (data and trigger only)."""

    def upload_batch(self, batch: wire.PlainBatchMsg) -> wire.PlainAckMsg:
        return self._post(wire.ROUTE_DATA, batch, wire.PlainAckMsg)

    def trigger(self) -> wire.PlainResultMsg:
        return self._post(wire.ROUTE_TRIGGER, wire.TriggerMsg(), wire.PlainResultMsg)
