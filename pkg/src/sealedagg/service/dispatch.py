"""In-process request dispatch with the same behavior as the HTTP apps.

Each dispatcher maps (method, path, body bytes) onto a core handler and
returns (status, canonical reply bytes). Error mapping is shared with
the FastAPI apps through error_reply, so a client sees identical status
codes and bodies on both transports; the parity tests assert this.
"""

from __future__ import annotations

import logging

from .. import wire
from ..clients import DispatchFn
from ..enclave import EnclaveCore
from ..errors import (
    DecodeError,
    InvalidArgument,
    OpenError,
    SealedAggError,
    SizeError,
    TransportError,
)
from ..middleware import MiddlewareCore
from ..plain import PlainCore

logger = logging.getLogger(__name__)

DEFAULT_MAX_BODY_BYTES = 8 * 1024 * 1024

_STATUS_BY_TYPE: list[tuple[type[SealedAggError], tuple[int, str]]] = [
    (DecodeError, (400, "decode-error")),
    (OpenError, (400, "open-failure")),
    (SizeError, (413, "size-error")),
    (InvalidArgument, (400, "invalid-argument")),
    (TransportError, (502, "transport-error")),
]


def error_reply(exc: Exception) -> tuple[int, bytes]:
    """(status, canonical error body) for any handler exception."""
    for exc_type, (status, code) in _STATUS_BY_TYPE:
        if isinstance(exc, exc_type):
            return status, _error_body(code, str(exc))
    logger.exception("unhandled service error", exc_info=exc)
    return 500, _error_body("internal-error", "unexpected failure")


def _error_body(code: str, message: str) -> bytes:
    return wire.encode(wire.ErrorMsg(error=wire.ErrorBodyMsg(code=code, message=message)))


def not_found() -> tuple[int, bytes]:
    return 404, _error_body("not-found", "no such route")


def _method_not_allowed() -> tuple[int, bytes]:
    return 405, _error_body("method-not-allowed", "wrong method for this route")


class _Router:
    """Tiny (method, path) table shared by the three dispatchers."""

    def __init__(self, max_body_bytes: int):
        self._routes: dict[tuple[str, str], tuple] = {}
        self._max_body_bytes = max_body_bytes

    def get(self, path: str, handler) -> None:
        self._routes[("GET", path)] = (None, handler)

    def post(self, path: str, request_kind, handler) -> None:
        self._routes[("POST", path)] = (request_kind, handler)

    def __call__(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        known_paths = {p for _, p in self._routes}
        if (method, path) not in self._routes:
            return _method_not_allowed() if path in known_paths else not_found()
        request_kind, handler = self._routes[(method, path)]
        try:
            if request_kind is None:
                reply = handler()
            else:
                if body is not None and len(body) > self._max_body_bytes:
                    raise SizeError(
                        f"request body exceeds {self._max_body_bytes} bytes"
                    )
                msg = wire.decode(body if body is not None else b"", request_kind)
                reply = handler(msg)
        except Exception as exc:  # noqa: BLE001 - single mapping point
            return error_reply(exc)
        return 200, wire.encode(reply)


def enclave_dispatch(
    core: EnclaveCore, *, max_body_bytes: int = DEFAULT_MAX_BODY_BYTES
) -> DispatchFn:
    router = _Router(max_body_bytes)
    router.get(wire.ROUTE_CHANNEL, core.handle_channel_info)
    router.post(wire.ROUTE_ATTEST, wire.AttestChallengeMsg, core.handle_attest)
    router.post(wire.ROUTE_KEYS, wire.SealedBoxMsg, core.handle_sealed_key_upload)
    router.post(wire.ROUTE_DATA, wire.DataBatchMsg, core.handle_data_batch)
    router.post(wire.ROUTE_TRIGGER, wire.TriggerMsg, core.handle_trigger)
    return router


def middleware_dispatch(
    core: MiddlewareCore,
    enclave,
    *,
    max_body_bytes: int = DEFAULT_MAX_BODY_BYTES,
) -> DispatchFn:
    """``enclave`` is the forwarding target (EnclaveClient or None)."""

    def forward(_msg: wire.TriggerMsg) -> wire.UploadAckMsg:
        if enclave is None:
            raise TransportError("no enclave configured for forwarding")
        return core.forward_all(enclave)

    router = _Router(max_body_bytes)
    router.post(wire.ROUTE_RECORDS, wire.EncryptedRecordMsg, core.ingest)
    router.post(wire.ROUTE_FORWARD, wire.TriggerMsg, forward)
    router.get(wire.ROUTE_STATS, core.stats)
    return router


def plain_dispatch(
    core: PlainCore, *, max_body_bytes: int = DEFAULT_MAX_BODY_BYTES
) -> DispatchFn:
    router = _Router(max_body_bytes)
    router.post(wire.ROUTE_DATA, wire.PlainBatchMsg, core.handle_plain_batch)
    router.post(wire.ROUTE_TRIGGER, wire.TriggerMsg, core.handle_trigger)
    return router
