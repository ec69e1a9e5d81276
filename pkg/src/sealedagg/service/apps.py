"""FastAPI applications for the three services.

Endpoints take and return the pydantic wire models. Request bodies are
decoded by the same canonical decoder as the in-process dispatcher and
replies are emitted through the canonical encoder (compact JSON, sorted
keys), so the HTTP surface and the local surface produce byte-identical
bodies — success and error alike. Request bodies over the configured
ceiling are refused with 413.
"""

from __future__ import annotations

from fastapi import Depends, FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from starlette.exceptions import HTTPException as StarletteHTTPException

from .. import wire
from ..enclave import EnclaveCore
from ..errors import SealedAggError, SizeError, TransportError
from ..middleware import MiddlewareCore
from ..plain import PlainCore
from .dispatch import DEFAULT_MAX_BODY_BYTES, error_reply, _error_body

_JSON = "application/json"

_HTTP_CODES = {404: "not-found", 405: "method-not-allowed"}
_HTTP_MESSAGES = {404: "no such route", 405: "wrong method for this route"}


def _canonical(msg) -> Response:
    return Response(content=wire.encode(msg), media_type=_JSON)


def _body_reader(max_body_bytes: int):
    async def _read_body(request: Request) -> bytes:
        body = await request.body()
        if len(body) > max_body_bytes:
            raise SizeError(f"request body exceeds {max_body_bytes} bytes")
        return body

    return _read_body


def _install_common(app: FastAPI, max_body_bytes: int) -> None:
    @app.exception_handler(SealedAggError)
    async def _package_error(_req: Request, exc: SealedAggError) -> Response:
        status, body = error_reply(exc)
        return Response(content=body, status_code=status, media_type=_JSON)

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(_req: Request, exc: StarletteHTTPException) -> Response:
        code = _HTTP_CODES.get(exc.status_code, "http-error")
        message = _HTTP_MESSAGES.get(exc.status_code, str(exc.detail))
        return Response(
            content=_error_body(code, message),
            status_code=exc.status_code,
            media_type=_JSON,
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError) -> Response:
        first = exc.errors()[0]
        loc = [str(part) for part in first.get("loc", ()) if str(part) != "body"]
        path = ".".join(loc) or "body"
        body = _error_body("decode-error", f"{path}: {first.get('msg', 'invalid')}")
        return Response(content=body, status_code=400, media_type=_JSON)

    @app.middleware("http")
    async def _limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length is not None and length.isdigit() and int(length) > max_body_bytes:
            body = _error_body(
                "size-error", f"request body exceeds {max_body_bytes} bytes"
            )
            return Response(content=body, status_code=413, media_type=_JSON)
        return await call_next(request)


def create_enclave_app(
    core: EnclaveCore, *, max_body_bytes: int = DEFAULT_MAX_BODY_BYTES
) -> FastAPI:
    app = FastAPI(title="aggregation enclave", version="1")
    _install_common(app, max_body_bytes)
    read_body = _body_reader(max_body_bytes)

    @app.get(wire.ROUTE_CHANNEL, response_model=wire.ChannelInfoMsg)
    def channel_info() -> Response:
        return _canonical(core.handle_channel_info())

    @app.post(wire.ROUTE_ATTEST, response_model=wire.AttestResponseMsg)
    def attest(body: bytes = Depends(read_body)) -> Response:
        return _canonical(core.handle_attest(wire.decode(body, wire.AttestChallengeMsg)))

    @app.post(wire.ROUTE_KEYS, response_model=wire.KeyUploadAckMsg)
    def upload_key(body: bytes = Depends(read_body)) -> Response:
        return _canonical(
            core.handle_sealed_key_upload(wire.decode(body, wire.SealedBoxMsg))
        )

    @app.post(wire.ROUTE_DATA, response_model=wire.UploadAckMsg)
    def upload_data(body: bytes = Depends(read_body)) -> Response:
        return _canonical(core.handle_data_batch(wire.decode(body, wire.DataBatchMsg)))

    @app.post(wire.ROUTE_TRIGGER, response_model=wire.ResultMsg)
    def trigger(body: bytes = Depends(read_body)) -> Response:
        return _canonical(core.handle_trigger(wire.decode(body, wire.TriggerMsg)))

    return app


def create_middleware_app(
    core: MiddlewareCore,
    enclave=None,
    *,
    max_body_bytes: int = DEFAULT_MAX_BODY_BYTES,
) -> FastAPI:
    """``enclave`` is an EnclaveClient used as the forwarding target."""
    app = FastAPI(title="ciphertext middleware", version="1")
    _install_common(app, max_body_bytes)
    read_body = _body_reader(max_body_bytes)

    @app.post(wire.ROUTE_RECORDS, response_model=wire.IngestAckMsg)
    def ingest(body: bytes = Depends(read_body)) -> Response:
        return _canonical(core.ingest(wire.decode(body, wire.EncryptedRecordMsg)))

    @app.post(wire.ROUTE_FORWARD, response_model=wire.UploadAckMsg)
    def forward(body: bytes = Depends(read_body)) -> Response:
        wire.decode(body, wire.TriggerMsg)
        if enclave is None:
            raise TransportError("no enclave configured for forwarding")
        return _canonical(core.forward_all(enclave))

    @app.get(wire.ROUTE_STATS, response_model=wire.StatsMsg)
    def stats() -> Response:
        return _canonical(core.stats())

    return app


def create_plain_app(
    core: PlainCore, *, max_body_bytes: int = DEFAULT_MAX_BODY_BYTES
) -> FastAPI:
    app = FastAPI(title="plaintext aggregation twin", version="1")
    _install_common(app, max_body_bytes)
    read_body = _body_reader(max_body_bytes)

    @app.post(wire.ROUTE_DATA, response_model=wire.PlainAckMsg)
    def upload_data(body: bytes = Depends(read_body)) -> Response:
        return _canonical(core.handle_plain_batch(wire.decode(body, wire.PlainBatchMsg)))

    @app.post(wire.ROUTE_TRIGGER, response_model=wire.PlainResultMsg)
    def trigger(body: bytes = Depends(read_body)) -> Response:
        return _canonical(core.handle_trigger(wire.decode(body, wire.TriggerMsg)))

    return app
