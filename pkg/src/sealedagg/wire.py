"""Wire messages and their canonical encoding.

Every message is a pydantic model. The canonical byte encoding is compact
JSON with lexicographically sorted keys, UTF-8; binary fields travel as
padded standard-alphabet base64. Decoding ignores unknown fields and
rejects missing or malformed ones with a DecodeError naming the field.

Route paths for the three HTTP services live here too: they are part of
the protocol surface (documented in docs/protocol.md) and are shared by
the FastAPI apps, the in-process dispatcher and the clients.
"""

from __future__ import annotations

import base64
import binascii
import json
from typing import TypeVar

from pydantic import BaseModel, ValidationError, field_validator

from . import crypto
from .errors import DecodeError

# Enclave service routes.
ROUTE_CHANNEL = "/v1/channel"
ROUTE_ATTEST = "/v1/attest"
ROUTE_KEYS = "/v1/keys"
ROUTE_DATA = "/v1/data"
ROUTE_TRIGGER = "/v1/trigger"

# Middleware service routes.
ROUTE_RECORDS = "/v1/records"
ROUTE_FORWARD = "/v1/forward"
ROUTE_STATS = "/v1/stats"

M = TypeVar("M", bound=BaseModel)


def b64e(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64d(text: str, *, length: int | None = None, multiple_of: int | None = None) -> bytes:
    """Strict base64 decode with optional length constraints."""
    try:
        data = base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError):
        raise ValueError("invalid base64") from None
    if length is not None and len(data) != length:
        raise ValueError(f"expected {length} bytes, got {len(data)}")
    if multiple_of is not None:
        if len(data) == 0 or len(data) % multiple_of != 0:
            raise ValueError(f"expected a positive multiple of {multiple_of} bytes")
    return data


def encode(msg: BaseModel) -> bytes:
    """Canonical bytes: compact JSON, sorted keys, UTF-8."""
    payload = msg.model_dump(mode="json")
    return json.dumps(
        payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def decode(data: bytes, kind: type[M]) -> M:
    """Parse canonical bytes into ``kind``.

    Unknown fields are ignored; a missing or malformed field raises
    DecodeError carrying the field's dotted path.
    """
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DecodeError(f"body: not valid JSON ({exc})") from None
    try:
        return kind.model_validate(obj)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = ".".join(str(part) for part in first["loc"]) or "body"
        raise DecodeError(f"{path}: {first['msg']}") from None


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------


class ChannelInfoMsg(BaseModel):
    """The enclave channel's public key, DER-encoded."""

    channel_pub_b64: str

    @field_validator("channel_pub_b64")
    @classmethod
    def _pub(cls, v: str) -> str:
        b64d(v)
        return v


class AttestChallengeMsg(BaseModel):
    nonce_b64: str

    @field_validator("nonce_b64")
    @classmethod
    def _nonce(cls, v: str) -> str:
        b64d(v, length=16)
        return v


class AttestResponseMsg(BaseModel):
    quote_b64: str

    @field_validator("quote_b64")
    @classmethod
    def _quote(cls, v: str) -> str:
        b64d(v)
        return v


class KeyUploadMsg(BaseModel):
    """A user's data key; only ever sent sealed to the enclave channel."""

    user_id: str
    key_b64: str

    @field_validator("user_id")
    @classmethod
    def _uid(cls, v: str) -> str:
        if not v or not v.isprintable():
            raise ValueError("must be a non-empty printable string")
        return v

    @field_validator("key_b64")
    @classmethod
    def _key(cls, v: str) -> str:
        b64d(v, length=crypto.KEY_BYTES)
        return v


class SealedBoxMsg(BaseModel):
    """Wire form of a hybrid-sealed payload (key upload, sealed result)."""

    wrapped_key_b64: str
    iv_b64: str
    payload_ct_b64: str

    @field_validator("wrapped_key_b64")
    @classmethod
    def _wrapped(cls, v: str) -> str:
        b64d(v, length=crypto.RSA_KEY_BITS // 8)
        return v

    @field_validator("iv_b64")
    @classmethod
    def _iv(cls, v: str) -> str:
        b64d(v, length=crypto.IV_BYTES)
        return v

    @field_validator("payload_ct_b64")
    @classmethod
    def _ct(cls, v: str) -> str:
        b64d(v, multiple_of=crypto.AES_BLOCK)
        return v


class KeyUploadAckMsg(BaseModel):
    stored: bool


class EncryptedRecordMsg(BaseModel):
    user_id: str
    iv_b64: str
    ct_b64: str

    @field_validator("user_id")
    @classmethod
    def _uid(cls, v: str) -> str:
        if not v or not v.isprintable():
            raise ValueError("must be a non-empty printable string")
        return v

    @field_validator("iv_b64")
    @classmethod
    def _iv(cls, v: str) -> str:
        b64d(v, length=crypto.IV_BYTES)
        return v

    @field_validator("ct_b64")
    @classmethod
    def _ct(cls, v: str) -> str:
        b64d(v, multiple_of=crypto.AES_BLOCK)
        return v


class DataBatchMsg(BaseModel):
    records: list[EncryptedRecordMsg]


class UploadAckMsg(BaseModel):
    accepted: int = 0
    skipped_no_key: int = 0
    failed_decrypt: int = 0

    def merged(self, other: "UploadAckMsg") -> "UploadAckMsg":
        return UploadAckMsg(
            accepted=self.accepted + other.accepted,
            skipped_no_key=self.skipped_no_key + other.skipped_no_key,
            failed_decrypt=self.failed_decrypt + other.failed_decrypt,
        )


class TriggerMsg(BaseModel):
    pass


class ResultMsg(BaseModel):
    """Sealed aggregate plus observability counts (counts are not sealed)."""

    wrapped_key_b64: str
    iv_b64: str
    payload_ct_b64: str
    included_user_count: int
    record_count: int

    @field_validator("wrapped_key_b64")
    @classmethod
    def _wrapped(cls, v: str) -> str:
        b64d(v, length=crypto.RSA_KEY_BITS // 8)
        return v

    @field_validator("iv_b64")
    @classmethod
    def _iv(cls, v: str) -> str:
        b64d(v, length=crypto.IV_BYTES)
        return v

    @field_validator("payload_ct_b64")
    @classmethod
    def _ct(cls, v: str) -> str:
        b64d(v, multiple_of=crypto.AES_BLOCK)
        return v


class IngestAckMsg(BaseModel):
    stored: bool
    record_count: int


class StatsMsg(BaseModel):
    record_count: int
    user_count: int
    ciphertext_bytes: int


class PlainRecordMsg(BaseModel):
    user_id: str
    payload: str

    @field_validator("user_id")
    @classmethod
    def _uid(cls, v: str) -> str:
        if not v or not v.isprintable():
            raise ValueError("must be a non-empty printable string")
        return v


class PlainBatchMsg(BaseModel):
    records: list[PlainRecordMsg]


class PlainAckMsg(BaseModel):
    accepted: int


class PlainResultMsg(BaseModel):
    result_text: str
    included_user_count: int
    record_count: int


class ErrorBodyMsg(BaseModel):
    code: str
    message: str


class ErrorMsg(BaseModel):
    error: ErrorBodyMsg


# ---------------------------------------------------------------------------
# Conversions between wire messages and crypto types
# ---------------------------------------------------------------------------


def record_to_msg(record: crypto.EncryptedRecord) -> EncryptedRecordMsg:
    return EncryptedRecordMsg(
        user_id=record.user_id, iv_b64=b64e(record.iv), ct_b64=b64e(record.ciphertext)
    )


def record_from_msg(msg: EncryptedRecordMsg) -> crypto.EncryptedRecord:
    return crypto.EncryptedRecord(
        user_id=msg.user_id, iv=b64d(msg.iv_b64), ciphertext=b64d(msg.ct_b64)
    )


def sealed_to_msg(sealed: crypto.SealedResult) -> SealedBoxMsg:
    return SealedBoxMsg(
        wrapped_key_b64=b64e(sealed.wrapped_key),
        iv_b64=b64e(sealed.iv),
        payload_ct_b64=b64e(sealed.payload_ciphertext),
    )


def sealed_from_msg(msg: SealedBoxMsg) -> crypto.SealedResult:
    return crypto.SealedResult(
        wrapped_key=b64d(msg.wrapped_key_b64),
        iv=b64d(msg.iv_b64),
        payload_ciphertext=b64d(msg.payload_ct_b64),
    )


def sealed_from_result_msg(msg: ResultMsg) -> crypto.SealedResult:
    return crypto.SealedResult(
        wrapped_key=b64d(msg.wrapped_key_b64),
        iv=b64d(msg.iv_b64),
        payload_ciphertext=b64d(msg.payload_ct_b64),
    )
