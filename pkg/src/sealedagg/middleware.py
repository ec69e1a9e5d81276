"""The untrusted middleware: ciphertext store and forwarder.

It never holds a key. Records are kept exactly as received (the stored
wire message re-encodes byte-identically because the encoding is
canonical) in arrival order, with an in-memory ingestion timestamp for
operational visibility. The on-disk format is one canonical record
encoding per line; timestamps are not persisted.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass

from . import wire
from .errors import DecodeError, SizeError, TransportError

logger = logging.getLogger(__name__)

DEFAULT_MAX_BATCH_BYTES = 4 * 1024 * 1024


@dataclass(frozen=True)
class StoredRecord:
    msg: wire.EncryptedRecordMsg
    ingested_at: float


class MiddlewareCore:
    """Append-only ciphertext store plus batched forwarding."""

    def __init__(self, *, max_batch_bytes: int = DEFAULT_MAX_BATCH_BYTES):
        if max_batch_bytes < 1024:
            raise SizeError("max_batch_bytes is unreasonably small")
        self._max_batch_bytes = max_batch_bytes
        self._records: list[StoredRecord] = []
        self._lock = threading.RLock()

    # -- ingestion -------------------------------------------------------

    def ingest(self, msg: wire.EncryptedRecordMsg) -> wire.IngestAckMsg:
        """Append one record; contents are stored without transformation."""
        with self._lock:
            self._records.append(StoredRecord(msg=msg, ingested_at=time.time()))
            count = len(self._records)
        return wire.IngestAckMsg(stored=True, record_count=count)

    def records(self) -> list[wire.EncryptedRecordMsg]:
        with self._lock:
            return [stored.msg for stored in self._records]

    def stats(self) -> wire.StatsMsg:
        with self._lock:
            snapshot = [stored.msg for stored in self._records]
        users = {msg.user_id for msg in snapshot}
        ct_bytes = sum(
            len(wire.b64d(msg.iv_b64)) + len(wire.b64d(msg.ct_b64)) for msg in snapshot
        )
        return wire.StatsMsg(
            record_count=len(snapshot), user_count=len(users), ciphertext_bytes=ct_bytes
        )

    def dump_bytes(self) -> bytes:
        """The store's full contents, one canonical record per line."""
        with self._lock:
            snapshot = [stored.msg for stored in self._records]
        return b"".join(wire.encode(msg) + b"\n" for msg in snapshot)

    # -- forwarding --------------------------------------------------------

    def make_batches(self) -> list[wire.DataBatchMsg]:
        """Chunk the store into batches under the byte ceiling, in order."""
        batches: list[wire.DataBatchMsg] = []
        current: list[wire.EncryptedRecordMsg] = []
        current_bytes = 64  # envelope overhead allowance
        for msg in self.records():
            record_bytes = len(wire.encode(msg)) + 1
            if current and current_bytes + record_bytes > self._max_batch_bytes:
                batches.append(wire.DataBatchMsg(records=current))
                current = []
                current_bytes = 64
            current.append(msg)
            current_bytes += record_bytes
        if current:
            batches.append(wire.DataBatchMsg(records=current))
        return batches

    def forward_all(self, enclave, *, retries: int = 2) -> wire.UploadAckMsg:
        """Push the whole store to the enclave in order, batch by batch.

        Args:
            enclave: anything with ``upload_batch(DataBatchMsg) -> UploadAckMsg``
                (an EnclaveClient in practice).
            retries: additional delivery attempts per batch on transport
                errors before giving up.

        Returns:
            The element-wise sum of the per-batch acks.

        Raises:
            TransportError: a batch could not be delivered even after
                retrying; earlier batches stay delivered (the enclave
                tolerates replays of the remainder).
        """
        total = wire.UploadAckMsg()
        for index, batch in enumerate(self.make_batches()):
            attempt = 0
            while True:
                try:
                    ack = enclave.upload_batch(batch)
                    break
                except TransportError:
                    attempt += 1
                    if attempt > retries:
                        logger.warning("forward: batch %d undeliverable, giving up", index)
                        raise
                    logger.info("forward: batch %d failed, retrying (%d)", index, attempt)
            total = total.merged(ack)
        return total

    # -- persistence -------------------------------------------------------

    def persist(self, path: str) -> None:
        """Write the store to ``path`` (canonical record per line)."""
        data = self.dump_bytes()
        with open(path, "wb") as fh:
            fh.write(data)

    def restore(self, path: str) -> int:
        """Replace the store with the contents of ``path``.

        Raises:
            DecodeError: naming the first corrupted line; the store is
                left untouched in that case.
        """
        with open(path, "rb") as fh:
            lines = fh.read().splitlines()
        loaded: list[StoredRecord] = []
        now = time.time()
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                msg = wire.decode(line, wire.EncryptedRecordMsg)
            except DecodeError as exc:
                raise DecodeError(f"line {lineno}: {exc}") from None
            loaded.append(StoredRecord(msg=msg, ingested_at=now))
        with self._lock:
            self._records = loaded
            return len(self._records)
