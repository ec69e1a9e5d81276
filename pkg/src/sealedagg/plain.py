"""The plaintext twin: same aggregations, no cryptography.

Exists as the benchmark baseline. It deliberately exposes only data
upload and trigger; there is no channel, attestation or key surface to
call, which the service tests assert. Like the enclave it folds each
record into a running accumulator at upload time, so the two modes do
the same per-phase work apart from the crypto.
"""

from __future__ import annotations

import threading

from . import aggregation, wire
from .aggregation import AggregationSpec
from .errors import ArithmeticOverflow, DegenerateInput


class PlainCore:
    """Folds plaintext records as they arrive and finalizes on demand."""

    def __init__(self, spec: AggregationSpec):
        self._spec = spec
        self._fold = aggregation.make_accumulator(spec)
        self._included_users: set[str] = set()
        self._parsed_count = 0
        self._parse_failures = 0
        self._lock = threading.RLock()

    @property
    def record_count(self) -> int:
        """Records folded (or discarded as unparseable)."""
        with self._lock:
            return self._parsed_count + self._parse_failures

    def handle_plain_batch(self, msg: wire.PlainBatchMsg) -> wire.PlainAckMsg:
        with self._lock:
            for r in msg.records:
                value = aggregation.parse_payload(
                    self._spec, r.payload.encode("utf-8")
                )
                if value is None:
                    self._parse_failures += 1
                else:
                    self._fold.add(value)
                    self._included_users.add(r.user_id)
                    self._parsed_count += 1
        return wire.PlainAckMsg(accepted=len(msg.records))

    def handle_trigger(self, msg: wire.TriggerMsg) -> wire.PlainResultMsg:
        """Finalize the running aggregate; mirrors the enclave's trigger.

        Parse failures are skipped and counted the same way, so the
        reported record_count is comparable across modes.
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
        return wire.PlainResultMsg(
            result_text=text,
            included_user_count=included_user_count,
            record_count=record_count,
        )

    def reset_records(self) -> None:
        """Drop the accumulated aggregate; see EnclaveCore.reset_records."""
        with self._lock:
            self._fold = aggregation.make_accumulator(self._spec)
            self._included_users.clear()
            self._parsed_count = 0
            self._parse_failures = 0
