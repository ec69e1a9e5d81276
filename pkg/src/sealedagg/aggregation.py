"""Aggregation functions, their payload codecs and result serializations.

Each supported aggregation is a small frozen spec object:

* ``Sum``            - integer sum of one value per record
* ``Histogram``      - fixed-width counts over ``[min, max)``
* ``Lsf``            - least-squares line fit over (x, y) points
* ``SvmClassify``    - per-record class labels from an embedded SVM model
* ``ZoneCount``      - position counts over a square grid of square zones

Payloads travel as short UTF-8 text (one datum per record); records whose
payload fails to parse are skipped and counted, never fatal. Results
serialize to one line of text; parse_result_text is the exact inverse
used by the recipient.

The kernels are pure functions over already-parsed values so they can be
tested directly against independent oracles. The accumulators at the
bottom are their online counterparts: services fold values in as records
arrive, so producing the final result costs (almost) nothing at trigger
time regardless of how many records were uploaded.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

from .errors import (
    ArithmeticOverflow,
    DecodeError,
    DegenerateInput,
    InvalidArgument,
    SealedErrorReport,
)
from .svm import SparseVector, SvmModel, parse_sparse_vector, svm_predict
from .crypto import sha256

logger = logging.getLogger(__name__)

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

#: Result text for a failed aggregation: "error:<code>".
ERROR_PREFIX = "error:"

_INT_RE = re.compile(r"^[+-]?[0-9]+$")
_REAL_RE = re.compile(r"^[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?$")


# ---------------------------------------------------------------------------
# Spec types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sum:
    pass


@dataclass(frozen=True)
class Histogram:
    min: float
    max: float
    bins: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise InvalidArgument("histogram bounds must be finite")
        if not self.min < self.max:
            raise InvalidArgument("histogram requires min < max")
        if self.bins < 1:
            raise InvalidArgument("histogram requires at least one bin")


@dataclass(frozen=True)
class Lsf:
    pass


@dataclass(frozen=True)
class SvmClassify:
    model: SvmModel


@dataclass(frozen=True)
class ZoneCount:
    grid_side: int
    zone_side: int

    def __post_init__(self) -> None:
        if self.grid_side < 1 or self.zone_side < 1:
            raise InvalidArgument("grid_side and zone_side must be positive")
        if self.grid_side % self.zone_side != 0:
            raise InvalidArgument("zone_side must divide grid_side")

    @property
    def zones_per_side(self) -> int:
        return self.grid_side // self.zone_side


AggregationSpec = Union[Sum, Histogram, Lsf, SvmClassify, ZoneCount]


def spec_kind(spec: AggregationSpec) -> str:
    return {
        Sum: "sum",
        Histogram: "histogram",
        Lsf: "lsf",
        SvmClassify: "svm-classify",
        ZoneCount: "zone-count",
    }[type(spec)]


def canonical_spec_bytes(spec: AggregationSpec) -> bytes:
    """Stable serialization hashed into the enclave identity.

    Compact JSON with sorted keys; real-valued parameters are carried as
    their shortest-repr strings so the bytes cannot drift between runs.
    The SVM model itself is hashed separately (identity.model_digest), so
    its spec entry is just the kind tag.
    """
    obj: dict[str, object]
    if isinstance(spec, Sum):
        obj = {"kind": "sum"}
    elif isinstance(spec, Histogram):
        obj = {"kind": "histogram", "min": repr(spec.min), "max": repr(spec.max),
               "bins": spec.bins}
    elif isinstance(spec, Lsf):
        obj = {"kind": "lsf"}
    elif isinstance(spec, SvmClassify):
        obj = {"kind": "svm-classify"}
    elif isinstance(spec, ZoneCount):
        obj = {"kind": "zone-count", "grid_side": spec.grid_side,
               "zone_side": spec.zone_side}
    else:  # pragma: no cover - exhaustive above
        raise InvalidArgument(f"unknown aggregation spec {spec!r}")
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def spec_digest(spec: AggregationSpec) -> bytes:
    return sha256(canonical_spec_bytes(spec))


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlainRecord:
    """A decrypted (or never-encrypted) record as the kernels see it."""

    user_id: str
    payload: bytes


@dataclass(frozen=True)
class HistogramResult:
    counts: tuple[int, ...]
    dropped: int


@dataclass(frozen=True)
class LsfResult:
    c0: float
    c1: float


@dataclass(frozen=True)
class ZoneDistribution:
    counts: tuple[int, ...]
    zones_per_side: int


# ---------------------------------------------------------------------------
# Payload codecs
# ---------------------------------------------------------------------------


def parse_int_payload(text: str) -> int:
    """Strict decimal integer; rejects underscores, unicode digits, blanks."""
    stripped = text.strip()
    if not _INT_RE.match(stripped):
        raise ValueError(f"not a decimal integer: {text!r}")
    value = int(stripped)
    if not (INT64_MIN <= value <= INT64_MAX):
        raise ValueError("integer outside the signed 64-bit range")
    return value


def parse_real_payload(text: str) -> float:
    """Strict decimal real; rejects nan/inf, hex floats and underscores."""
    stripped = text.strip()
    if not _REAL_RE.match(stripped):
        raise ValueError(f"not a decimal real: {text!r}")
    value = float(stripped)
    if not math.isfinite(value):
        raise ValueError("real value out of range")
    return value


def parse_point_payload(text: str) -> tuple[float, float]:
    """Two comma-separated reals, e.g. ``"3.5,-1"`` or ``"120,40"``."""
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected 'x,y', got {text!r}")
    return parse_real_payload(parts[0]), parse_real_payload(parts[1])


def parse_payload(spec: AggregationSpec, payload: bytes):
    """Parse one record payload for ``spec``; None when it does not parse."""
    try:
        text = payload.decode("utf-8")
        if isinstance(spec, Sum):
            return parse_int_payload(text)
        if isinstance(spec, Histogram):
            return parse_real_payload(text)
        if isinstance(spec, (Lsf, ZoneCount)):
            return parse_point_payload(text)
        if isinstance(spec, SvmClassify):
            return parse_sparse_vector(text)
        raise InvalidArgument(f"unknown aggregation spec {spec!r}")  # pragma: no cover
    except (ValueError, UnicodeDecodeError, DecodeError):
        return None


def iter_parsed(spec: AggregationSpec, records: Iterable[PlainRecord]):
    """Yield (record, parsed value) pairs; the value is None on parse failure."""
    for record in records:
        yield record, parse_payload(spec, record.payload)


def parse_payloads(
    spec: AggregationSpec, records: Sequence[PlainRecord]
) -> tuple[list, int]:
    """Decode every record payload for ``spec``; skip-and-count failures.

    Returns:
        (values, skipped) where values holds the per-record parsed data in
        input order and skipped counts records whose payload was not valid
        UTF-8 or did not match the aggregation's payload grammar.
    """
    values: list = []
    skipped = 0
    for _, value in iter_parsed(spec, records):
        if value is None:
            skipped += 1
        else:
            values.append(value)
    if skipped:
        logger.debug("parse_payloads skipped %d of %d records", skipped, len(records))
    return values, skipped


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def agg_sum(values: Iterable[int]) -> int:
    """Sum of integers; empty input sums to 0.

    Raises:
        ArithmeticOverflow: if any partial sum leaves the signed 64-bit
            range (the protocol's declared accumulator width).
    """
    total = 0
    for v in values:
        total += v
        if not (INT64_MIN <= total <= INT64_MAX):
            raise ArithmeticOverflow("sum left the signed 64-bit range")
    return total


def agg_histogram(values: Iterable[float], min: float, max: float, bins: int) -> HistogramResult:
    """Fixed-width histogram over ``[min, max)``.

    Bin i covers the half-open interval [min + i*w, min + (i+1)*w) with
    w = (max - min) / bins. Values outside [min, max) (including max
    itself) are dropped and counted, matching the codec's skip-and-count
    stance. Because bin edges are computed in floating point, an index
    landing on the wrong side of its edge is nudged until the half-open
    invariant holds.
    """
    Histogram(min=min, max=max, bins=bins)  # reuse the validation
    width = (max - min) / bins
    counts = [0] * bins
    dropped = 0
    for v in values:
        idx = _hist_bin_index(v, min, max, width, bins)
        if idx is None:
            dropped += 1
        else:
            counts[idx] += 1
    return HistogramResult(counts=tuple(counts), dropped=dropped)


def _hist_bin_index(v: float, min: float, max: float, width: float, bins: int):
    """Bin index for one value, or None when it falls outside [min, max)."""
    if not (min <= v < max):
        return None
    idx = int((v - min) / width)
    if idx >= bins:
        idx = bins - 1
    # Float rounding can put v just outside its computed bin; fix up.
    while idx > 0 and v < min + idx * width:
        idx -= 1
    while idx < bins - 1 and v >= min + (idx + 1) * width:
        idx += 1
    return idx


def agg_lsf(points: Sequence[tuple[float, float]]) -> LsfResult:
    """Ordinary least-squares line y = c0 + c1*x.

    Uses the textbook closed form
    ``c1 = sum((x-mx)*(y-my)) / sum((x-mx)^2)``, ``c0 = my - c1*mx``.

    Raises:
        DegenerateInput: fewer than two points, or all x equal (zero
            variance), or a non-finite coefficient.
    """
    n = len(points)
    if n < 2:
        raise DegenerateInput("least-squares fit needs at least two points")
    mx = math.fsum(p[0] for p in points) / n
    my = math.fsum(p[1] for p in points) / n
    sxx = math.fsum((p[0] - mx) ** 2 for p in points)
    sxy = math.fsum((p[0] - mx) * (p[1] - my) for p in points)
    if sxx == 0.0:
        raise DegenerateInput("least-squares fit undefined for zero x-variance")
    c1 = sxy / sxx
    c0 = my - c1 * mx
    if not (math.isfinite(c0) and math.isfinite(c1)):
        raise DegenerateInput("least-squares fit produced non-finite coefficients")
    return LsfResult(c0=c0, c1=c1)


def agg_zone_count(
    positions: Iterable[tuple[float, float]], grid_side: int, zone_side: int
) -> ZoneDistribution:
    """Count positions per square zone, row-major.

    Zone (zx, zy) covers [zx*zone_side, (zx+1)*zone_side) by
    [zy*zone_side, (zy+1)*zone_side); the flat index is
    ``zy * zones_per_side + zx``. Out-of-grid positions are dropped and
    logged, not fatal.
    """
    spec = ZoneCount(grid_side=grid_side, zone_side=zone_side)
    zps = spec.zones_per_side
    counts = [0] * (zps * zps)
    dropped = 0
    for x, y in positions:
        idx = _zone_index(x, y, grid_side, zone_side, zps)
        if idx is None:
            dropped += 1
        else:
            counts[idx] += 1
    if dropped:
        logger.debug("agg_zone_count dropped %d out-of-grid positions", dropped)
    return ZoneDistribution(counts=tuple(counts), zones_per_side=zps)


def _zone_index(x: float, y: float, grid_side: int, zone_side: int, zps: int):
    """Flat row-major zone index, or None for out-of-grid positions."""
    if not (0 <= x < grid_side and 0 <= y < grid_side):
        return None
    return int(y // zone_side) * zps + int(x // zone_side)


def run_spec(spec: AggregationSpec, values: Sequence) -> object:
    """Dispatch parsed values to the kernel for ``spec``."""
    if isinstance(spec, Sum):
        return agg_sum(values)
    if isinstance(spec, Histogram):
        return agg_histogram(values, min=spec.min, max=spec.max, bins=spec.bins)
    if isinstance(spec, Lsf):
        return agg_lsf(values)
    if isinstance(spec, SvmClassify):
        return [svm_predict(spec.model, x) for x in values]
    if isinstance(spec, ZoneCount):
        return agg_zone_count(values, grid_side=spec.grid_side, zone_side=spec.zone_side)
    raise InvalidArgument(f"unknown aggregation spec {spec!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Online accumulators
# ---------------------------------------------------------------------------
#
# The services fold each parsed value in as its record arrives, so the
# per-record work (decryption, parsing, SVM decisions, running sums) all
# lands in the upload phase and triggering only reads out finished state.
# Every accumulator is equivalent to running its batch kernel over the
# same value sequence: exactly so for the integer-valued aggregations and
# the SVM labels; the least-squares accumulator keeps exact rational sums
# and rounds once at the end, so it agrees with the float kernel to well
# inside any tolerance used downstream (and two accumulators fed the same
# sequence always produce bit-identical results).


class _SumAccumulator:
    def __init__(self) -> None:
        self._total = 0
        self._overflowed = False

    def add(self, value: int) -> None:
        if self._overflowed:
            return  # the batch fold would have aborted here; stay aborted
        self._total += value
        if not (INT64_MIN <= self._total <= INT64_MAX):
            self._overflowed = True

    def result(self) -> int:
        if self._overflowed:
            raise ArithmeticOverflow("sum left the signed 64-bit range")
        return self._total


class _HistogramAccumulator:
    def __init__(self, spec: Histogram) -> None:
        self._spec = spec
        self._width = (spec.max - spec.min) / spec.bins
        self._counts = [0] * spec.bins
        self._dropped = 0

    def add(self, value: float) -> None:
        spec = self._spec
        idx = _hist_bin_index(value, spec.min, spec.max, self._width, spec.bins)
        if idx is None:
            self._dropped += 1
        else:
            self._counts[idx] += 1

    def result(self) -> HistogramResult:
        return HistogramResult(counts=tuple(self._counts), dropped=self._dropped)


class _LsfAccumulator:
    """Exact rational running sums; one correctly-rounded solve at the end.

    Because every intermediate is a Fraction, the result is independent
    of everything but the multiset of points, and the closing division is
    the only rounding step.
    """

    def __init__(self) -> None:
        self._n = 0
        self._sx = Fraction(0)
        self._sy = Fraction(0)
        self._sxx = Fraction(0)
        self._sxy = Fraction(0)

    def add(self, point: tuple[float, float]) -> None:
        x, y = point
        fx, fy = Fraction(x), Fraction(y)
        self._n += 1
        self._sx += fx
        self._sy += fy
        self._sxx += fx * fx
        self._sxy += fx * fy

    def result(self) -> LsfResult:
        n = self._n
        if n < 2:
            raise DegenerateInput("least-squares fit needs at least two points")
        sxx = self._sxx - self._sx * self._sx / n
        sxy = self._sxy - self._sx * self._sy / n
        if sxx == 0:
            raise DegenerateInput("least-squares fit undefined for zero x-variance")
        c1 = sxy / sxx
        c0 = (self._sy - c1 * self._sx) / n
        try:
            c0f, c1f = float(c0), float(c1)
        except OverflowError:
            raise DegenerateInput(
                "least-squares fit produced non-finite coefficients"
            ) from None
        return LsfResult(c0=c0f, c1=c1f)


class _SvmAccumulator:
    def __init__(self, spec: SvmClassify) -> None:
        self._model = spec.model
        self._labels: list[int] = []

    def add(self, vector: SparseVector) -> None:
        self._labels.append(svm_predict(self._model, vector))

    def result(self) -> list[int]:
        return list(self._labels)


class _ZoneCountAccumulator:
    def __init__(self, spec: ZoneCount) -> None:
        self._spec = spec
        self._counts = [0] * (spec.zones_per_side**2)
        self._dropped = 0

    def add(self, point: tuple[float, float]) -> None:
        spec = self._spec
        idx = _zone_index(
            point[0], point[1], spec.grid_side, spec.zone_side, spec.zones_per_side
        )
        if idx is None:
            self._dropped += 1
        else:
            self._counts[idx] += 1

    def result(self) -> ZoneDistribution:
        return ZoneDistribution(
            counts=tuple(self._counts), zones_per_side=self._spec.zones_per_side
        )


Accumulator = Union[
    _SumAccumulator,
    _HistogramAccumulator,
    _LsfAccumulator,
    _SvmAccumulator,
    _ZoneCountAccumulator,
]


def make_accumulator(spec: AggregationSpec) -> Accumulator:
    """A fresh online accumulator for ``spec`` (add(value) / result())."""
    if isinstance(spec, Sum):
        return _SumAccumulator()
    if isinstance(spec, Histogram):
        return _HistogramAccumulator(spec)
    if isinstance(spec, Lsf):
        return _LsfAccumulator()
    if isinstance(spec, SvmClassify):
        return _SvmAccumulator(spec)
    if isinstance(spec, ZoneCount):
        return _ZoneCountAccumulator(spec)
    raise InvalidArgument(f"unknown aggregation spec {spec!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Result serialization
# ---------------------------------------------------------------------------


def serialize_result(spec: AggregationSpec, result: object) -> str:
    """One line of text per result; see parse_result_text for the inverse."""
    if isinstance(spec, Sum):
        return str(result)
    if isinstance(spec, Histogram):
        return ",".join(str(c) for c in result.counts)
    if isinstance(spec, Lsf):
        return f"{result.c0!r},{result.c1!r}"
    if isinstance(spec, SvmClassify):
        return ",".join(str(label) for label in result)
    if isinstance(spec, ZoneCount):
        return ",".join(str(c) for c in result.counts)
    raise InvalidArgument(f"unknown aggregation spec {spec!r}")  # pragma: no cover


def error_report_text(code: str) -> str:
    return f"{ERROR_PREFIX}{code}"


def parse_result_text(spec: AggregationSpec, text: str):
    """Inverse of serialize_result for the given spec.

    Raises:
        SealedErrorReport: the text is an enclave error report
            ("error:<code>") rather than an aggregate.
        ValueError: the text does not match the spec's serialization.
    """
    if text.startswith(ERROR_PREFIX):
        raise SealedErrorReport(text[len(ERROR_PREFIX):])
    if isinstance(spec, Sum):
        return parse_int_payload(text)
    if isinstance(spec, Histogram):
        counts = _parse_count_list(text, spec.bins)
        return HistogramResult(counts=counts, dropped=0)
    if isinstance(spec, Lsf):
        parts = text.split(",")
        if len(parts) != 2:
            raise ValueError(f"expected 'c0,c1', got {text!r}")
        return LsfResult(c0=parse_real_payload(parts[0]), c1=parse_real_payload(parts[1]))
    if isinstance(spec, SvmClassify):
        if text == "":
            return []
        return [parse_int_payload(part) for part in text.split(",")]
    if isinstance(spec, ZoneCount):
        zps = spec.zones_per_side
        counts = _parse_count_list(text, zps * zps)
        return ZoneDistribution(counts=counts, zones_per_side=zps)
    raise InvalidArgument(f"unknown aggregation spec {spec!r}")  # pragma: no cover


def _parse_count_list(text: str, expected: int) -> tuple[int, ...]:
    parts = text.split(",")
    if len(parts) != expected:
        raise ValueError(f"expected {expected} counts, got {len(parts)}")
    counts = tuple(parse_int_payload(p) for p in parts)
    if any(c < 0 for c in counts):
        raise ValueError("counts must be non-negative")
    return counts
