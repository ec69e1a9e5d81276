"""Benchmark harness: enclave pipeline vs plaintext twin.

The methodology mirrors a fixed-workload, repeated-round setup:

* Setup (untimed): generate one payload per user from a seeded RNG,
  encrypt and deposit everything at the middleware, deploy the enclave,
  run attestation and key upload for every user.
* Each iteration (timed): the enclave's record store is reset to keep
  iterations identically distributed, then the already-deposited data is
  forwarded middleware-to-enclave (the "upload" number) and one
  aggregation is triggered, the sealed result riding back on the
  response (the "compute" number). The plaintext twin does the same
  minus all cryptography.
* Reported per function and mode: arithmetic means of upload and compute
  across iterations, mean total, and the sample standard deviation of
  the per-iteration totals. The cross-function summary is a geometric
  mean of the per-function mean totals (computed in log space), and the
  headline overhead is geomean(enclave totals) / geomean(plain totals).

Everything runs in-process over the byte-faithful local transport; the
HTTP surface is identical by construction (see sealedagg.service) and is
exercised by the service tests instead of the hot loop.
"""

from __future__ import annotations

import csv
import io
import math
import random
import statistics
import time
from dataclasses import dataclass, field
from importlib import resources

from . import aggregation, crypto, wire
from .actors import RecipientActor, UserActor
from .aggregation import AggregationSpec, Histogram, Lsf, Sum, SvmClassify
from .clients import EnclaveClient, LocalTransport, MiddlewareClient, PlainClient
from .errors import InvalidArgument
from .middleware import MiddlewareCore
from .plain import PlainCore
from .service.dispatch import enclave_dispatch, middleware_dispatch, plain_dispatch
from .svm import load_svm_model

FUNCTION_NAMES = ("sum", "svm", "histogram", "lsf")

MODE_ENCLAVE = "enclave"
MODE_PLAIN = "plain"


@dataclass(frozen=True)
class BenchConfig:
    """Workload knobs; defaults match the reference scenario."""

    n_users: int = 5000
    iterations: int = 100
    functions: tuple[str, ...] = FUNCTION_NAMES
    seed: int = 0
    sum_low: int = 0
    sum_high: int = 1_000_000
    hist_min: float = 0.0
    hist_max: float = 100.0
    hist_bins: int = 10
    lsf_intercept: float = 1.0
    lsf_slope: float = 2.0
    lsf_noise: float = 1.0
    lsf_x_max: float = 100.0

    def __post_init__(self) -> None:
        if self.n_users < 1 or self.iterations < 1:
            raise InvalidArgument("n_users and iterations must be positive")
        unknown = set(self.functions) - set(FUNCTION_NAMES)
        if unknown:
            raise InvalidArgument(f"unknown benchmark functions: {sorted(unknown)}")


def packaged_model_text() -> str:
    return resources.files("sealedagg.data").joinpath("svm_model.txt").read_text()


def packaged_feature_rows() -> list[str]:
    text = resources.files("sealedagg.data").joinpath("svm_rows.txt").read_text()
    return [line for line in text.splitlines() if line.strip()]


def make_spec(name: str, config: BenchConfig) -> AggregationSpec:
    if name == "sum":
        return Sum()
    if name == "histogram":
        return Histogram(min=config.hist_min, max=config.hist_max, bins=config.hist_bins)
    if name == "lsf":
        return Lsf()
    if name == "svm":
        return SvmClassify(model=load_svm_model(packaged_model_text()))
    raise InvalidArgument(f"unknown benchmark function {name!r}")


def model_bytes_for(name: str) -> bytes | None:
    return packaged_model_text().encode("utf-8") if name == "svm" else None


def generate_payloads(name: str, config: BenchConfig, rng: random.Random) -> list[str]:
    """One payload string per user, drawn from the function's distribution."""
    n = config.n_users
    if name == "sum":
        return [str(rng.randrange(config.sum_low, config.sum_high)) for _ in range(n)]
    if name == "histogram":
        return [repr(rng.uniform(config.hist_min, config.hist_max)) for _ in range(n)]
    if name == "lsf":
        payloads = []
        for _ in range(n):
            x = rng.uniform(0.0, config.lsf_x_max)
            y = config.lsf_intercept + config.lsf_slope * x + rng.gauss(0.0, config.lsf_noise)
            payloads.append(f"{x!r},{y!r}")
        return payloads
    if name == "svm":
        rows = packaged_feature_rows()
        return [rows[rng.randrange(len(rows))] for _ in range(n)]
    raise InvalidArgument(f"unknown benchmark function {name!r}")


def workload_rng(seed: int, name: str, salt: str = "") -> random.Random:
    return random.Random(f"{seed}:{name}:{salt}")


# ---------------------------------------------------------------------------
# Report shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RowTiming:
    """One function x mode cell block of the report, milliseconds."""

    upload_mean_ms: float
    compute_mean_ms: float
    total_mean_ms: float
    total_stddev_ms: float


@dataclass
class BenchmarkReport:
    """Rows keyed by function name, each holding enclave and plain cells."""

    functions: tuple[str, ...]
    rows: dict[str, dict[str, RowTiming]] = field(default_factory=dict)

    def totals(self, mode: str) -> list[float]:
        return [self.rows[fn][mode].total_mean_ms for fn in self.functions]

    def geomean_total(self, mode: str) -> float:
        return geometric_mean(self.totals(mode))

    def overhead(self) -> float:
        return self.geomean_total(MODE_ENCLAVE) / self.geomean_total(MODE_PLAIN)

    def render_text(self) -> str:
        header = (
            f"{'function':<12}{'mode':<10}{'upload_ms':>12}{'compute_ms':>12}"
            f"{'total_ms':>12}{'stddev_ms':>12}"
        )
        lines = [header, "-" * len(header)]
        for fn in self.functions:
            for mode in (MODE_ENCLAVE, MODE_PLAIN):
                row = self.rows[fn][mode]
                lines.append(
                    f"{fn:<12}{mode:<10}{row.upload_mean_ms:>12.1f}"
                    f"{row.compute_mean_ms:>12.1f}{row.total_mean_ms:>12.1f}"
                    f"{row.total_stddev_ms:>12.1f}"
                )
        lines.append("-" * len(header))
        lines.append(
            "geometric mean of totals: "
            f"enclave={self.geomean_total(MODE_ENCLAVE):.1f} ms, "
            f"plain={self.geomean_total(MODE_PLAIN):.1f} ms"
        )
        lines.append(f"overhead (enclave/plain): {self.overhead():.2f}")
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["function", "mode", "upload_ms", "compute_ms", "total_ms", "stddev_ms"]
        )
        for fn in self.functions:
            for mode in (MODE_ENCLAVE, MODE_PLAIN):
                row = self.rows[fn][mode]
                writer.writerow(
                    [
                        fn,
                        mode,
                        f"{row.upload_mean_ms!r}",
                        f"{row.compute_mean_ms!r}",
                        f"{row.total_mean_ms!r}",
                        f"{row.total_stddev_ms!r}",
                    ]
                )
        writer.writerow(
            ["geomean_total", MODE_ENCLAVE, "", "", f"{self.geomean_total(MODE_ENCLAVE)!r}", ""]
        )
        writer.writerow(
            ["geomean_total", MODE_PLAIN, "", "", f"{self.geomean_total(MODE_PLAIN)!r}", ""]
        )
        writer.writerow(["overhead", "", "", "", f"{self.overhead()!r}", ""])
        return buf.getvalue()


def geometric_mean(values: list[float]) -> float:
    """exp(mean(log x)); log space keeps large-millisecond products tame."""
    if not values:
        raise InvalidArgument("geometric mean of an empty sequence")
    if any(v <= 0 for v in values):
        raise InvalidArgument("geometric mean requires positive values")
    return math.exp(math.fsum(math.log(v) for v in values) / len(values))


def row_from_samples(upload_ms: list[float], compute_ms: list[float]) -> RowTiming:
    totals = [u + c for u, c in zip(upload_ms, compute_ms)]
    return RowTiming(
        upload_mean_ms=statistics.fmean(upload_ms),
        compute_mean_ms=statistics.fmean(compute_ms),
        total_mean_ms=statistics.fmean(totals),
        total_stddev_ms=statistics.stdev(totals) if len(totals) > 1 else 0.0,
    )


def report_from_totals(
    functions: tuple[str, ...],
    enclave: dict[str, tuple[float, float, float, float]],
    plain: dict[str, tuple[float, float, float, float]],
) -> BenchmarkReport:
    """Build a report from externally supplied (upload, compute, total,
    stddev) tuples, e.g. previously published measurements."""
    report = BenchmarkReport(functions=functions)
    for fn in functions:
        report.rows[fn] = {
            MODE_ENCLAVE: RowTiming(*enclave[fn]),
            MODE_PLAIN: RowTiming(*plain[fn]),
        }
    return report


# ---------------------------------------------------------------------------
# Protocol stacks
# ---------------------------------------------------------------------------


@dataclass
class EnclaveStack:
    """A full in-process deployment: middleware, enclave, users, recipient."""

    spec: AggregationSpec
    recipient: RecipientActor
    enclave_core: object
    enclave: EnclaveClient
    middleware_core: MiddlewareCore
    middleware: MiddlewareClient
    users: list[UserActor]


def build_enclave_stack(
    spec: AggregationSpec,
    user_payloads: list[tuple[str, str]],
    *,
    recipient: RecipientActor | None = None,
    manufacturer: crypto.SigningKeyPair | None = None,
    model_bytes: bytes | None = None,
    authorize: bool = True,
    submit: bool = True,
) -> EnclaveStack:
    """Deploy everything locally and optionally run setup traffic.

    user_payloads pairs (user_id, payload text); one UserActor is created
    per distinct user_id, in first-appearance order.
    """
    manufacturer = manufacturer or crypto.generate_signing_keypair()
    recipient = recipient or RecipientActor(
        crypto.generate_rsa_keypair(), manufacturer.public_key
    )
    identity, enclave_core = recipient.deploy(spec, manufacturer, model_bytes)
    enclave = EnclaveClient(LocalTransport(enclave_dispatch(enclave_core)))
    middleware_core = MiddlewareCore()
    middleware = MiddlewareClient(
        LocalTransport(middleware_dispatch(middleware_core, enclave))
    )
    users_by_id: dict[str, UserActor] = {}
    for user_id, _ in user_payloads:
        if user_id not in users_by_id:
            users_by_id[user_id] = UserActor(
                user_id, middleware, identity, manufacturer.public_key
            )
    users = list(users_by_id.values())
    if authorize:
        for user in users:
            outcome = user.authorize(enclave)
            if not outcome.authorized:  # pragma: no cover - defensive
                raise InvalidArgument(f"setup authorization failed: {outcome.reason}")
    if submit:
        for user_id, payload in user_payloads:
            users_by_id[user_id].submit(payload.encode("utf-8"))
    return EnclaveStack(
        spec=spec,
        recipient=recipient,
        enclave_core=enclave_core,
        enclave=enclave,
        middleware_core=middleware_core,
        middleware=middleware,
        users=users,
    )


def run_enclave_once(
    spec: AggregationSpec,
    user_payloads: list[tuple[str, str]],
    *,
    recipient: RecipientActor | None = None,
    manufacturer: crypto.SigningKeyPair | None = None,
    model_bytes: bytes | None = None,
):
    """One full protocol pass; returns the recipient's CollectedResult."""
    stack = build_enclave_stack(
        spec,
        user_payloads,
        recipient=recipient,
        manufacturer=manufacturer,
        model_bytes=model_bytes,
    )
    stack.middleware.forward()
    return stack.recipient.collect(stack.enclave, spec)


def run_plain_once(
    spec: AggregationSpec, user_payloads: list[tuple[str, str]]
) -> wire.PlainResultMsg:
    """The same aggregation over the no-crypto twin."""
    core = PlainCore(spec)
    client = PlainClient(LocalTransport(plain_dispatch(core)))
    batch = wire.PlainBatchMsg(
        records=[wire.PlainRecordMsg(user_id=u, payload=p) for u, p in user_payloads]
    )
    client.upload_batch(batch)
    return client.trigger()


# ---------------------------------------------------------------------------
# The benchmark itself
# ---------------------------------------------------------------------------


def _user_ids(n: int) -> list[str]:
    return [f"user-{i:05d}" for i in range(n)]


def run_benchmark(config: BenchConfig) -> BenchmarkReport:
    """Measure every configured function in both modes."""
    report = BenchmarkReport(functions=tuple(config.functions))
    for name in config.functions:
        rng = workload_rng(config.seed, name)
        payloads = generate_payloads(name, config, rng)
        pairs = list(zip(_user_ids(config.n_users), payloads))
        spec = make_spec(name, config)
        enclave_row = _time_enclave_mode(spec, pairs, config, model_bytes_for(name))
        plain_row = _time_plain_mode(spec, pairs, config)
        report.rows[name] = {MODE_ENCLAVE: enclave_row, MODE_PLAIN: plain_row}
    return report


def _time_enclave_mode(
    spec: AggregationSpec,
    pairs: list[tuple[str, str]],
    config: BenchConfig,
    model_bytes: bytes | None,
) -> RowTiming:
    stack = build_enclave_stack(spec, pairs, model_bytes=model_bytes)
    upload_ms: list[float] = []
    compute_ms: list[float] = []
    for _ in range(config.iterations):
        stack.enclave_core.reset_records()
        t0 = time.perf_counter()
        ack = stack.middleware.forward()
        t1 = time.perf_counter()
        stack.enclave.trigger()
        t2 = time.perf_counter()
        if ack.accepted != len(pairs):  # pragma: no cover - defensive
            raise InvalidArgument(
                f"benchmark forward accepted {ack.accepted} of {len(pairs)} records"
            )
        upload_ms.append((t1 - t0) * 1000.0)
        compute_ms.append((t2 - t1) * 1000.0)
    # Sanity outside the timed loop: the sealed result must open and parse.
    stack.recipient.collect(stack.enclave, spec)
    return row_from_samples(upload_ms, compute_ms)


def _time_plain_mode(
    spec: AggregationSpec, pairs: list[tuple[str, str]], config: BenchConfig
) -> RowTiming:
    core = PlainCore(spec)
    client = PlainClient(LocalTransport(plain_dispatch(core)))
    batch = wire.PlainBatchMsg(
        records=[wire.PlainRecordMsg(user_id=u, payload=p) for u, p in pairs]
    )
    upload_ms: list[float] = []
    compute_ms: list[float] = []
    for _ in range(config.iterations):
        core.reset_records()
        t0 = time.perf_counter()
        client.upload_batch(batch)
        t1 = time.perf_counter()
        client.trigger()
        t2 = time.perf_counter()
        upload_ms.append((t1 - t0) * 1000.0)
        compute_ms.append((t2 - t1) * 1000.0)
    return row_from_samples(upload_ms, compute_ms)


# ---------------------------------------------------------------------------
# Cross-mode agreement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgreementOutcome:
    function: str
    seed: int
    size: int
    matched: bool
    enclave_text: str
    plain_text: str


def results_agree(
    spec: AggregationSpec, text_a: str, text_b: str, rel_tol: float = 1e-9
) -> bool:
    """Semantic equality of two serialized results for ``spec``.

    Integer results must match exactly; real-valued results (the fit
    coefficients) within ``rel_tol`` relative tolerance.
    """
    value_a = aggregation.parse_result_text(spec, text_a)
    value_b = aggregation.parse_result_text(spec, text_b)
    if isinstance(spec, Lsf):
        return math.isclose(
            value_a.c0, value_b.c0, rel_tol=rel_tol, abs_tol=rel_tol
        ) and math.isclose(value_a.c1, value_b.c1, rel_tol=rel_tol, abs_tol=rel_tol)
    if isinstance(spec, Histogram):
        return value_a.counts == value_b.counts
    return value_a == value_b


def run_cross_mode_check(
    functions: tuple[str, ...],
    seeds: tuple[int, ...],
    sizes: tuple[int, ...],
    base_config: BenchConfig | None = None,
) -> list[AgreementOutcome]:
    """Run both modes over identical workloads and compare the results."""
    outcomes: list[AgreementOutcome] = []
    manufacturer = crypto.generate_signing_keypair()
    recipient_pair = crypto.generate_rsa_keypair()
    for name in functions:
        for seed in seeds:
            for size in sizes:
                config = BenchConfig(
                    n_users=size,
                    iterations=1,
                    functions=(name,),
                    seed=seed,
                    **(
                        {}
                        if base_config is None
                        else {
                            k: getattr(base_config, k)
                            for k in (
                                "sum_low",
                                "sum_high",
                                "hist_min",
                                "hist_max",
                                "hist_bins",
                                "lsf_intercept",
                                "lsf_slope",
                                "lsf_noise",
                                "lsf_x_max",
                            )
                        }
                    ),
                )
                rng = workload_rng(seed, name, salt=str(size))
                payloads = generate_payloads(name, config, rng)
                pairs = list(zip(_user_ids(size), payloads))
                spec = make_spec(name, config)
                recipient = RecipientActor(recipient_pair, manufacturer.public_key)
                collected = run_enclave_once(
                    spec,
                    pairs,
                    recipient=recipient,
                    manufacturer=manufacturer,
                    model_bytes=model_bytes_for(name),
                )
                plain_result = run_plain_once(spec, pairs)
                outcomes.append(
                    AgreementOutcome(
                        function=name,
                        seed=seed,
                        size=size,
                        matched=results_agree(
                            spec, collected.result_text, plain_result.result_text
                        ),
                        enclave_text=collected.result_text,
                        plain_text=plain_result.result_text,
                    )
                )
    return outcomes
