"""Benchmark plumbing: statistics, report arithmetic, tiny end-to-end runs."""

from __future__ import annotations

import csv
import io
import math
import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sealedagg import aggregation, bench
from sealedagg.errors import InvalidArgument

# (upload, compute, total, stddev) per function, milliseconds — the
# published measurements this tool's report format mirrors
PUBLISHED_ENCLAVE = {
    "sum": (1519.0, 59.0, 1578.0, 46.0),
    "svm": (2142.0, 126.0, 2268.0, 27.0),
    "lsf": (1722.0, 56.0, 1779.0, 29.0),
    "histogram": (1509.0, 46.0, 1555.0, 36.0),
}
PUBLISHED_PLAIN = {
    "sum": (1050.0, 32.0, 1082.0, 20.0),
    "svm": (1216.0, 80.0, 1296.0, 25.0),
    "lsf": (970.0, 27.0, 997.0, 16.0),
    "histogram": (998.0, 25.0, 1023.0, 19.0),
}


class TestGeometricMean:
    def test_known_value(self):
        assert bench.geometric_mean([2.0, 8.0]) == pytest.approx(4.0, rel=1e-12)

    def test_single_value(self):
        assert bench.geometric_mean([7.5]) == pytest.approx(7.5, rel=1e-12)

    @given(st.lists(st.floats(min_value=1e-3, max_value=1e6), min_size=1, max_size=12))
    def test_matches_product_root(self, values):
        # independent path: nth root of the straight product
        expected = math.prod(values) ** (1.0 / len(values))
        assert bench.geometric_mean(values) == pytest.approx(expected, rel=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgument):
            bench.geometric_mean([])

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_nonpositive_rejected(self, bad):
        with pytest.raises(InvalidArgument):
            bench.geometric_mean([1.0, bad])


class TestRowFromSamples:
    def test_means_and_stddev(self):
        row = bench.row_from_samples([10.0, 20.0], [1.0, 3.0])
        assert row.upload_mean_ms == 15.0
        assert row.compute_mean_ms == 2.0
        assert row.total_mean_ms == 17.0
        assert row.total_stddev_ms == pytest.approx(statistics.stdev([11.0, 23.0]))

    def test_single_sample_has_zero_stddev(self):
        assert bench.row_from_samples([5.0], [1.0]).total_stddev_ms == 0.0


def published_report() -> bench.BenchmarkReport:
    return bench.report_from_totals(
        ("sum", "svm", "lsf", "histogram"), PUBLISHED_ENCLAVE, PUBLISHED_PLAIN
    )


class TestReportArithmetic:
    def test_published_geomeans(self):
        report = published_report()
        assert report.geomean_total(bench.MODE_ENCLAVE) == pytest.approx(1773, rel=5e-3)
        assert report.geomean_total(bench.MODE_PLAIN) == pytest.approx(1094, rel=5e-3)

    def test_published_overhead(self):
        assert published_report().overhead() == pytest.approx(1.62, abs=0.01)

    def test_render_text_shape(self):
        text = published_report().render_text()
        lines = text.splitlines()
        assert lines[0].split() == [
            "function", "mode", "upload_ms", "compute_ms", "total_ms", "stddev_ms",
        ]
        body = [l for l in lines if l.startswith(("sum", "svm", "lsf", "histogram"))]
        assert len(body) == 8  # 4 functions x 2 modes
        assert any(l.startswith("geometric mean of totals:") for l in lines)
        assert lines[-1].startswith("overhead (enclave/plain): 1.62")
        assert text.endswith("\n")

    def test_render_csv_round_trips(self):
        report = published_report()
        rows = list(csv.reader(io.StringIO(report.render_csv())))
        assert rows[0] == ["function", "mode", "upload_ms", "compute_ms", "total_ms", "stddev_ms"]
        assert len(rows) == 1 + 8 + 3  # header, cells, geomeans, overhead
        cell = next(r for r in rows if r[:2] == ["svm", "enclave"])
        assert tuple(float(x) for x in cell[2:]) == PUBLISHED_ENCLAVE["svm"]
        overhead = rows[-1]
        assert overhead[0] == "overhead"
        assert float(overhead[4]) == pytest.approx(report.overhead(), rel=1e-12)


class TestConfig:
    def test_rejects_unknown_function(self):
        with pytest.raises(InvalidArgument, match="unknown benchmark functions"):
            bench.BenchConfig(functions=("sum", "zone-count"))

    @pytest.mark.parametrize("kwargs", [{"n_users": 0}, {"iterations": 0}])
    def test_rejects_nonpositive_counts(self, kwargs):
        with pytest.raises(InvalidArgument):
            bench.BenchConfig(**kwargs)

    def test_workload_rng_is_deterministic(self):
        a = bench.workload_rng(7, "sum").random()
        b = bench.workload_rng(7, "sum").random()
        c = bench.workload_rng(7, "sum", salt="x").random()
        assert a == b != c


class TestPayloads:
    def test_sum_payloads_are_ints_in_range(self):
        config = bench.BenchConfig(n_users=50, sum_low=5, sum_high=9)
        rng = bench.workload_rng(0, "sum")
        values = [int(p) for p in bench.generate_payloads("sum", config, rng)]
        assert len(values) == 50
        assert all(5 <= v < 9 for v in values)

    def test_histogram_payloads_round_trip_exactly(self):
        config = bench.BenchConfig(n_users=20)
        rng = bench.workload_rng(1, "histogram")
        for p in bench.generate_payloads("histogram", config, rng):
            v = aggregation.parse_real_payload(p)
            assert repr(v) == p  # repr survives the wire without rounding
            assert config.hist_min <= v <= config.hist_max

    def test_lsf_payloads_are_pairs(self):
        config = bench.BenchConfig(n_users=10)
        rng = bench.workload_rng(2, "lsf")
        for p in bench.generate_payloads("lsf", config, rng):
            x, y = p.split(",")
            aggregation.parse_real_payload(x)
            aggregation.parse_real_payload(y)

    def test_svm_payloads_come_from_packaged_rows(self):
        config = bench.BenchConfig(n_users=30)
        rng = bench.workload_rng(3, "svm")
        rows = set(bench.packaged_feature_rows())
        assert set(bench.generate_payloads("svm", config, rng)) <= rows

    def test_make_spec_shapes(self):
        config = bench.BenchConfig(hist_bins=7)
        assert isinstance(bench.make_spec("sum", config), aggregation.Sum)
        assert bench.make_spec("histogram", config).bins == 7
        assert isinstance(bench.make_spec("lsf", config), aggregation.Lsf)
        svm = bench.make_spec("svm", config)
        assert len(svm.model.support_vectors) >= 1
        with pytest.raises(InvalidArgument):
            bench.make_spec("median", config)


class TestResultsAgree:
    def test_integer_results_must_match_exactly(self):
        assert bench.results_agree(aggregation.Sum(), "42", "42")
        assert not bench.results_agree(aggregation.Sum(), "42", "43")

    def test_lsf_within_relative_tolerance(self):
        spec = aggregation.Lsf()
        a = "1.0,2.0"
        assert bench.results_agree(spec, a, "1.0000000000001,2.0")
        assert not bench.results_agree(spec, a, "1.001,2.0")


@pytest.mark.slow
class TestSmallRuns:
    def test_run_benchmark_times_every_cell(self):
        config = bench.BenchConfig(
            n_users=4, iterations=2, functions=("sum", "histogram")
        )
        report = bench.run_benchmark(config)
        assert set(report.rows) == {"sum", "histogram"}
        for fn in report.functions:
            for mode in (bench.MODE_ENCLAVE, bench.MODE_PLAIN):
                row = report.rows[fn][mode]
                assert row.total_mean_ms > 0.0
                assert row.total_mean_ms == pytest.approx(
                    row.upload_mean_ms + row.compute_mean_ms, rel=1e-9
                )
        assert report.overhead() > 0.0

    def test_cross_mode_agreement_small(self):
        outcomes = bench.run_cross_mode_check(
            functions=("sum", "lsf", "svm"), seeds=(0, 1), sizes=(3, 17)
        )
        assert len(outcomes) == 12
        for outcome in outcomes:
            assert outcome.matched, (
                outcome.function, outcome.seed, outcome.size,
                outcome.enclave_text, outcome.plain_text,
            )
