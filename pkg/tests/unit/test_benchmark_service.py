import numpy as np
import pytest

from convflat.core.constants import TraceMethod, WeightInit
from convflat.schemas.geometry import ConvSpec
from convflat.services import benchmark_service
from convflat.services.benchmark_service import (
    BenchmarkProtocol,
    benchmark_methods,
    run_benchmark_once,
    summarize,
)

# --- Fixtures ---


@pytest.fixture
def table_spec():
    """Provides the 3-channel 10x10, 3x3-kernel geometry with ten filters."""
    return ConvSpec.square(c_in=3, c_out=10, hw=10, ksize=3)


@pytest.fixture
def quick_protocol():
    """Provides a small two-run protocol with every method enabled and no timing."""
    spec = ConvSpec.square(c_in=2, c_out=3, hw=6, ksize=3)
    return BenchmarkProtocol(
        spec=spec, batch_size=3, runs=2, probes=64, seed=7, record_timing=False
    )


def by_method(reports):
    return {r.method: r for r in reports}


# --- Test Cases ---


def test_reference_selection(table_spec):
    protocol = BenchmarkProtocol(spec=table_spec, batch_size=2)
    assert protocol.reference_method() is TraceMethod.FINITE_DIFF

    no_fd = protocol.model_copy(update={"use_fd": False})
    assert no_fd.reference_method() is TraceMethod.DENSE_ANALYTIC

    over_caps = protocol.model_copy(update={"fd_cap": 100, "dense_cap": 100})
    assert not over_caps.enabled(TraceMethod.FINITE_DIFF)
    assert not over_caps.enabled(TraceMethod.DENSE_ANALYTIC)
    assert over_caps.enabled(TraceMethod.HUTCHINSON)
    assert over_caps.reference_method() is TraceMethod.SYMBOLIC


def test_single_run_agrees_with_oracles(quick_protocol):
    reports = by_method(run_benchmark_once(quick_protocol, 0))

    assert set(reports) == set(TraceMethod)
    symbolic = reports[TraceMethod.SYMBOLIC]
    fd = reports[TraceMethod.FINITE_DIFF]
    assert fd.reference is None
    assert fd.abs_error is None
    assert symbolic.reference == fd.trace
    assert symbolic.abs_error < 1e-4 * symbolic.trace
    assert reports[TraceMethod.DENSE_ANALYTIC].trace == pytest.approx(symbolic.trace, rel=1e-10)
    assert reports[TraceMethod.HUTCHINSON].std_error > 0
    assert all(r.time_s == 0.0 for r in reports.values())


def test_non_symbolic_flatness_is_kernel_norm_times_trace(quick_protocol):
    """Test that every method's flatness is sum_t <k_t, k_t> = 18 * 3 times its trace."""
    reports = by_method(run_benchmark_once(quick_protocol, 1))
    for report in reports.values():
        assert report.flatness == pytest.approx(54.0 * report.trace, rel=1e-9)


def test_runs_are_seeded_by_index(quick_protocol):
    first = run_benchmark_once(quick_protocol, 0)
    assert run_benchmark_once(quick_protocol, 0) == first
    assert run_benchmark_once(quick_protocol, 1)[0].trace != first[0].trace


def test_benchmark_methods_reports_every_run(quick_protocol):
    reports = benchmark_methods(quick_protocol, jobs=1)
    assert len(reports) == 2 * len(TraceMethod)
    assert [r.run_index for r in reports] == [0] * 4 + [1] * 4


def test_benchmark_methods_uses_ordered_map(quick_protocol, mocker):
    spy = mocker.spy(benchmark_service, "ordered_map")
    benchmark_methods(quick_protocol, jobs=1)
    spy.assert_called_once()
    assert spy.call_args.args[2] == 1


def test_disabled_methods_become_skipped_rows(quick_protocol):
    protocol = quick_protocol.model_copy(update={"use_fd": False, "dense_cap": 10})
    rows = summarize(benchmark_methods(protocol, jobs=1), protocol)

    assert [r.method for r in rows] == list(TraceMethod)
    skipped = {r.method for r in rows if r.skipped}
    assert skipped == {TraceMethod.FINITE_DIFF, TraceMethod.DENSE_ANALYTIC}
    for row in rows:
        if row.skipped:
            assert row.trace_mean is None and row.abs_err_mean is None
    # symbolic is its own reference here
    assert rows[0].abs_err_mean is None


def test_summary_uses_population_std(quick_protocol):
    reports = benchmark_methods(quick_protocol, jobs=1)
    rows = {r.method: r for r in summarize(reports, quick_protocol)}
    traces = [r.trace for r in reports if r.method is TraceMethod.SYMBOLIC]

    symbolic = rows[TraceMethod.SYMBOLIC]
    assert symbolic.trace_mean == pytest.approx(np.mean(traces))
    assert symbolic.trace_std == pytest.approx(np.std(traces, ddof=0))
    assert symbolic.abs_err_mean is not None
    assert rows[TraceMethod.FINITE_DIFF].abs_err_mean is None
    assert symbolic.as_row()["batches"] == 3
    assert symbolic.as_row()["kernels"] == 3


def test_ones_weights_protocol_trace_level(table_spec):
    """Test the ten-filter, five-sample ones-weights protocol over 30 runs."""
    protocol = BenchmarkProtocol(
        spec=table_spec, batch_size=5, runs=30, use_fd=False, probes=500, record_timing=False
    )
    rows = {r.method: r for r in summarize(benchmark_methods(protocol, jobs=1), protocol)}

    symbolic = rows[TraceMethod.SYMBOLIC]
    assert 5.93 <= symbolic.trace_mean <= 6.27
    assert 1550.0 <= symbolic.flatness_mean <= 1750.0
    assert rows[TraceMethod.DENSE_ANALYTIC].abs_err_mean is None
    assert symbolic.abs_err_mean < 1e-10
    assert 0.005 <= rows[TraceMethod.HUTCHINSON].abs_err_mean <= 0.12


def test_random_weights_protocol_is_nearly_flat(table_spec):
    protocol = BenchmarkProtocol(
        spec=table_spec,
        batch_size=10,
        runs=10,
        weights=WeightInit.RANDOM,
        use_fd=False,
        probes=16,
        record_timing=False,
    )
    rows = {r.method: r for r in summarize(benchmark_methods(protocol, jobs=1), protocol)}
    symbolic = rows[TraceMethod.SYMBOLIC]
    assert 5.8 <= symbolic.trace_mean <= 6.4
    assert symbolic.flatness_mean <= 1e-5
