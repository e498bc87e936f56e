"""Trace benchmark: symbolic trace against finite differences, Hutchinson and the dense Hessian.

Each run draws fresh uniform[0, 1) inputs and random labels from a generator
seeded with ``seed + run_index``, so the statistics do not depend on whether
runs execute serially or in a process pool.
"""

import logging
import time
from collections.abc import Callable
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from convflat.core.config import settings
from convflat.core.constants import RANDOM_WEIGHT_SCALE, TraceMethod, WeightInit
from convflat.numerics.flatness import (
    dense_hessian_batch,
    relative_flatness,
    symbolic_trace_batch,
)
from convflat.numerics.head import HeadOutput, KernelBank, forward_from_summary, one_hot
from convflat.numerics.oracles import (
    ProbeConfig,
    batch_hvp,
    fd_trace,
    hutchinson_trace,
    make_batch_loss,
)
from convflat.numerics.tensor import PatchSummary, average_patch, extract_patches_batch
from convflat.schemas.geometry import ConvSpec
from convflat.schemas.records import MethodSummary, TraceReport
from convflat.services.parallel import ordered_map

logger = logging.getLogger(__name__)


class BenchmarkProtocol(BaseModel):
    spec: ConvSpec
    batch_size: int = Field(..., ge=1)
    runs: int = Field(30, ge=1)
    weights: WeightInit = WeightInit.ONES
    probes: int = Field(500, ge=1)
    seed: int = 0
    use_fd: bool = True
    fd_cap: int | None = Field(None, ge=1)
    dense_cap: int | None = Field(None, ge=1)
    record_timing: bool = True

    model_config = ConfigDict(frozen=True, extra="forbid")

    @property
    def fd_limit(self) -> int:
        return self.fd_cap or settings.FD_PARAM_CAP

    @property
    def dense_limit(self) -> int:
        return self.dense_cap or settings.DENSE_HESSIAN_CAP

    def enabled(self, method: TraceMethod) -> bool:
        n = self.spec.param_count
        if method is TraceMethod.FINITE_DIFF:
            return self.use_fd and n <= self.fd_limit
        if method is TraceMethod.DENSE_ANALYTIC:
            return n <= self.dense_limit
        return True

    def reference_method(self) -> TraceMethod:
        """fd when enabled, else the dense Hessian when under its cap, else symbolic."""
        for method in (TraceMethod.FINITE_DIFF, TraceMethod.DENSE_ANALYTIC):
            if self.enabled(method):
                return method
        return TraceMethod.SYMBOLIC


class _MethodValue(NamedTuple):
    trace: float
    flatness: float | None = None
    std_error: float | None = None


def _timed(enabled: bool, fn: Callable[[], _MethodValue]) -> tuple[_MethodValue, float]:
    start = time.perf_counter()
    value = fn()
    return value, (time.perf_counter() - start) if enabled else 0.0


def _initial_kernels(protocol: BenchmarkProtocol, rng: np.random.Generator) -> KernelBank:
    if protocol.weights is WeightInit.ONES:
        return KernelBank.ones(protocol.spec)
    return KernelBank.uniform(protocol.spec, rng, 0.0, 1.0).scaled(RANDOM_WEIGHT_SCALE)


def run_benchmark_once(protocol: BenchmarkProtocol, run_index: int) -> list[TraceReport]:
    """All enabled methods on one freshly drawn batch."""
    spec = protocol.spec
    rng = np.random.default_rng(protocol.seed + run_index)
    x = rng.uniform(0.0, 1.0, size=(protocol.batch_size, spec.c_in, spec.h, spec.w))
    labels = one_hot(rng.integers(0, spec.c_out, size=protocol.batch_size), spec.c_out)
    kernels = _initial_kernels(protocol, rng)
    probe_seed = int(rng.integers(0, 2**32))
    # table-variant flatness is sum_t <k_t, k_t> times the trace
    kernel_norm = float(kernels.sq_norms().sum())

    def head() -> tuple[HeadOutput, PatchSummary]:
        summary = average_patch(extract_patches_batch(x, spec))
        return forward_from_summary(summary, kernels, labels), summary

    def symbolic() -> _MethodValue:
        out, summary = head()
        return _MethodValue(
            symbolic_trace_batch(out, summary), relative_flatness(out, summary, kernels)
        )

    def finite_diff() -> _MethodValue:
        loss = make_batch_loss(extract_patches_batch(x, spec), labels)
        return _MethodValue(fd_trace(loss, kernels, cap=protocol.fd_limit))

    def hutchinson() -> _MethodValue:
        out, summary = head()
        estimate, std_error = hutchinson_trace(
            lambda v: batch_hvp(out, summary, v),
            spec.param_count,
            ProbeConfig(n_probes=protocol.probes, seed=probe_seed),
            batched=True,
        )
        return _MethodValue(estimate, std_error=std_error)

    def dense_analytic() -> _MethodValue:
        out, summary = head()
        h = dense_hessian_batch(out, summary, cap=protocol.dense_limit)
        return _MethodValue(float(np.trace(h)))

    runners: dict[TraceMethod, Callable[[], _MethodValue]] = {
        TraceMethod.SYMBOLIC: symbolic,
        TraceMethod.FINITE_DIFF: finite_diff,
        TraceMethod.HUTCHINSON: hutchinson,
        TraceMethod.DENSE_ANALYTIC: dense_analytic,
    }
    results = {
        method: _timed(protocol.record_timing, runner)
        for method, runner in runners.items()
        if protocol.enabled(method)
    }

    ref_method = protocol.reference_method()
    reference = results[ref_method][0].trace
    reports = []
    for method, (value, elapsed) in results.items():
        flatness = value.flatness if value.flatness is not None else kernel_norm * value.trace
        reports.append(
            TraceReport(
                method=method,
                trace=value.trace,
                flatness=flatness,
                reference=None if method is ref_method else reference,
                time_s=elapsed,
                std_error=value.std_error,
                run_index=run_index,
            )
        )
    logger.debug(
        "Benchmark run finished",
        extra={"props": {"run": run_index, "reference": ref_method.value, "trace": reference}},
    )
    return reports


def _run_task(task: tuple[BenchmarkProtocol, int]) -> list[TraceReport]:
    protocol, run_index = task
    return run_benchmark_once(protocol, run_index)


def benchmark_methods(protocol: BenchmarkProtocol, jobs: int | None = 1) -> list[TraceReport]:
    """Reports of every enabled method for every run, in run order."""
    skipped = [m.value for m in TraceMethod if not protocol.enabled(m)]
    if skipped:
        logger.warning(
            f"Skipping disabled or over-cap methods: {', '.join(skipped)}",
            extra={"props": {"param_count": protocol.spec.param_count}},
        )
    logger.info(
        "Starting trace benchmark",
        extra={
            "props": {
                "batches": protocol.batch_size,
                "kernels": protocol.spec.c_out,
                "runs": protocol.runs,
                "weights": protocol.weights.value,
            }
        },
    )
    tasks = [(protocol, i) for i in range(protocol.runs)]
    reports: list[TraceReport] = []
    for run_reports in ordered_map(_run_task, tasks, jobs):
        reports.extend(run_reports)
    return reports


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def summarize(reports: list[TraceReport], protocol: BenchmarkProtocol) -> list[MethodSummary]:
    """Mean and population std over runs, one row per method in fixed order."""
    rows = []
    for method in TraceMethod:
        base = {
            "method": method,
            "batches": protocol.batch_size,
            "kernels": protocol.spec.c_out,
            "runs": protocol.runs,
        }
        mine = [r for r in reports if r.method is method]
        if not protocol.enabled(method) or not mine:
            rows.append(MethodSummary(**base, skipped=True))
            continue
        trace_mean, trace_std = _mean_std([r.trace for r in mine])
        flat_mean, flat_std = _mean_std([r.flatness for r in mine if r.flatness is not None])
        errors = [r.abs_error for r in mine if r.abs_error is not None]
        err_mean, err_std = _mean_std(errors) if errors else (None, None)
        rows.append(
            MethodSummary(
                **base,
                trace_mean=trace_mean,
                trace_std=trace_std,
                abs_err_mean=err_mean,
                abs_err_std=err_std,
                flatness_mean=flat_mean,
                flatness_std=flat_std,
                time_mean_s=float(np.mean([r.time_s for r in mine])),
            )
        )
    return rows
