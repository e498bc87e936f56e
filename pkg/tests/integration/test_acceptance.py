"""End-to-end checks of the benchmark and training experiments at full size.

These runs take minutes; they are marked ``slow`` and deselected by default.
Run them with ``pytest -m slow``.
"""

import time
from collections import defaultdict

import numpy as np
import pytest

from convflat.core.constants import (
    EvalSplit,
    OptimizerKind,
    StopPolicyKind,
    StopReason,
    TraceMethod,
    WeightInit,
)
from convflat.experiments.bound import calibrate_envelope
from convflat.experiments.early_stop_study import compare_stopping_strategies
from convflat.experiments.statistics import correlate
from convflat.experiments.sweep import build_setup, run_sweep
from convflat.numerics.flatness import dense_hessian_batch, symbolic_trace_batch
from convflat.numerics.head import KernelBank, forward_from_summary, one_hot
from convflat.numerics.oracles import fd_trace, make_batch_loss
from convflat.numerics.tensor import average_patch, extract_patches_batch
from convflat.schemas.dataset import BlobParams
from convflat.schemas.geometry import ConvSpec
from convflat.schemas.training import (
    BackboneConfig,
    EarlyStopPolicy,
    HeadConfig,
    OptimizerConfig,
    StopCompareConfig,
    SweepConfig,
    SweepGrid,
    TrainConfig,
)
from convflat.services.benchmark_service import BenchmarkProtocol, benchmark_methods, summarize
from convflat.training.trainer import FeatureSplit, evaluate, init_kernels, train

pytestmark = pytest.mark.slow

# --- Fixtures ---


@pytest.fixture(scope="module")
def default_sweep():
    """Provides the default grid sweep with its dataset size and head dimension."""
    cfg = SweepConfig()
    data, _, spec = build_setup(cfg)
    rows = run_sweep(cfg, jobs=None, record_timing=False)
    usable = [r for r in rows if r.stop_reason is not StopReason.DIVERGED]
    return usable, int(data.train_idx.size), spec.param_count


def bench(batches: int, kernels: int, **kwargs) -> dict:
    protocol = BenchmarkProtocol(
        spec=ConvSpec.square(c_in=3, c_out=kernels, hw=10, ksize=3),
        batch_size=batches,
        **kwargs,
    )
    summaries = summarize(benchmark_methods(protocol, jobs=None), protocol)
    return {s.method: s for s in summaries}


# --- Test Cases ---


def test_symbolic_trace_matches_oracles_on_random_instances():
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    for i in range(100):
        c_out = (2, 5, 10)[i % 3]
        spec = ConvSpec.square(c_in=3, c_out=c_out, hw=10, ksize=3)
        x = rng.uniform(0.0, 1.0, size=(2, 3, 10, 10))
        labels = one_hot(rng.integers(0, c_out, size=2), c_out)
        kernels = KernelBank.uniform(spec, rng, -0.3, 0.3)

        patches = extract_patches_batch(x, spec)
        summary = average_patch(patches)
        out = forward_from_summary(summary, kernels, labels)
        exact = symbolic_trace_batch(out, summary)

        fd = fd_trace(make_batch_loss(patches, labels), kernels)
        dense = float(np.trace(dense_hessian_batch(out, summary)))
        assert abs(fd - exact) <= 1e-4 * abs(exact)
        assert dense == pytest.approx(exact, rel=1e-10)
    assert time.perf_counter() - started < 60.0


def test_ones_weights_benchmark():
    small = bench(5, 10, runs=30, weights=WeightInit.ONES, record_timing=False)
    symbolic = small[TraceMethod.SYMBOLIC]
    assert 5.93 <= symbolic.trace_mean <= 6.27
    assert 1550.0 <= symbolic.flatness_mean <= 1750.0
    assert symbolic.abs_err_mean < 1e-4
    assert 0.005 <= small[TraceMethod.HUTCHINSON].abs_err_mean <= 0.12

    large = bench(100, 100, runs=30, weights=WeightInit.ONES, use_fd=False, record_timing=False)
    assert 6.58 <= large[TraceMethod.SYMBOLIC].trace_mean <= 6.87
    assert large[TraceMethod.FINITE_DIFF].skipped
    assert large[TraceMethod.DENSE_ANALYTIC].skipped
    assert 0.005 <= large[TraceMethod.HUTCHINSON].abs_err_mean <= 0.12


def test_random_weights_benchmark():
    summary = bench(10, 10, runs=30, weights=WeightInit.RANDOM, record_timing=False)
    symbolic = summary[TraceMethod.SYMBOLIC]
    assert 5.9 <= symbolic.trace_mean <= 6.3
    assert symbolic.flatness_mean <= 1e-5


def test_symbolic_trace_is_much_faster_than_finite_differences():
    summary = bench(30, 50, runs=3, weights=WeightInit.ONES, record_timing=True)
    symbolic = summary[TraceMethod.SYMBOLIC].time_mean_s
    fd = summary[TraceMethod.FINITE_DIFF].time_mean_s
    assert fd >= 10.0 * symbolic


def test_flatness_tracks_generalization_gap(default_sweep):
    rows, _, _ = default_sweep
    assert len(rows) >= 40

    stats = correlate([r.flatness for r in rows], [r.gen_gap for r in rows])
    assert stats.spearman_rho > 0.0
    assert stats.spearman_p_value < 0.05
    assert stats.slope > 0.0


def test_calibrated_envelope_covers_held_out_runs(default_sweep):
    rows, sample_size, feature_dim = default_sweep
    calibration = calibrate_envelope(
        [r.flatness for r in rows], [r.gen_gap for r in rows], sample_size, feature_dim, seed=0
    )
    assert calibration.holdout_coverage >= 0.9


def test_flatness_grows_with_label_noise():
    """Test that interpolating noisier labels leaves the fitted minimum sharper.

    Every run trains for the same fixed budget on few samples with a wide
    backbone, so each one fits its training labels, and flatness is read on
    those (noisy) training labels.
    """
    cfg = SweepConfig(
        dataset=BlobParams(samples_per_class=15),
        backbone=BackboneConfig(channels=16),
        optimizer=OptimizerConfig(epochs=300),
        early_stopping=EarlyStopPolicy(kind=StopPolicyKind.NONE),
        eval_split=EvalSplit.TRAIN,
        grid=SweepGrid(
            optimizers=[OptimizerKind.SGD_MOMENTUM],
            learning_rates=[0.02],
            batch_sizes=[10],
            seeds=list(range(8)),
            noise_levels=[0.0, 0.1, 0.2, 0.4],
        ),
    )
    by_noise = defaultdict(list)
    for row in run_sweep(cfg, jobs=None, record_timing=False):
        if row.stop_reason is not StopReason.DIVERGED:
            by_noise[row.noise_frac].append(row.flatness)

    means = [float(np.mean(by_noise[p])) for p in (0.0, 0.1, 0.2, 0.4)]
    assert all(a < b for a, b in zip(means, means[1:], strict=False))


def test_flatness_stopping_ends_flatter():
    summaries = {
        s.strategy: s
        for s in compare_stopping_strategies(StopCompareConfig(), jobs=None, record_timing=False)
    }
    standard = summaries[StopPolicyKind.STANDARD]
    flatness = summaries[StopPolicyKind.FLATNESS]
    assert flatness.runs >= 20
    assert flatness.mean_final_flatness <= standard.mean_final_flatness


def test_softmax_curvature_drops_as_training_converges():
    cfg = TrainConfig(
        dataset=BlobParams(
            class_count=2,
            samples_per_class=40,
            height=6,
            width=6,
            separation=1.0,
            covariance_scale=0.2,
        ),
        backbone=BackboneConfig(channels=8, ksize=3),
        head=HeadConfig(ksize=3),
        early_stopping=EarlyStopPolicy(kind=StopPolicyKind.NONE),
        init_scale=0.01,
    )
    data, backbone, spec = build_setup(cfg)
    val = FeatureSplit(
        summary=backbone.summarize(data.val_inputs, spec),
        labels=one_hot(data.val_labels, spec.c_out),
    )

    converged = 0
    for seed in range(10):
        opt = OptimizerConfig(kind=OptimizerKind.SGD, lr=0.1, batch_size=8, epochs=60, seed=seed)
        start = init_kernels(spec, np.random.default_rng([seed, 0]), cfg.init_scale)
        initial_alpha = evaluate(start, val, val, val).alpha
        assert initial_alpha == pytest.approx(0.5, rel=0.1)

        final = train(data, backbone, spec, opt, cfg.early_stopping, init_scale=cfg.init_scale)[-1]
        if final.val_acc > 0.95:
            converged += 1
            assert final.alpha < initial_alpha
    assert converged >= 10
