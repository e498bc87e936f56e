"""Result records written to the CSV and JSON outputs."""

from typing import Any

from pydantic import BaseModel, ConfigDict, Field, computed_field

from convflat.core.constants import (
    BENCH_CSV_COLUMNS,
    RUN_CSV_COLUMNS,
    STOP_COMPARE_CSV_COLUMNS,
    SWEEP_CSV_COLUMNS,
    OptimizerKind,
    StopPolicyKind,
    StopReason,
    TraceMethod,
)


class TraceReport(BaseModel):
    """One trace/flatness measurement of one method on one benchmark run."""

    method: TraceMethod
    trace: float
    flatness: float | None = None
    reference: float | None = None
    time_s: float = Field(0.0, ge=0)
    std_error: float | None = None  # Hutchinson only
    run_index: int = 0

    model_config = ConfigDict(frozen=True)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def abs_error(self) -> float | None:
        if self.reference is None:
            return None
        return abs(self.trace - self.reference)


class MethodSummary(BaseModel):
    """Mean and std over benchmark runs of one method; empty statistics when skipped."""

    method: TraceMethod
    batches: int
    kernels: int
    runs: int
    trace_mean: float | None = None
    trace_std: float | None = None
    abs_err_mean: float | None = None
    abs_err_std: float | None = None
    flatness_mean: float | None = None
    flatness_std: float | None = None
    time_mean_s: float | None = None
    skipped: bool = False

    model_config = ConfigDict(frozen=True)

    def as_row(self) -> dict[str, Any]:
        return {col: getattr(self, col) for col in BENCH_CSV_COLUMNS}


class RunRecord(BaseModel):
    """Metrics of one completed training epoch."""

    seed: int
    optimizer: OptimizerKind
    lr: float
    batch_size: int
    epoch: int = Field(..., ge=1)
    train_loss: float
    val_loss: float
    trace: float
    flatness: float
    val_acc: float
    time_s: float = Field(0.0, ge=0)
    stop_reason: StopReason | None = None
    # Mean softmax curvature on the evaluation batch; not part of the CSV layout
    alpha: float = float("nan")

    model_config = ConfigDict(frozen=True)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def gen_gap(self) -> float:
        return self.val_loss - self.train_loss

    @property
    def diverged(self) -> bool:
        return self.stop_reason is StopReason.DIVERGED

    def as_row(self) -> dict[str, Any]:
        return {col: getattr(self, col) for col in RUN_CSV_COLUMNS}


class SweepRow(BaseModel):
    seed: int
    optimizer: OptimizerKind
    lr: float
    batch_size: int
    noise_frac: float
    epochs_run: int
    val_acc: float
    gen_gap: float
    flatness: float
    trace: float
    stop_reason: StopReason | None

    model_config = ConfigDict(frozen=True)

    @classmethod
    def from_final(cls, record: RunRecord, noise_frac: float) -> "SweepRow":
        return cls(
            seed=record.seed,
            optimizer=record.optimizer,
            lr=record.lr,
            batch_size=record.batch_size,
            noise_frac=noise_frac,
            epochs_run=record.epoch,
            val_acc=record.val_acc,
            gen_gap=record.gen_gap,
            flatness=record.flatness,
            trace=record.trace,
            stop_reason=record.stop_reason,
        )

    def as_row(self) -> dict[str, Any]:
        return {col: getattr(self, col) for col in SWEEP_CSV_COLUMNS}


class CorrelationStats(BaseModel):
    """Regression and correlation statistics; serialised as a flat JSON object."""

    slope: float
    intercept: float
    slope_std_error: float
    slope_p_value: float
    r_squared: float
    pearson_r: float
    pearson_ci_low: float
    pearson_ci_high: float
    pearson_p_value: float
    spearman_rho: float
    spearman_p_value: float
    n: int

    model_config = ConfigDict(frozen=True)


class EnvelopeCalibration(BaseModel):
    c1: float
    c2: float
    method: str = "offset_max"
    delta: float
    sample_size: int
    feature_dim: int
    calibration_size: int
    holdout_size: int
    holdout_coverage: float

    model_config = ConfigDict(frozen=True)


class StopSummary(BaseModel):
    strategy: StopPolicyKind
    runs: int
    mean_epochs: float
    mean_val_acc: float
    mean_final_flatness: float
    mean_time_s: float

    model_config = ConfigDict(frozen=True)

    def as_row(self) -> dict[str, Any]:
        return {col: getattr(self, col) for col in STOP_COMPARE_CSV_COLUMNS}
