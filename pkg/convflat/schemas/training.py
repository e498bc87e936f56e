from pydantic import BaseModel, ConfigDict, Field, field_validator

from convflat.core.constants import (
    DEFAULT_BATCH_SIZES,
    DEFAULT_LEARNING_RATES,
    DEFAULT_NOISE_LEVELS,
    DEFAULT_OPTIMIZERS,
    DEFAULT_SEEDS,
    EvalSplit,
    OptimizerKind,
    StopPolicyKind,
)
from convflat.schemas.dataset import BlobParams


class OptimizerConfig(BaseModel):
    kind: OptimizerKind = OptimizerKind.SGD_MOMENTUM
    # 0 is allowed: a zero-rate run must leave every metric unchanged
    lr: float = Field(0.01, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(50, ge=1)
    seed: int = 0

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("betas")
    @classmethod
    def check_betas(cls, v: tuple[float, float]) -> tuple[float, float]:
        if not all(0.0 < b < 1.0 for b in v):
            raise ValueError("betas must lie in (0, 1)")
        return v


class EarlyStopPolicy(BaseModel):
    kind: StopPolicyKind = StopPolicyKind.STANDARD
    patience: int = Field(10, ge=1)
    threshold: float = Field(0.02, gt=0)
    max_epochs: int | None = Field(None, ge=1)

    model_config = ConfigDict(frozen=True, extra="forbid")


class BackboneConfig(BaseModel):
    """Frozen random feature extractor in front of the trainable block."""

    channels: int = Field(8, ge=1)
    ksize: int = Field(3, ge=1)
    seed: int = 0

    model_config = ConfigDict(frozen=True, extra="forbid")


class HeadConfig(BaseModel):
    ksize: int = Field(3, ge=1)
    stride: int = Field(1, ge=1)
    padding: int = Field(0, ge=0)

    model_config = ConfigDict(frozen=True, extra="forbid")


class ExperimentConfig(BaseModel):
    """Fields shared by every training-based experiment document."""

    dataset: BlobParams = BlobParams()
    backbone: BackboneConfig = BackboneConfig()
    head: HeadConfig = HeadConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    early_stopping: EarlyStopPolicy = EarlyStopPolicy()
    # Half-width of the uniform kernel init; None -> 1/sqrt(d), 0 -> all-zero kernels
    init_scale: float | None = Field(None, ge=0)
    eval_batch_size: int = Field(256, ge=1)
    eval_split: EvalSplit = EvalSplit.VALIDATION

    model_config = ConfigDict(frozen=True, extra="forbid")


class TrainConfig(ExperimentConfig):
    noise_frac: float = Field(0.0, ge=0, le=1)


class SweepGrid(BaseModel):
    optimizers: list[OptimizerKind] = Field(default_factory=lambda: list(DEFAULT_OPTIMIZERS))
    learning_rates: list[float] = Field(default_factory=lambda: list(DEFAULT_LEARNING_RATES))
    batch_sizes: list[int] = Field(default_factory=lambda: list(DEFAULT_BATCH_SIZES))
    seeds: list[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS))
    noise_levels: list[float] = Field(default_factory=lambda: list(DEFAULT_NOISE_LEVELS))

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("optimizers", "learning_rates", "batch_sizes", "seeds", "noise_levels")
    @classmethod
    def non_empty(cls, v: list) -> list:
        if not v:
            raise ValueError("grid axes must be non-empty")
        return v

    @field_validator("learning_rates")
    @classmethod
    def non_negative_rates(cls, v: list[float]) -> list[float]:
        if any(lr < 0 for lr in v):
            raise ValueError("learning rates must be >= 0")
        return v

    @field_validator("batch_sizes")
    @classmethod
    def positive_batches(cls, v: list[int]) -> list[int]:
        if any(b < 1 for b in v):
            raise ValueError("batch sizes must be >= 1")
        return v

    @field_validator("noise_levels")
    @classmethod
    def fractions(cls, v: list[float]) -> list[float]:
        if any(not 0.0 <= p <= 1.0 for p in v):
            raise ValueError("noise levels must lie in [0, 1]")
        return v

    @property
    def size(self) -> int:
        return (
            len(self.optimizers)
            * len(self.learning_rates)
            * len(self.batch_sizes)
            * len(self.seeds)
            * len(self.noise_levels)
        )


class SweepConfig(ExperimentConfig):
    grid: SweepGrid = SweepGrid()


def _stop_compare_policy() -> EarlyStopPolicy:
    return EarlyStopPolicy(max_epochs=100)


class StopCompareConfig(ExperimentConfig):
    early_stopping: EarlyStopPolicy = Field(default_factory=_stop_compare_policy)
    strategies: list[StopPolicyKind] = Field(
        default_factory=lambda: [
            StopPolicyKind.STANDARD,
            StopPolicyKind.FLATNESS,
            StopPolicyKind.COMBINED,
        ]
    )
    seeds: list[int] = Field(default_factory=lambda: list(range(20)))
    noise_frac: float = Field(0.0, ge=0, le=1)

    @field_validator("strategies", "seeds")
    @classmethod
    def non_empty(cls, v: list) -> list:
        if not v:
            raise ValueError("strategies and seeds must be non-empty")
        return v
