import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from convflat.core.exceptions import ValidationError


class BlobParams(BaseModel):
    """Generation parameters of the synthetic Gaussian-blob image task.

    Class ``c`` has mean ``separation * e_(c mod raw_channels)`` in every pixel of
    its channel; each sample adds a per-channel offset and per-pixel noise, both
    scaled by ``covariance_scale``.
    """

    class_count: int = Field(4, ge=2)
    samples_per_class: int = Field(60, ge=1)
    raw_channels: int | None = Field(None, ge=1)
    height: int = Field(8, ge=1)
    width: int = Field(8, ge=1)
    separation: float = 3.0
    covariance_scale: float = 1.0
    val_fraction: float = Field(0.5, gt=0, lt=1)
    seed: int = 0

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("covariance_scale")
    @classmethod
    def check_covariance(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise ValidationError(
                f"Degenerate covariance scale {v}; expected a finite value >= 0",
                errors={"covariance_scale": v},
            )
        return v

    @property
    def channels(self) -> int:
        return self.raw_channels or self.class_count

    @property
    def total_samples(self) -> int:
        return self.class_count * self.samples_per_class


class SyntheticDataset(BaseModel):
    """Raw images, class indices and the train/validation split drawn with them."""

    inputs: np.ndarray  # (N, raw_channels, H, W)
    labels: np.ndarray  # (N,) int64
    class_count: int
    params: BlobParams
    train_idx: np.ndarray
    val_idx: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def train_inputs(self) -> np.ndarray:
        return self.inputs[self.train_idx]

    @property
    def train_labels(self) -> np.ndarray:
        return self.labels[self.train_idx]

    @property
    def val_inputs(self) -> np.ndarray:
        return self.inputs[self.val_idx]

    @property
    def val_labels(self) -> np.ndarray:
        return self.labels[self.val_idx]

    def with_labels(self, labels: np.ndarray) -> "SyntheticDataset":
        return self.model_copy(update={"labels": np.asarray(labels, dtype=np.int64)})
