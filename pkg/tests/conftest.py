import numpy as np
import pytest

from convflat.core.constants import StopPolicyKind
from convflat.numerics.head import HeadOutput, KernelBank, forward_from_summary, one_hot
from convflat.numerics.tensor import PatchSummary, summarize_batch
from convflat.schemas.dataset import BlobParams
from convflat.schemas.geometry import ConvSpec
from convflat.schemas.training import (
    BackboneConfig,
    EarlyStopPolicy,
    HeadConfig,
    OptimizerConfig,
    TrainConfig,
)

# --- Fixtures ---


@pytest.fixture
def rng():
    """Provides a seeded numpy generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def ramp_input():
    """Provides the 1-channel 3x3 ramp [[1,2,3],[4,5,6],[7,8,9]] as (C, H, W)."""
    return np.arange(1.0, 10.0).reshape(1, 3, 3)


@pytest.fixture
def ramp_spec():
    """Provides the 2x2-kernel, two-filter geometry over the 3x3 ramp."""
    return ConvSpec.square(c_in=1, c_out=2, hw=3, ksize=2)


@pytest.fixture
def ramp_summary(ramp_input, ramp_spec) -> PatchSummary:
    """Average patch (3, 4, 6, 7) of the ramp input, squared norm 110."""
    return summarize_batch(ramp_input[np.newaxis], ramp_spec)


@pytest.fixture
def uniform_output(ramp_summary, ramp_spec) -> HeadOutput:
    """Forward pass with two identical filters, so the softmax is (0.5, 0.5)."""
    kernels = KernelBank.ones(ramp_spec)
    return forward_from_summary(ramp_summary, kernels, one_hot([0], 2))


@pytest.fixture
def small_spec():
    """Provides a 3-channel 6x6 geometry with 3x3 kernels and five filters."""
    return ConvSpec.square(c_in=3, c_out=5, hw=6, ksize=3)


@pytest.fixture
def random_batch(rng, small_spec):
    """Provides uniform inputs, random one-hot labels and small random kernels."""
    x = rng.uniform(0.0, 1.0, size=(4, small_spec.c_in, small_spec.h, small_spec.w))
    labels = one_hot(rng.integers(0, small_spec.c_out, size=4), small_spec.c_out)
    kernels = KernelBank.uniform(small_spec, rng, -0.3, 0.3)
    return x, labels, kernels


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    """Provides a training config small enough to run in well under a second."""
    return TrainConfig(
        dataset=BlobParams(class_count=3, samples_per_class=10, height=6, width=6, seed=3),
        backbone=BackboneConfig(channels=4, ksize=3, seed=3),
        head=HeadConfig(ksize=3),
        optimizer=OptimizerConfig(lr=0.05, batch_size=8, epochs=4, seed=5),
        early_stopping=EarlyStopPolicy(kind=StopPolicyKind.NONE),
    )
