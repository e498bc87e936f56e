import logging

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict

from convflat.numerics.tensor import (
    Array,
    PatchSummary,
    as_batch,
    conv_forward,
    extract_patches_batch,
    summarize_batch,
)
from convflat.schemas.geometry import ConvSpec
from convflat.schemas.training import BackboneConfig

logger = logging.getLogger(__name__)

# Samples per chunk when mapping a dataset through the backbone
_CHUNK = 512


class Backbone(BaseModel):
    """Frozen random feature map: same-padded conv (He init) -> ReLU -> 1/sqrt(C) scaling.

    Produces the (C_in, H, W) feature maps the trainable block sees. Parameters
    are fixed at construction and depend only on the seed.
    """

    spec: ConvSpec
    weights: np.ndarray  # (channels, raw_channels * ksize^2)
    seed: int

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def build(cls, raw_channels: int, height: int, width: int, cfg: BackboneConfig) -> "Backbone":
        spec = ConvSpec(
            c_in=raw_channels,
            c_out=cfg.channels,
            k_h=cfg.ksize,
            k_w=cfg.ksize,
            padding=cfg.ksize // 2,
            h=height,
            w=width,
        )
        rng = np.random.default_rng(cfg.seed)
        weights = rng.normal(0.0, np.sqrt(2.0 / spec.d), size=(spec.c_out, spec.d))
        return cls(spec=spec, weights=weights, seed=cfg.seed)

    @property
    def channels(self) -> int:
        return self.spec.c_out

    def features(self, x: ArrayLike) -> Array:
        """(B, raw_channels, H, W) -> (B, channels, H, W)."""
        batch = as_batch(x)
        z = conv_forward(extract_patches_batch(batch, self.spec), self.weights)  # (B, R, C)
        z = np.maximum(z, 0.0) / np.sqrt(self.channels)
        b = batch.shape[0]
        return z.reshape(b, self.spec.out_h, self.spec.out_w, self.channels).transpose(0, 3, 1, 2)

    def summarize(self, x: ArrayLike, head_spec: ConvSpec) -> PatchSummary:
        """Average patches of the head's convolution over the backbone features."""
        batch = as_batch(x)
        chunks = [
            summarize_batch(self.features(batch[i : i + _CHUNK]), head_spec).avg_patch
            for i in range(0, batch.shape[0], _CHUNK)
        ]
        return PatchSummary.from_avg(np.concatenate(chunks, axis=0))

    def head_spec(self, c_out: int, ksize: int, stride: int = 1, padding: int = 0) -> ConvSpec:
        return ConvSpec(
            c_in=self.channels,
            c_out=c_out,
            k_h=ksize,
            k_w=ksize,
            stride=stride,
            padding=padding,
            h=self.spec.out_h,
            w=self.spec.out_w,
        )
