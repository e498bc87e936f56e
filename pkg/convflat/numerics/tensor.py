"""Patch extraction (im2col), average patches and global average pooling.

Layout conventions used everywhere in convflat:

* an input batch is a float64 array ``(B, C_in, H, W)``; a single ``Tensor3`` is
  ``(C_in, H, W)``;
* patches keep channels separate: ``(B, C_in, R, d_c)`` with ``R = H' * W'``
  rows in row-major spatial order and each row the ``k_h x k_w`` window
  vectorised row by row;
* a flattened filter of length ``d = C_in * d_c`` is channel-major, so
  ``weights.reshape(C_out, C_in, d_c)`` is the per-channel view.
"""

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict

from convflat.core.exceptions import GeometryError, NonFiniteError
from convflat.schemas.geometry import ConvSpec

Array = NDArray[np.float64]


def as_tensor3(x: ArrayLike) -> Array:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise GeometryError(f"Expected a (C, H, W) tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("Input tensor contains NaN or Inf")
    return arr


def as_batch(x: ArrayLike) -> Array:
    """Stack a list of Tensor3 (or pass through a 4-D array) as (B, C, H, W)."""
    if isinstance(x, list | tuple):
        if not x:
            raise GeometryError("Empty batch")
        arr = np.stack([as_tensor3(t) for t in x])
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[np.newaxis]
        if arr.ndim != 4:
            raise GeometryError(f"Expected a (B, C, H, W) batch, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise GeometryError("Empty batch")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("Input batch contains NaN or Inf")
    return arr


def _check_dims(x: Array, spec: ConvSpec) -> None:
    _, c, h, w = x.shape
    if (c, h, w) != (spec.c_in, spec.h, spec.w):
        raise GeometryError(
            f"Input dims {(c, h, w)} do not match spec {(spec.c_in, spec.h, spec.w)}"
        )


class PatchMatrix(BaseModel):
    """Vectorised patches phi_r per sample and channel, shape (B, C_in, R, d_c)."""

    spec: ConvSpec
    values: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def batch_size(self) -> int:
        return int(self.values.shape[0])

    @property
    def rows(self) -> int:
        return int(self.values.shape[2])

    def channel(self, s: int, b: int = 0) -> Array:
        """The (R, d_c) patch matrix of channel ``s`` of sample ``b``."""
        return self.values[b, s]

    def flattened(self) -> Array:
        """Patches as (B, R, d) with channel-major columns, matching KernelBank rows."""
        b, c, r, dc = self.values.shape
        return self.values.transpose(0, 2, 1, 3).reshape(b, r, c * dc)


class PatchSummary(BaseModel):
    """Average patch per sample and channel, with its squared norm."""

    avg_patch: np.ndarray  # (B, C_in, d_c)
    sq_norm: np.ndarray  # (B, C_in)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def from_avg(cls, avg_patch: Array) -> "PatchSummary":
        avg = np.asarray(avg_patch, dtype=np.float64)
        if avg.ndim == 2:
            avg = avg[np.newaxis]
        return cls(avg_patch=avg, sq_norm=np.einsum("bsi,bsi->bs", avg, avg))

    @property
    def batch_size(self) -> int:
        return int(self.avg_patch.shape[0])

    @property
    def c_in(self) -> int:
        return int(self.avg_patch.shape[1])

    @property
    def d_c(self) -> int:
        return int(self.avg_patch.shape[2])

    @property
    def total_sq_norm(self) -> Array:
        """sum_s ||phi_bar^(b,s)||^2 per sample, shape (B,)."""
        return self.sq_norm.sum(axis=1)

    def flattened(self) -> Array:
        """Average patches as (B, d), channel-major."""
        return self.avg_patch.reshape(self.batch_size, -1)

    def sample(self, b: int) -> "PatchSummary":
        return PatchSummary(avg_patch=self.avg_patch[b : b + 1], sq_norm=self.sq_norm[b : b + 1])

    def subset(self, index: NDArray[np.intp] | slice) -> "PatchSummary":
        return PatchSummary(avg_patch=self.avg_patch[index], sq_norm=self.sq_norm[index])

    def scaled(self, factor: float) -> "PatchSummary":
        return PatchSummary.from_avg(self.avg_patch * factor)


def _im2col(x: Array, spec: ConvSpec) -> Array:
    b, c, _, _ = x.shape
    pad = spec.padding
    img = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad)], mode="constant")
    out_h, out_w = spec.out_h, spec.out_w

    col = np.empty((b, c, spec.k_h, spec.k_w, out_h, out_w), dtype=np.float64)
    for y in range(spec.k_h):
        y_max = y + spec.stride * out_h
        for x_off in range(spec.k_w):
            x_max = x_off + spec.stride * out_w
            col[:, :, y, x_off] = img[:, :, y:y_max:spec.stride, x_off:x_max:spec.stride]

    # (B, C, kh, kw, H', W') -> (B, C, R, d_c)
    return col.reshape(b, c, spec.d_c, out_h * out_w).transpose(0, 1, 3, 2)


def extract_patches_batch(x: ArrayLike, spec: ConvSpec) -> PatchMatrix:
    batch = as_batch(x)
    _check_dims(batch, spec)
    return PatchMatrix(spec=spec, values=np.ascontiguousarray(_im2col(batch, spec)))


def extract_patches(x: ArrayLike, spec: ConvSpec) -> PatchMatrix:
    """Patches of a single (C_in, H, W) input; the result has batch size 1."""
    return extract_patches_batch(as_tensor3(x)[np.newaxis], spec)


def average_patch(p: PatchMatrix) -> PatchSummary:
    # plain mean over R <= 1e4 patches
    return PatchSummary.from_avg(p.values.mean(axis=2))


def summarize_batch(x: ArrayLike, spec: ConvSpec) -> PatchSummary:
    return average_patch(extract_patches_batch(x, spec))


def global_average_pool(z: ArrayLike) -> Array:
    """Average over the spatial axis: (R, C_out) -> (C_out,), (B, R, C_out) -> (B, C_out)."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim not in (2, 3) or arr.shape[-2] < 1:
        raise GeometryError(f"Expected a (..., R, C_out) map with R >= 1, got {arr.shape}")
    return arr.mean(axis=-2)


def conv_forward(p: PatchMatrix, weights: ArrayLike) -> Array:
    """Convolution as patch inner products, Z = Phi K^T, shape (B, R, C_out)."""
    k = np.asarray(weights, dtype=np.float64)
    flat = p.flattened()
    if k.ndim != 2 or k.shape[1] != flat.shape[2]:
        raise GeometryError(f"Kernel shape {k.shape} does not match patch dim {flat.shape[2]}")
    return flat @ k.T
