"""Independent trace estimators the closed form is checked against.

* ``fd_trace`` / ``fd_gradient``: central finite differences of an arbitrary loss;
  with ``make_batch_loss`` the loss is evaluated through the explicit
  convolution + pooling path, not through the average patch.
* ``hutchinson_trace``: Rademacher probes over a Hessian-vector product.
* ``analytic_hvp`` / ``batch_hvp``: exact Hv from the Kronecker block structure
  in O(C_out * d) per vector, never materialising H.
"""

import logging
from collections.abc import Callable

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from convflat.core.config import settings
from convflat.core.constants import MACHINE_EPS
from convflat.core.exceptions import NonFiniteError, SizeLimitError, ValidationError
from convflat.numerics.head import HeadOutput, KernelBank, log_softmax, validate_one_hot
from convflat.numerics.tensor import Array, PatchMatrix, PatchSummary

logger = logging.getLogger(__name__)

LossFn = Callable[[Array], float]

# Probes per vectorised HVP block in hutchinson_trace
PROBE_BLOCK = 64


class ProbeConfig(BaseModel):
    n_probes: int = Field(500, ge=1)
    distribution: str = Field("rademacher", pattern="^rademacher$")
    seed: int = 0

    model_config = ConfigDict(frozen=True)


class FdConfig(BaseModel):
    """Relative central-difference steps h_i = eps^p * max(1, |k_i|).

    Second differences use p = 1/4 and the gradient check uses p = 1/3.
    """

    # eps^(1/4): O(h^2) truncation meets O(eps / h^2) rounding in second differences
    curvature_exponent: float = Field(0.25, gt=0, lt=1)
    gradient_exponent: float = Field(1.0 / 3.0, gt=0, lt=1)
    fixed_step: float | None = Field(None, gt=0)

    model_config = ConfigDict(frozen=True)

    def steps(self, x: Array, exponent: float) -> Array:
        if self.fixed_step is not None:
            return np.full(x.shape, self.fixed_step)
        return MACHINE_EPS**exponent * np.maximum(1.0, np.abs(x))


def _as_params(weights: KernelBank | ArrayLike) -> Array:
    if isinstance(weights, KernelBank):
        return weights.weights.copy()
    return np.array(weights, dtype=np.float64)


def _checked(value: float, where: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteError(f"Non-finite loss encountered at {where}")
    return float(value)


def _check_fd_cap(n: int, cap: int | None) -> None:
    limit = cap if cap is not None else settings.FD_PARAM_CAP
    if n > limit:
        raise SizeLimitError(
            f"Finite-difference trace over {n} parameters exceeds cap {limit}",
            limit=limit,
            requested=n,
        )


def fd_trace(
    loss_fn: LossFn,
    weights: KernelBank | ArrayLike,
    cfg: FdConfig | None = None,
    cap: int | None = None,
) -> float:
    """sum_i (L(k + h_i e_i) - 2 L(k) + L(k - h_i e_i)) / h_i^2.

    ``loss_fn`` receives an array shaped like ``weights`` (the (C_out, d) matrix
    for a KernelBank); the array is perturbed in place between calls.
    """
    cfg = cfg or FdConfig()
    params = _as_params(weights)
    flat = params.reshape(-1)
    _check_fd_cap(flat.size, cap)

    base = _checked(loss_fn(params), "base point")
    steps = cfg.steps(flat, cfg.curvature_exponent)
    total = 0.0
    for i in range(flat.size):
        orig = flat[i]
        h = steps[i]
        flat[i] = orig + h
        plus = _checked(loss_fn(params), f"+h, index {i}")
        flat[i] = orig - h
        minus = _checked(loss_fn(params), f"-h, index {i}")
        flat[i] = orig
        total += (plus - 2.0 * base + minus) / (h * h)
    return total


def fd_gradient(
    loss_fn: LossFn,
    weights: KernelBank | ArrayLike,
    cfg: FdConfig | None = None,
    cap: int | None = None,
) -> Array:
    cfg = cfg or FdConfig()
    params = _as_params(weights)
    flat = params.reshape(-1)
    _check_fd_cap(flat.size, cap)

    steps = cfg.steps(flat, cfg.gradient_exponent)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + steps[i]
        plus = _checked(loss_fn(params), f"+h, index {i}")
        flat[i] = orig - steps[i]
        minus = _checked(loss_fn(params), f"-h, index {i}")
        flat[i] = orig
        grad[i] = (plus - minus) / (2.0 * steps[i])
    return grad.reshape(params.shape)


def make_batch_loss(patches: PatchMatrix, labels: ArrayLike) -> LossFn:
    """Mean cross-entropy through conv (Z = Phi K^T) -> GAP -> softmax."""
    flat = patches.flattened()  # (B, R, d)
    b, r, d = flat.shape
    rows = flat.reshape(b * r, d)
    y = validate_one_hot(labels, b, patches.spec.c_out)

    def loss(weights: Array) -> float:
        z = rows @ weights.T  # (B*R, C_out)
        logits = z.reshape(b, r, -1).mean(axis=1)
        return float(-np.mean(np.einsum("bj,bj->b", y, log_softmax(logits))))

    return loss


def hutchinson_trace(
    hvp_fn: Callable[[Array], Array],
    dim: int,
    cfg: ProbeConfig | None = None,
    *,
    batched: bool = False,
) -> tuple[float, float]:
    """(1/n) sum_p v_p^T H v_p over Rademacher probes; returns (estimate, std_error).

    With ``batched=True`` ``hvp_fn`` maps an (m, dim) block of probes at once.
    """
    cfg = cfg or ProbeConfig()
    if dim < 1:
        raise ValidationError(f"Probe dimension must be >= 1, got {dim}")
    rng = np.random.default_rng(cfg.seed)
    probes = rng.integers(0, 2, size=(cfg.n_probes, dim)).astype(np.float64) * 2.0 - 1.0

    quad = np.empty(cfg.n_probes)
    if batched:
        for start in range(0, cfg.n_probes, PROBE_BLOCK):
            block = probes[start : start + PROBE_BLOCK]
            quad[start : start + block.shape[0]] = np.einsum("nd,nd->n", block, hvp_fn(block))
    else:
        for p in range(cfg.n_probes):
            quad[p] = float(probes[p] @ hvp_fn(probes[p]))

    estimate = float(quad.mean())
    if cfg.n_probes == 1:
        return estimate, 0.0
    return estimate, float(quad.std(ddof=1) / np.sqrt(cfg.n_probes))


def _structured_hvp(p: Array, phi: Array, v: ArrayLike) -> Array:
    """Mean over samples of H_b v, H_b = (diag(p_b) - p_b p_b^T) kron M_b."""
    vec = np.asarray(v, dtype=np.float64)
    batch, c_out = p.shape
    _, c_in, d_c = phi.shape
    dim = c_out * c_in * d_c
    if vec.shape[-1] != dim or vec.ndim not in (1, 2):
        raise ValidationError(f"Vector length {vec.shape} does not match dimension {dim}")

    block = vec.reshape(-1, c_out, c_in, d_c)
    # inner products <phi_bar^(b,s), v_{j,s}>
    inner = np.einsum("njsi,bsi->nbjs", block, phi)
    # apply diag(p) - p p^T over the class axis
    mixed = p[None, :, :, None] * (inner - np.einsum("bk,nbks->nbs", p, inner)[:, :, None, :])
    result = np.einsum("nbjs,bsi->njsi", mixed, phi) / batch
    return result.reshape(vec.shape)


def batch_hvp(out: HeadOutput, summary: PatchSummary, v: ArrayLike) -> Array:
    """Batch-mean Hessian times v (a (C_out*d,) vector or an (m, C_out*d) block)."""
    if out.batch_size != summary.batch_size:
        raise ValidationError("Forward output and patch summary come from different batches")
    return _structured_hvp(out.probs, summary.avg_patch, v)


def analytic_hvp(probs: ArrayLike, summary: PatchSummary, v: ArrayLike) -> Array:
    """Single-sample Hv with H_{j,j'} = y_hat^(j)(delta_jj' - y_hat^(j')) M."""
    if summary.batch_size != 1:
        raise ValidationError("analytic_hvp expects a single-sample summary")
    p = np.asarray(probs, dtype=np.float64).reshape(1, -1)
    return _structured_hvp(p, summary.avg_patch, v)
