"""Forward pass and closed-form gradient of the final block: conv -> GAP -> softmax -> CE.

By the GAP/convolution commutation the pooled logit of filter ``j`` is
``sum_s <phi_bar^(s), k_{j,s}>``, so everything here works from the average
patches. ``convflat.numerics.tensor.conv_forward`` keeps the explicit
convolution path for the oracles.
"""

import logging

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict

from convflat.core.constants import LOG_PROB_FLOOR
from convflat.core.exceptions import GeometryError, NonFiniteError, ValidationError
from convflat.numerics.tensor import Array, PatchSummary, summarize_batch
from convflat.schemas.geometry import ConvSpec

logger = logging.getLogger(__name__)

_LOG_FLOOR = float(np.log(LOG_PROB_FLOOR))


class KernelBank(BaseModel):
    """Filters stacked as rows of a (C_out, d) matrix, channel-major within a row."""

    weights: np.ndarray
    c_in: int

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def model_post_init(self, __context: object) -> None:
        w = self.weights
        if w.ndim != 2 or w.shape[1] % self.c_in != 0:
            raise GeometryError(
                f"Kernel matrix {w.shape} is not (C_out, c_in * d_c) for c_in={self.c_in}"
            )
        if not np.all(np.isfinite(w)):
            raise NonFiniteError("Kernel weights contain NaN or Inf")

    @classmethod
    def from_array(cls, weights: ArrayLike, spec: ConvSpec) -> "KernelBank":
        w = np.array(weights, dtype=np.float64).reshape(spec.c_out, spec.d)
        return cls(weights=w, c_in=spec.c_in)

    @classmethod
    def constant(cls, spec: ConvSpec, value: float = 1.0) -> "KernelBank":
        return cls(weights=np.full((spec.c_out, spec.d), float(value)), c_in=spec.c_in)

    @classmethod
    def ones(cls, spec: ConvSpec) -> "KernelBank":
        return cls.constant(spec, 1.0)

    @classmethod
    def uniform(
        cls, spec: ConvSpec, rng: np.random.Generator, low: float, high: float
    ) -> "KernelBank":
        return cls(weights=rng.uniform(low, high, size=(spec.c_out, spec.d)), c_in=spec.c_in)

    @property
    def c_out(self) -> int:
        return int(self.weights.shape[0])

    @property
    def d(self) -> int:
        return int(self.weights.shape[1])

    @property
    def d_c(self) -> int:
        return self.d // self.c_in

    def per_channel(self) -> Array:
        """(C_out, C_in, d_c) view: k_{t,s}."""
        return self.weights.reshape(self.c_out, self.c_in, self.d_c)

    def sq_norms(self) -> Array:
        """<k_t, k_t> per filter."""
        return np.einsum("ti,ti->t", self.weights, self.weights)

    def gram(self) -> Array:
        return self.weights @ self.weights.T

    def replace(self, weights: Array) -> "KernelBank":
        return KernelBank(weights=weights, c_in=self.c_in)

    def scaled(self, factor: float) -> "KernelBank":
        return self.replace(self.weights * factor)


class HeadOutput(BaseModel):
    logits: np.ndarray  # (B, C_out)
    probs: np.ndarray  # (B, C_out)
    losses: np.ndarray  # (B,)
    loss: float
    # Rows whose label log-probability hit the 1e-300 floor
    saturated: int = 0

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def batch_size(self) -> int:
        return int(self.probs.shape[0])

    @property
    def c_out(self) -> int:
        return int(self.probs.shape[1])

    def predictions(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)


def one_hot(indices: ArrayLike, classes: int) -> Array:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= classes):
        raise ValidationError(
            "Class indices out of range", errors={"classes": classes}
        )
    out = np.zeros((idx.size, classes), dtype=np.float64)
    out[np.arange(idx.size), idx] = 1.0
    return out


def validate_one_hot(labels: ArrayLike, batch_size: int, classes: int) -> Array:
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (batch_size, classes):
        raise ValidationError(
            f"Labels shape {y.shape} does not match ({batch_size}, {classes})"
        )
    is_binary = np.all((y == 0.0) | (y == 1.0), axis=1)
    bad = np.flatnonzero(~is_binary | (y.sum(axis=1) != 1.0))
    if bad.size:
        raise ValidationError(
            "Label rows are not one-hot", errors={"rows": bad[:10].tolist()}
        )
    return y


def softmax(logits: ArrayLike) -> Array:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: ArrayLike) -> Array:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def head_output_from_logits(logits: Array, labels: Array) -> HeadOutput:
    """Softmax + cross-entropy on pooled logits (labels already validated)."""
    log_probs = log_softmax(logits)
    label_log_probs = np.einsum("bj,bj->b", labels, log_probs)
    saturated = int(np.count_nonzero(label_log_probs < _LOG_FLOOR))
    losses = -np.maximum(label_log_probs, _LOG_FLOOR)
    if saturated:
        logger.debug(
            "Cross-entropy saturated", extra={"props": {"saturated_rows": saturated}}
        )
    return HeadOutput(
        logits=logits,
        probs=softmax(logits),
        losses=losses,
        loss=float(losses.mean()),
        saturated=saturated,
    )


def pooled_logits(summary: PatchSummary, kernels: KernelBank) -> Array:
    """z_bar_b^(j) = sum_s <phi_bar^(b,s), k_{j,s}>."""
    if summary.c_in != kernels.c_in or summary.d_c != kernels.d_c:
        raise GeometryError(
            f"Summary (c_in={summary.c_in}, d_c={summary.d_c}) does not match kernels "
            f"(c_in={kernels.c_in}, d_c={kernels.d_c})"
        )
    return summary.flattened() @ kernels.weights.T


def forward_from_summary(
    summary: PatchSummary, kernels: KernelBank, labels: ArrayLike
) -> HeadOutput:
    logits = pooled_logits(summary, kernels)
    y = validate_one_hot(labels, summary.batch_size, kernels.c_out)
    return head_output_from_logits(logits, y)


def forward(
    x_batch: ArrayLike, kernels: KernelBank, spec: ConvSpec, labels: ArrayLike
) -> HeadOutput:
    if kernels.c_out != spec.c_out or kernels.d != spec.d:
        raise GeometryError(
            f"Kernel bank ({kernels.c_out}, {kernels.d}) does not match spec "
            f"({spec.c_out}, {spec.d})"
        )
    return forward_from_summary(summarize_batch(x_batch, spec), kernels, labels)


def predict(summary: PatchSummary, kernels: KernelBank) -> Array:
    return softmax(pooled_logits(summary, kernels))


def gradient(out: HeadOutput, summary: PatchSummary, labels: ArrayLike) -> Array:
    """Batch-mean gradient, row j = mean_b (y_hat_b^(j) - y_b^(j)) phi_bar^(b)."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != out.probs.shape or summary.batch_size != out.batch_size:
        raise ValidationError(
            "Shape mismatch between forward output, summary and labels",
            errors={
                "probs": list(out.probs.shape),
                "labels": list(y.shape),
                "summary_batch": summary.batch_size,
            },
        )
    residual = out.probs - y
    return residual.T @ summary.flattened() / out.batch_size


def logit_hessian(probs: ArrayLike) -> Array:
    """Hessian of the cross-entropy w.r.t. logits: diag(p) - p p^T."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ValidationError(f"Expected a probability vector, got shape {p.shape}")
    return np.diag(p) - np.outer(p, p)
