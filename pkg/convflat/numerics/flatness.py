"""Exact Hessian trace and relative flatness of the conv -> GAP -> softmax block.

For one sample the Hessian of the cross-entropy w.r.t. the stacked kernels is
block structured, ``H_{j,j'} = y_hat^(j) (delta_jj' - y_hat^(j')) M`` with
``M = blockdiag_s phi_bar^(s) phi_bar^(s)^T``. Its trace collapses to
``alpha * sum_s ||phi_bar^(s)||^2`` where ``alpha = sum_j y_hat^(j)(1 - y_hat^(j))``
is the softmax curvature mass. Batch quantities are means over samples.
"""

import numpy as np
from numpy.typing import ArrayLike

from convflat.core.config import settings
from convflat.core.constants import FlatnessVariant
from convflat.core.exceptions import SizeLimitError, ValidationError
from convflat.numerics.head import HeadOutput, KernelBank, logit_hessian
from convflat.numerics.tensor import Array, PatchSummary


def softmax_curvature(probs: ArrayLike) -> Array | float:
    """alpha = sum_j p_j (1 - p_j), per row for a 2-D input."""
    p = np.asarray(probs, dtype=np.float64)
    alpha = (p * (1.0 - p)).sum(axis=-1)
    return float(alpha) if p.ndim == 1 else alpha


def _single(summary: PatchSummary) -> PatchSummary:
    if summary.batch_size != 1:
        raise ValidationError(
            f"Expected a single-sample summary, got batch size {summary.batch_size}"
        )
    return summary


def _check_batch(out: HeadOutput, summary: PatchSummary) -> None:
    if out.batch_size != summary.batch_size:
        raise ValidationError(
            "Forward output and patch summary come from different batches",
            errors={"output_batch": out.batch_size, "summary_batch": summary.batch_size},
        )


def symbolic_trace_single(probs: ArrayLike, summary: PatchSummary) -> float:
    alpha = softmax_curvature(np.asarray(probs, dtype=np.float64).reshape(-1))
    return float(alpha * _single(summary).total_sq_norm[0])


def per_sample_traces(out: HeadOutput, summary: PatchSummary) -> Array:
    _check_batch(out, summary)
    return softmax_curvature(out.probs) * summary.total_sq_norm


def symbolic_trace_batch(out: HeadOutput, summary: PatchSummary) -> float:
    """(1/B) sum_b alpha^(b) sum_s ||phi_bar^(b,s)||^2."""
    return float(per_sample_traces(out, summary).mean())


def mean_alpha(out: HeadOutput) -> float:
    return float(np.mean(softmax_curvature(out.probs)))


def hessian_block_trace(probs: ArrayLike, j: int, j2: int, summary: PatchSummary) -> float:
    """Tr(H_{j,j2}) = y_hat^(j) (delta_{j,j2} - y_hat^(j2)) sum_s ||phi_bar^(s)||^2.

    Class indices are 1-based.
    """
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    c_out = p.size
    if not (1 <= j <= c_out and 1 <= j2 <= c_out):
        raise ValidationError(
            f"Class index out of range 1..{c_out}", errors={"j": j, "j2": j2}
        )
    delta = 1.0 if j == j2 else 0.0
    return float(p[j - 1] * (delta - p[j2 - 1]) * _single(summary).total_sq_norm[0])


def relative_flatness(
    out: HeadOutput,
    summary: PatchSummary,
    kernels: KernelBank,
    variant: FlatnessVariant | str = FlatnessVariant.TABLE,
) -> float:
    _check_batch(out, summary)
    try:
        variant = FlatnessVariant(variant)
    except ValueError as err:
        raise ValidationError(f"Unknown flatness variant: {variant!r}") from err

    norms = kernels.sq_norms()  # <k_t, k_t>
    phi = summary.total_sq_norm  # (B,)
    if variant is FlatnessVariant.DEFINITION:
        per_kernel = out.probs * (1.0 - out.probs)  # (B, C_out)
        return float(np.mean((per_kernel @ norms) * phi))
    return float(norms.sum() * np.mean(softmax_curvature(out.probs) * phi))


def relative_flatness_full(
    out: HeadOutput, summary: PatchSummary, kernels: KernelBank
) -> float:
    """Batch mean of sum_{i,j} <k_i, k_j> Tr(H_{i,j}), cross terms included."""
    _check_batch(out, summary)
    gram = kernels.gram()
    p = out.probs
    # sum_ij G_ij p_i (delta_ij - p_j) = sum_i G_ii p_i - p^T G p
    per_sample = p @ np.diag(gram) - np.einsum("bi,ij,bj->b", p, gram, p)
    return float(np.mean(per_sample * summary.total_sq_norm))


def lipschitz_constant(summary: PatchSummary, c_out: int) -> float:
    """C_out * ||phi_bar||^3 with ||phi_bar||^2 summed over channels."""
    return float(c_out * _single(summary).total_sq_norm[0] ** 1.5)


def _patch_gram(summary: PatchSummary, b: int) -> Array:
    """blockdiag_s phi_bar^(b,s) phi_bar^(b,s)^T, shape (d, d)."""
    c_in, d_c = summary.c_in, summary.d_c
    m = np.zeros((c_in * d_c, c_in * d_c))
    for s in range(c_in):
        v = summary.avg_patch[b, s]
        m[s * d_c : (s + 1) * d_c, s * d_c : (s + 1) * d_c] = np.outer(v, v)
    return m


def _check_dense_cap(dim: int, cap: int | None) -> None:
    limit = cap if cap is not None else settings.DENSE_HESSIAN_CAP
    if dim > limit:
        raise SizeLimitError(
            f"Dense Hessian of dimension {dim} exceeds cap {limit}",
            limit=limit,
            requested=dim,
        )


def dense_hessian(probs: ArrayLike, summary: PatchSummary, cap: int | None = None) -> Array:
    """Materialised (C_out*d) x (C_out*d) Hessian of one sample. Verification only."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    single = _single(summary)
    _check_dense_cap(p.size * single.c_in * single.d_c, cap)
    return np.kron(logit_hessian(p), _patch_gram(single, 0))


def dense_hessian_batch(
    out: HeadOutput, summary: PatchSummary, cap: int | None = None
) -> Array:
    _check_batch(out, summary)
    dim = out.c_out * summary.c_in * summary.d_c
    _check_dense_cap(dim, cap)
    h = np.zeros((dim, dim))
    for b in range(out.batch_size):
        h += np.kron(logit_hessian(out.probs[b]), _patch_gram(summary, b))
    return h / out.batch_size
