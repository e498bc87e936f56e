"""Generalization-bound envelope S^(-2/(4+m)) * (kappa/(2m) + c1 + c2/sqrt(delta)).

The distributional constants c1 and c2 are supplied, or calibrated on half of
a sweep: c2 is fixed at 0 and c1 is the smallest offset for which the envelope
covers every calibration-half gap (method ``offset_max``).
"""

import math

import numpy as np
from numpy.typing import ArrayLike

from convflat.core.exceptions import ValidationError
from convflat.schemas.records import EnvelopeCalibration

CALIBRATION_METHOD = "offset_max"


def _check_domain(sample_size: float, feature_dim: float) -> None:
    if not sample_size >= 1:
        raise ValidationError(f"Sample size must be >= 1, got {sample_size}")
    if not feature_dim >= 1:
        raise ValidationError(f"Feature dimension must be >= 1, got {feature_dim}")


def envelope_scale(sample_size: float, feature_dim: float) -> float:
    """S^(-2/(4+m))."""
    _check_domain(sample_size, feature_dim)
    return float(sample_size ** (-2.0 / (4.0 + feature_dim)))


def optimal_bandwidth(sample_size: float, feature_dim: float) -> float:
    """Kernel bandwidth S^(-1/(4+m)) balancing bias and variance."""
    _check_domain(sample_size, feature_dim)
    return float(sample_size ** (-1.0 / (4.0 + feature_dim)))


def bound_envelope(
    kappa: float,
    sample_size: float,
    feature_dim: float,
    c1: float,
    c2: float,
    delta: float,
) -> float:
    errors = {}
    if not math.isfinite(kappa):
        errors["kappa"] = kappa
    if not 0.0 < delta < 1.0:
        errors["delta"] = delta
    if not c1 >= 0:
        errors["c1"] = c1
    if not c2 >= 0:
        errors["c2"] = c2
    if errors:
        raise ValidationError("Bound arguments out of domain", errors=errors)
    scale = envelope_scale(sample_size, feature_dim)
    return scale * (kappa / (2.0 * feature_dim) + c1 + c2 / math.sqrt(delta))


def envelope_coverage(
    kappas: ArrayLike,
    gaps: ArrayLike,
    sample_size: float,
    feature_dim: float,
    c1: float,
    c2: float,
    delta: float,
) -> float:
    """Fraction of gaps at or below their envelope."""
    k = np.asarray(kappas, dtype=np.float64)
    g = np.asarray(gaps, dtype=np.float64)
    if k.size == 0 or k.shape != g.shape:
        raise ValidationError("kappas and gaps must be non-empty and of equal length")
    env = np.array([bound_envelope(kv, sample_size, feature_dim, c1, c2, delta) for kv in k])
    return float(np.mean(g <= env))


def calibrate_envelope(
    kappas: ArrayLike,
    gaps: ArrayLike,
    sample_size: float,
    feature_dim: float,
    delta: float = 0.5,
    seed: int = 0,
) -> EnvelopeCalibration:
    """Fit c1 on a seeded random half of the rows and measure coverage on the other half."""
    k = np.asarray(kappas, dtype=np.float64)
    g = np.asarray(gaps, dtype=np.float64)
    if k.shape != g.shape or k.size < 2:
        raise ValidationError("Calibration needs at least two (kappa, gap) pairs of equal length")

    order = np.random.default_rng(seed).permutation(k.size)
    half = k.size // 2
    cal, hold = order[:half], order[half:]

    scale = envelope_scale(sample_size, feature_dim)
    needed = g[cal] / scale - k[cal] / (2.0 * feature_dim)
    c1 = max(0.0, float(needed.max()))
    coverage = envelope_coverage(k[hold], g[hold], sample_size, feature_dim, c1, 0.0, delta)
    return EnvelopeCalibration(
        c1=c1,
        c2=0.0,
        method=CALIBRATION_METHOD,
        delta=delta,
        sample_size=int(sample_size),
        feature_dim=int(feature_dim),
        calibration_size=int(cal.size),
        holdout_size=int(hold.size),
        holdout_coverage=coverage,
    )
