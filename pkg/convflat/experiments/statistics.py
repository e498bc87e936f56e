"""Regression and correlation statistics linking flatness to the generalization gap.

p-values are two-sided. Up to ``T_DIST_MAX_N`` points they come from Student's
t distribution with n - 2 degrees of freedom; above it from the standard normal.
"""

import logging
import math
from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy import stats

from convflat.core.constants import StopReason
from convflat.core.exceptions import UndefinedCorrelationError, ValidationError
from convflat.schemas.records import CorrelationStats

logger = logging.getLogger(__name__)

T_DIST_MAX_N = 200
CI_LEVEL = 0.95


def two_sided_p(t_stat: float, n: int) -> float:
    if math.isinf(t_stat):
        return 0.0
    if n <= T_DIST_MAX_N:
        return float(2.0 * stats.t.sf(abs(t_stat), df=n - 2))
    return float(2.0 * stats.norm.sf(abs(t_stat)))


def _corr_t(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return math.copysign(math.inf, r)
    return r * math.sqrt((n - 2) / (1.0 - r * r))


def _clipped(r: float) -> float:
    return max(-1.0, min(1.0, float(r)))


def fisher_ci(r: float, n: int, level: float = CI_LEVEL) -> tuple[float, float]:
    """Fisher-z interval for Pearson r; degenerates to [-1, 1] at n = 3 and [r, r] at |r| = 1."""
    if abs(r) >= 1.0:
        return r, r
    if n <= 3:
        return -1.0, 1.0
    z = math.atanh(r)
    half = float(stats.norm.ppf(0.5 + level / 2.0)) / math.sqrt(n - 3)
    return math.tanh(z - half), math.tanh(z + half)


def _validated(x: ArrayLike, y: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=np.float64).reshape(-1)
    ya = np.asarray(y, dtype=np.float64).reshape(-1)
    if xa.size != ya.size:
        raise ValidationError(f"x and y differ in length ({xa.size} vs {ya.size})")
    if xa.size < 3:
        raise ValidationError(f"Correlation needs at least 3 points, got {xa.size}")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise ValidationError("Correlation inputs must be finite")
    if np.ptp(xa) == 0.0 or np.ptp(ya) == 0.0:
        raise UndefinedCorrelationError("Zero variance in x or y; correlation is undefined")
    return xa, ya


def correlate(x: ArrayLike, y: ArrayLike) -> CorrelationStats:
    xa, ya = _validated(x, y)
    n = xa.size

    fit = stats.linregress(xa, ya)
    r = _clipped(fit.rvalue)
    ci_low, ci_high = fisher_ci(r, n)
    slope_t = math.inf if fit.stderr == 0 else fit.slope / fit.stderr

    rho = _clipped(stats.spearmanr(xa, ya).statistic)

    return CorrelationStats(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        slope_std_error=float(fit.stderr),
        slope_p_value=two_sided_p(slope_t, n),
        r_squared=r * r,
        pearson_r=r,
        pearson_ci_low=min(ci_low, r),
        pearson_ci_high=max(ci_high, r),
        pearson_p_value=two_sided_p(_corr_t(r, n), n),
        spearman_rho=rho,
        spearman_p_value=two_sided_p(_corr_t(rho, n), n),
        n=n,
    )


def usable_rows(
    rows: Sequence[dict[str, str]], x_col: str, y_col: str
) -> tuple[np.ndarray, np.ndarray, int]:
    """Numeric (x, y) columns of a results table without diverged or non-finite rows.

    Returns the two columns and the number of excluded rows.
    """
    if rows and (x_col not in rows[0] or y_col not in rows[0]):
        raise ValidationError(
            f"Columns {x_col!r}/{y_col!r} not in table", errors={"columns": list(rows[0])}
        )
    xs, ys = [], []
    excluded = 0
    for row in rows:
        if row.get("stop_reason") == StopReason.DIVERGED.value:
            excluded += 1
            continue
        try:
            xv, yv = float(row[x_col]), float(row[y_col])
        except ValueError:
            excluded += 1
            continue
        if not (math.isfinite(xv) and math.isfinite(yv)):
            excluded += 1
            continue
        xs.append(xv)
        ys.append(yv)
    if excluded:
        logger.info(
            f"Excluded {excluded} diverged or non-finite rows",
            extra={"props": {"excluded": excluded}},
        )
    return np.asarray(xs), np.asarray(ys), excluded
