"""Projection statistics, chi-square thresholded weights and robust residual scale."""
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from ._kernels import MAD_CONSTANT
from .kernel import as_matrix

SCALE_FLOOR = 1e-8
CHI2_LEVEL = 0.975


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class RobustWeighting:
    ps: np.ndarray
    weights: np.ndarray
    thresholds: np.ndarray
    dof: np.ndarray
    squared_regime: bool

    @property
    def flagged(self) -> np.ndarray:
        return self.weights < 1.0


@dataclass(frozen=True)
class RobustScale:
    s: float
    correction: float


def coordinatewise_median(X) -> np.ndarray:
    X = as_matrix(X)
    if X.shape[0] < 1:
        raise ValueError("need at least one row")
    return np.median(X, axis=0)


def projection_statistics(X) -> np.ndarray:
    """Maximum MAD-standardized projection distance of each row.

    Candidate directions run from the coordinatewise median through every
    row. Directions of zero length or zero MAD are skipped; a point that no
    direction can score gets 0.
    """
    X = as_matrix(X)
    if X.shape[0] < 2:
        raise ValueError("projection statistics need at least two rows")
    ps, used = _kernels.projection_scan(X, coordinatewise_median(X))
    if used == 0:
        raise DegenerateDataError("every projection direction is degenerate")
    return ps


def augment_intercept(x) -> np.ndarray:
    """H = [1, x] for a one-dimensional regressor."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty regressor")
    return np.column_stack([np.ones_like(x), x])


def chi2_quantile(p: float, dof: float, tol: float = 1e-12) -> float:
    """Chi-square quantile by bisection on the regularized lower incomplete gamma."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if dof <= 0:
        raise ValueError("dof must be positive")
    a = 0.5 * dof
    lo, hi = 0.0, max(1.0, dof)
    while special.gammainc(a, 0.5 * hi) < p:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if special.gammainc(a, 0.5 * mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ps_weights(ps, X, level: float = CHI2_LEVEL) -> RobustWeighting:
    """Weights w_i = min(1, c_i / PS_i^2).

    With n > 5d the squared statistic is compared against the chi-square
    quantile c_i (nu_i degrees of freedom, nu_i = nonzero entries of row i);
    otherwise the raw statistic is.
    """
    X = as_matrix(X)
    ps = np.asarray(ps, dtype=float)
    n, d = X.shape
    if ps.shape != (n,):
        raise ValueError("ps must have one entry per row of X")
    dof = np.maximum(np.count_nonzero(X, axis=1), 1)
    cache = {nu: chi2_quantile(level, nu) for nu in np.unique(dof)}
    c = np.array([cache[nu] for nu in dof])
    squared = n > 5 * d
    with np.errstate(over="ignore"):
        stat = ps ** 2 if squared else ps
    w = np.ones(n)
    out = stat > c
    w[out] = (c[out] / ps[out]) / ps[out]
    return RobustWeighting(ps.copy(), w, c, dof, squared)


def diagnose(X) -> RobustWeighting:
    """projection_statistics followed by ps_weights."""
    X = as_matrix(X)
    return ps_weights(projection_statistics(X), X)


def robust_scale(r, d: int) -> RobustScale:
    """s = 1.4826 (1 + 5/(n - d)) median|r|, floored at 1e-8."""
    r = np.asarray(r, dtype=float).ravel()
    n = r.size
    if n <= d:
        raise ValueError(f"robust scale needs n > d (n={n}, d={d})")
    bd = 1.0 + 5.0 / (n - d)
    s = MAD_CONSTANT * bd * float(np.median(np.abs(r)))
    return RobustScale(max(s, SCALE_FLOOR), bd)


def input_weights(X) -> RobustWeighting:
    """Weights for a regression design; a single regressor gets an intercept column first."""
    X = as_matrix(X)
    if X.shape[1] == 1:
        return diagnose(augment_intercept(X[:, 0]))
    return diagnose(X)
