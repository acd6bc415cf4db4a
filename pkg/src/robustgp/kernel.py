"""Anisotropic squared-exponential kernel and SPD linear algebra helpers."""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _kernels

JITTER_START = 1e-10
JITTER_CAP = 1e-4


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix stays indefinite after the jitter cap."""


@dataclass(frozen=True)
class KernelParams:
    """Amplitude ``tau`` and one length scale per input dimension.

    k(x, x') = tau^2 exp(-sum_k (x_k - x'_k)^2 / s_k^2)
    """

    amplitude: float
    length_scales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("length_scales must be a non-empty vector")
        if not (self.amplitude > 0 and np.isfinite(self.amplitude)):
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if not np.all((ls > 0) & np.isfinite(ls)):
            raise ValueError(f"length_scales must be positive, got {ls}")

    @property
    def dim(self) -> int:
        return self.length_scales.size

    @property
    def variance(self) -> float:
        return self.amplitude ** 2

    def to_log(self) -> np.ndarray:
        """[log tau, log s_1, ..., log s_d]"""
        return np.concatenate([[np.log(self.amplitude)], np.log(self.length_scales)])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[0]), np.exp(theta[1:]))

    def _inv_ls2(self):
        return 1.0 / self.length_scales ** 2


@dataclass(frozen=True)
class GramMatrix:
    K: np.ndarray
    jitter: float


def _check_dim(X, params):
    if X.shape[1] != params.dim:
        raise ValueError(
            f"input dimension {X.shape[1]} does not match {params.dim} length scales"
        )


def as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("inputs must be a vector or a 2-D matrix")
    return np.ascontiguousarray(X)


def kernel_eval(xi, xj, params: KernelParams) -> float:
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    xj = np.atleast_1d(np.asarray(xj, dtype=float))
    if xi.shape != xj.shape or xi.size != params.dim:
        raise ValueError(
            f"dimension mismatch: {xi.size}, {xj.size} vs {params.dim} length scales"
        )
    z = np.sum((xi - xj) ** 2 / params.length_scales ** 2)
    return params.variance * float(np.exp(-z))


def cross_cov(X1, X2, params: KernelParams) -> np.ndarray:
    """k(X1, X2) as an ``n1 x n2`` matrix."""
    X1, X2 = as_matrix(X1), as_matrix(X2)
    _check_dim(X1, params)
    _check_dim(X2, params)
    return _kernels.sqexp_cross(X1, X2, params._inv_ls2(), params.variance)


def build_gram(X, params: KernelParams, jitter=None) -> GramMatrix:
    """K(X, X) with ``jitter`` added to the diagonal.

    ``jitter`` defaults to the smallest rung of the escalation ladder,
    1e-10 tau^2.
    """
    X = as_matrix(X)
    if jitter is None:
        jitter = JITTER_START * params.variance
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    K = cross_cov(X, X, params)
    K[np.diag_indices_from(K)] += jitter
    return GramMatrix(K, float(jitter))


def gram_gradients_traces(X, params: KernelParams, K, G) -> np.ndarray:
    """<G, dK/dlog theta> for theta = [tau, s_1..s_d], K without jitter."""
    X = as_matrix(X)
    KG = K * G
    out = np.empty(params.dim + 1)
    out[0] = 2.0 * np.sum(KG)
    out[1:] = _kernels.ard_traces(X, params._inv_ls2(), KG)
    return out


class SPDFactor:
    """Lower Cholesky factor of ``M + jitter I`` with solve and log-determinant."""

    def __init__(self, L, jitter=0.0):
        self.L = L
        self.jitter = jitter

    @property
    def n(self):
        return self.L.shape[0]

    def solve(self, B):
        return linalg.cho_solve((self.L, True), B, check_finite=False)

    def solve_lower(self, B):
        return linalg.solve_triangular(self.L, B, lower=True, check_finite=False)

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))


def factorize(M, scale=None, jitter0=0.0) -> SPDFactor:
    """Cholesky with jitter escalation.

    Tries ``jitter0`` first, then 1e-10*scale growing tenfold up to 1e-4*scale,
    where ``scale`` defaults to the mean diagonal.
    """
    M = np.asarray(M, dtype=float)
    if scale is None:
        scale = float(np.mean(np.diag(M))) if M.size else 1.0
        scale = scale if scale > 0 else 1.0
    ladder = [jitter0]
    j = JITTER_START * scale
    while j <= JITTER_CAP * scale * (1 + 1e-12):
        if j > jitter0:
            ladder.append(j)
        j *= 10.0
    eye = np.eye(M.shape[0])
    for jit in ladder:
        try:
            L = linalg.cholesky(M + jit * eye if jit else M, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        return SPDFactor(L, jit)
    raise FactorizationError(
        f"matrix not positive definite after jitter {JITTER_CAP * scale:.3g}"
    )


def spd_solve(M, B):
    """Solve ``M Z = B`` for SPD ``M``; returns ``(Z, logdet(M))``."""
    fac = factorize(M)
    return fac.solve(np.asarray(B, dtype=float)), fac.logdet
