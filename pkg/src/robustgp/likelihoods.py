"""Huber and pseudo-Huber losses and the Huber observation log-density."""
from dataclasses import dataclass, replace

import numpy as np

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class HuberConfig:
    """Threshold ``b`` on standardized residuals, contamination ``eps`` and noise scale ``sigma``."""

    b: float = 1.5
    eps: float = 0.45
    sigma: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"b must be positive, got {self.b}")
        if not 0.0 <= self.eps < 1.0:
            raise ValueError(f"eps must lie in [0, 1), got {self.eps}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def with_sigma(self, sigma):
        return replace(self, sigma=float(sigma))


@dataclass(frozen=True)
class ResidualSplit:
    inliers: np.ndarray
    outliers: np.ndarray
    standardized: np.ndarray

    @property
    def n_inliers(self):
        return self.inliers.size

    @property
    def n_outliers(self):
        return self.outliers.size

    @property
    def outlier_mask(self):
        mask = np.zeros(self.standardized.size, dtype=bool)
        mask[self.outliers] = True
        return mask


def huber_rho(r, b):
    r = np.abs(np.asarray(r, dtype=float))
    return np.where(r <= b, 0.5 * r * r, b * (r - 0.5 * b))


def huber_psi(r, b):
    """First derivative of :func:`huber_rho`."""
    return np.clip(np.asarray(r, dtype=float), -b, b)


def pseudo_huber(r, b):
    """Value, first and second derivative of b^2 (sqrt(1 + (r/b)^2) - 1)."""
    r = np.asarray(r, dtype=float)
    t = r / b
    root = np.sqrt(1.0 + t * t)
    # t^2 / (root + 1) == root - 1 without cancellation near 0
    value = b * b * (t * t) / (root + 1.0)
    d1 = r / root
    d2 = 1.0 / (root * root * root)
    return value, d1, d2


def _scale_vector(cfg, w, s, n):
    w = np.broadcast_to(np.asarray(w, dtype=float), (n,))
    if np.any(w <= 0) or np.any(w > 1):
        raise ValueError("weights must lie in (0, 1]")
    if not s > 0:
        raise ValueError(f"robust scale must be positive, got {s}")
    return w * cfg.sigma * s


def standardized_residuals(y, f, cfg: HuberConfig, w, s):
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    if y.shape != f.shape:
        raise ValueError("y and f must have the same length")
    return (y - f) / _scale_vector(cfg, w, s, y.size)


def huber_log_likelihood(y, f, cfg: HuberConfig, w, s, pseudo=False) -> float:
    """sum_i log((1 - eps) / (sqrt(2 pi) w_i sigma s)) - rho(r_i).

    The normalizer is used as is; it is not a proper density for arbitrary
    (b, eps) pairs.
    """
    y = np.asarray(y, dtype=float)
    scale = _scale_vector(cfg, w, s, y.size)
    r = (y - np.asarray(f, dtype=float)) / scale
    rho = pseudo_huber(r, cfg.b)[0] if pseudo else huber_rho(r, cfg.b)
    const = np.log1p(-cfg.eps) - LOG_SQRT_2PI - np.log(scale)
    return float(np.sum(const - rho))


def split_residuals(y, f, cfg: HuberConfig, w, s) -> ResidualSplit:
    """Partition by |r_S| <= b (ties go to the quadratic branch)."""
    r = standardized_residuals(y, f, cfg, w, s)
    inside = np.abs(r) <= cfg.b
    return ResidualSplit(np.flatnonzero(inside), np.flatnonzero(~inside), r)


def mixture_constants(cfg: HuberConfig):
    """(C1, C2) = (1 - eps, sqrt(pi/2) exp(b^2/2))."""
    return 1.0 - cfg.eps, float(np.sqrt(0.5 * np.pi) * np.exp(0.5 * cfg.b ** 2))


def log_mixture_constants(cfg: HuberConfig):
    """(log C1, log C2); finite even when exp(b^2/2) overflows."""
    return float(np.log1p(-cfg.eps)), float(0.5 * np.log(0.5 * np.pi) + 0.5 * cfg.b ** 2)
