"""Containers shared by the inference paths."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernel import as_matrix


@dataclass
class Dataset:
    """Training pair (X, y) with optional held-out inputs/targets.

    ``outlier_mask`` marks rows that a generator contaminated on purpose.
    """

    X: np.ndarray
    y: np.ndarray
    X_test: Optional[np.ndarray] = None
    y_test: Optional[np.ndarray] = None
    outlier_mask: Optional[np.ndarray] = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = as_matrix(self.X)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError(f"X has {self.X.shape[0]} rows but y has {self.y.size}")
        if self.X_test is not None:
            self.X_test = as_matrix(self.X_test)
        if self.y_test is not None:
            self.y_test = np.asarray(self.y_test, dtype=float).ravel()
        if self.outlier_mask is None:
            self.outlier_mask = np.zeros(self.y.size, dtype=bool)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], outlier_mask=self.outlier_mask[idx],
                       name=self.name, meta=dict(self.meta))


@dataclass
class PredictiveDistribution:
    """Predictive mean and per-point variance at test inputs.

    ``latent_var`` excludes observation noise; ``var`` is what callers should
    score against (noise included unless the caller asked otherwise).
    """

    mean: np.ndarray
    var: np.ndarray
    latent_var: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    mcse: Optional[np.ndarray] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and var must have the same shape")

    @property
    def sd(self):
        return np.sqrt(self.var)

    def band(self, k=2.0):
        return self.mean - k * self.sd, self.mean + k * self.sd


def standardize_targets(y):
    """Median center and 1.4826*MAD scale (std, then 1, as fallbacks)."""
    y = np.asarray(y, dtype=float)
    center = float(np.median(y))
    scale = 1.4826 * float(np.median(np.abs(y - center)))
    if not scale > 0:
        scale = float(np.std(y))
    if not scale > 0:
        scale = 1.0
    return (y - center) / scale, center, scale
