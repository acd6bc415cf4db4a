"""Gaussian-likelihood GP: exact predictive equations and ML-II fitting."""
from dataclasses import dataclass

import numpy as np

from .dataset import PredictiveDistribution, standardize_targets
from .kernel import (KernelParams, as_matrix, build_gram, cross_cov, factorize,
                     gram_gradients_traces)
from .optim import OptimResult, log_uniform_starts, maximize

LOG_2PI = np.log(2.0 * np.pi)


def gaussian_log_evidence(X, y, noise_var, params: KernelParams, grad=True):
    """log N(y | 0, K + noise_var I) and its gradient.

    The gradient is with respect to [log noise_var, log tau, log s_1..s_d].
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=float)
    n = y.size
    K = build_gram(X, params).K
    R = K.copy()
    R[np.diag_indices_from(R)] += noise_var
    fac = factorize(R, scale=params.variance + noise_var)
    alpha = fac.solve(y)
    value = -0.5 * y @ alpha - 0.5 * fac.logdet - 0.5 * n * LOG_2PI
    if not grad:
        return value, None
    # d/dt log p = 1/2 tr((alpha alpha^T - R^-1) dR/dt)
    Q = np.outer(alpha, alpha) - fac.solve(np.eye(n))
    g = np.empty(params.dim + 2)
    g[0] = 0.5 * noise_var * np.trace(Q)
    g[1:] = 0.5 * gram_gradients_traces(X, params, K, Q)
    return value, g


def gaussian_predict(X, y, noise_diag, params: KernelParams, Xs, full_cov=False, factor=None):
    """Latent predictive moments of a zero-mean GP with diagonal noise.

    Returns ``(mean, latent_var, cov_or_None)``; ``noise_diag`` may be a
    scalar or one variance per training point.
    """
    X, Xs = as_matrix(X), as_matrix(Xs)
    y = np.asarray(y, dtype=float)
    if Xs.shape[1] != X.shape[1]:
        raise ValueError(f"test inputs have {Xs.shape[1]} columns, expected {X.shape[1]}")
    if factor is None:
        K = build_gram(X, params).K
        K[np.diag_indices_from(K)] += noise_diag
        factor = factorize(K)
    C = cross_cov(X, Xs, params)
    mean = C.T @ factor.solve(y)
    v = factor.solve_lower(C)
    latent = params.variance - np.sum(v * v, axis=0)
    cov = None
    if full_cov:
        cov = cross_cov(Xs, Xs, params) - v.T @ v
    return mean, np.maximum(latent, 1e-15 * params.variance), cov


@dataclass
class ConjugateModel:
    """Fitted Gaussian-likelihood GP.

    Hyperparameters live in standardized response units: the training
    targets are centered by ``center`` and divided by ``scale``.
    """

    params: KernelParams
    noise_var: float
    X: np.ndarray
    y_std: np.ndarray
    center: float
    scale: float
    log_evidence: float
    converged: bool = True
    grad_norm: float = 0.0
    optim: OptimResult = None

    def __post_init__(self):
        K = build_gram(self.X, self.params).K
        K[np.diag_indices_from(K)] += self.noise_var
        self._factor = factorize(K, scale=self.params.variance + self.noise_var)

    @property
    def noise_var_original(self):
        return self.noise_var * self.scale ** 2

    @property
    def amplitude_original(self):
        return self.params.amplitude * self.scale

    def hyperparameters(self) -> dict:
        return {
            "noise_var": self.noise_var_original,
            "amplitude": self.amplitude_original,
            "length_scales": self.params.length_scales.tolist(),
            "log_evidence_standardized": self.log_evidence,
            "converged": self.converged,
        }


def fit_ml2(X, y, init=None, restarts=5, seed=0, maxiter=500, gtol=1e-5) -> ConjugateModel:
    """Type-II maximum likelihood over [log noise_var, log tau, log s].

    ``init``, if given, is an extra starting point in the same log
    coordinates. A default start (noise variance 0.1, unit amplitude,
    length scales at the input spread) is always tried, and ``restarts``
    further starts are drawn log-uniform on [1e-2, 1e2] from ``seed``.
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ValueError("need at least two training points")
    ys, center, scale = standardize_targets(y)
    d = X.shape[1]

    def objective(x):
        try:
            return gaussian_log_evidence(X, ys, np.exp(x[0]), KernelParams.from_log(x[1:]))
        except np.linalg.LinAlgError:
            return -np.inf, np.zeros_like(x)

    rng = np.random.default_rng(seed)
    starts = [] if init is None else [np.asarray(init, dtype=float)]
    default = np.zeros(d + 2)
    default[0] = np.log(0.1)
    default[2:] = np.log(np.maximum(np.std(X, axis=0), 1e-3))
    starts.append(default)
    starts += log_uniform_starts(rng, restarts, d + 2)
    res = maximize(objective, starts, maxiter=maxiter, gtol=gtol)
    return ConjugateModel(KernelParams.from_log(res.x[1:]), float(np.exp(res.x[0])), X, ys,
                          center, scale, res.value, res.converged, res.grad_norm, res)


def conjugate_model(X, y, noise_var, params: KernelParams, standardize=False) -> ConjugateModel:
    """Wrap fixed hyperparameters as a model (no fitting)."""
    X = as_matrix(X)
    y = np.asarray(y, dtype=float)
    if standardize:
        ys, center, scale = standardize_targets(y)
    else:
        ys, center, scale = y.copy(), 0.0, 1.0
    value, _ = gaussian_log_evidence(X, ys, noise_var, params, grad=False)
    return ConjugateModel(params, float(noise_var), X, ys, center, scale, value)


def predict(model: ConjugateModel, Xs, include_noise=True, full_cov=False) -> PredictiveDistribution:
    mean, latent, cov = gaussian_predict(model.X, model.y_std, model.noise_var, model.params,
                                         Xs, full_cov=full_cov, factor=model._factor)
    var = latent + model.noise_var if include_noise else latent
    s2 = model.scale ** 2
    if cov is not None:
        cov = cov * s2
        if include_noise:
            cov[np.diag_indices_from(cov)] += model.noise_var * s2
    return PredictiveDistribution(model.center + model.scale * mean, var * s2,
                                  latent_var=latent * s2, cov=cov)
