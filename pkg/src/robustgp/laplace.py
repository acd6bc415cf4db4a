"""GP with Huber likelihood via the Laplace approximation (HuberLA).

Mode finding uses the pseudo-Huber loss so that the log-likelihood is twice
differentiable. The robust residual scale ``s`` is frozen inside each Newton
solve and refreshed from the residuals between solves.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dataset import PredictiveDistribution, standardize_targets
from .kernel import KernelParams, as_matrix, build_gram, cross_cov, factorize
from .likelihoods import HuberConfig, huber_log_likelihood, pseudo_huber
from .optim import OptimResult, log_uniform_starts, maximize
from .projection import robust_scale

GRAD_TOL = 1e-8
STEP_TOL = 1e-10
SCALE_TOL = 1e-10
MAX_OUTER = 100
MAX_INNER = 50
FD_STEP = 1e-4
# central differences at FD_STEP resolve the evidence gradient to roughly this
FD_ACCEPT_TOL = 1e-4
MAX_ROUNDS = 20
ROUND_TOL = 1e-4


class ModeNotConverged(RuntimeWarning):
    pass


@dataclass
class LaplacePosterior:
    """Gaussian approximation N(mode, (K^-1 + diag(W))^-1) at fixed hyperparameters."""

    mode: np.ndarray
    W: np.ndarray
    alpha: np.ndarray  # K^-1 mode, equal to the likelihood gradient at the mode
    scale: float  # robust residual scale s
    log_evidence: float
    converged: bool
    iterations: int
    outer_iterations: int
    grad_norm: float
    K: np.ndarray = field(repr=False, default=None)
    chol_B: np.ndarray = field(repr=False, default=None)
    noise_scale: np.ndarray = field(repr=False, default=None)  # w * sigma * s
    y: np.ndarray = field(repr=False, default=None)
    cfg: HuberConfig = None
    weights: np.ndarray = field(repr=False, default=None)

    def log_det_A(self):
        """ln|A| = ln|K| - ln|I + W^1/2 K W^1/2|."""
        return factorize(self.K).logdet - 2.0 * float(np.sum(np.log(np.diag(self.chol_B))))


def _pseudo_terms(y, f, noise_scale, b):
    r = (y - f) / noise_scale
    val, d1, d2 = pseudo_huber(r, b)
    return val, d1 / noise_scale, d2 / noise_scale ** 2


def _psi(a, f, y, noise_scale, b):
    return -0.5 * a @ f - float(np.sum(_pseudo_terms(y, f, noise_scale, b)[0]))


def _curvature_step(K, f, g, W):
    """a-update maximizing the quadratic model with curvature diag(W)."""
    sqrtW = np.sqrt(W)
    B = np.eye(f.size) + sqrtW[:, None] * K * sqrtW[None, :]
    L = linalg.cholesky(B, lower=True, check_finite=False)
    rhs = W * f + g
    return rhs - sqrtW * linalg.cho_solve((L, True), sqrtW * (K @ rhs), check_finite=False)


def _newton(K, y, noise_scale, b, a0, max_iter=MAX_INNER):
    """Maximize -rho(y - f) - f^T K^-1 f / 2 in the a = K^-1 f parametrization.

    A full Newton step is taken when it increases the objective. Otherwise
    the step uses the majorizing curvature psi(r)/r (IRLS weights), whose
    full step cannot decrease the objective; backtracking only guards
    against rounding.
    """
    a = a0.copy()
    f = K @ a
    psi = _psi(a, f, y, noise_scale, b)
    psi0 = _psi(np.zeros_like(a), np.zeros_like(f), y, noise_scale, b)
    if not psi >= psi0:
        # warm start is worse than the prior mean
        a, f, psi = np.zeros_like(a), np.zeros_like(f), psi0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        _, g, W = _pseudo_terms(y, f, noise_scale, b)
        if np.max(np.abs(g - a)) < GRAD_TOL:
            converged = True
            it -= 1
            break
        a_try = _curvature_step(K, f, g, W)
        f_try = K @ a_try
        psi_try = _psi(a_try, f_try, y, noise_scale, b)
        if not psi_try >= psi:
            r = (y - f) / noise_scale
            W_mm = 1.0 / (np.sqrt(1.0 + (r / b) ** 2) * noise_scale ** 2)
            da = _curvature_step(K, f, g, W_mm) - a
            step = 1.0
            while True:
                a_try = a + step * da
                f_try = K @ a_try
                psi_try = _psi(a_try, f_try, y, noise_scale, b)
                if psi_try >= psi - 1e-12 * abs(psi) or step < 1e-8:
                    break
                step *= 0.5
        df = np.max(np.abs(f_try - f))
        a, f, psi = a_try, f_try, psi_try
        if df < STEP_TOL * max(1.0, np.max(np.abs(f))):
            converged = True
            break
    _, g, W = _pseudo_terms(y, f, noise_scale, b)
    return a, f, W, g, converged, it


def _evidence_terms(K, y, f, a, W, cfg, w, s):
    sqrtW = np.sqrt(W)
    B = np.eye(y.size) + sqrtW[:, None] * K * sqrtW[None, :]
    L = linalg.cholesky(B, lower=True, check_finite=False)
    loglik = huber_log_likelihood(y, f, cfg, w, s, pseudo=True)
    value = loglik - 0.5 * a @ f - float(np.sum(np.log(np.diag(L))))
    return value, L


def find_mode(X, y, cfg: HuberConfig, params: KernelParams, w=None, s=None,
              max_outer=MAX_OUTER, max_inner=MAX_INNER, a0=None) -> LaplacePosterior:
    """Posterior mode under the pseudo-Huber likelihood and a N(0, K) prior.

    If ``s`` is None it starts from the residuals at f = 0 and is refreshed
    between Newton solves until it stops moving; passing ``s`` freezes it.
    ``a0`` warm-starts Newton in the a = K^-1 f coordinates.
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    K = build_gram(X, params).K
    freeze = s is not None
    if not freeze:
        s = robust_scale(y, d).s
    a = np.zeros(n) if a0 is None else np.array(a0, dtype=float)
    total = 0
    converged = False
    outer = 0
    for outer in range(1, max_outer + 1):
        noise_scale = w * cfg.sigma * s
        a, f, W, g, ok, its = _newton(K, y, noise_scale, cfg.b, a, max_inner)
        total += its
        if freeze:
            converged = ok
            break
        s_new = robust_scale(y - f, d).s
        if ok and abs(s_new - s) <= SCALE_TOL * s:
            converged = True
            break
        if ok and np.max(np.abs(y - f)) == 0.0:
            converged = True
            break
        s = s_new
    noise_scale = w * cfg.sigma * s
    value, L = _evidence_terms(K, y, f, a, W, cfg, w, s)
    return LaplacePosterior(
        mode=f, W=W, alpha=a, scale=float(s), log_evidence=float(value),
        converged=bool(converged), iterations=total, outer_iterations=outer,
        grad_norm=float(np.max(np.abs(g - a))), K=K, chol_B=L,
        noise_scale=noise_scale, y=y, cfg=cfg, weights=w,
    )


def approx_log_evidence(posterior: LaplacePosterior) -> float:
    """ln q = ln p_H(y | mode) - mode^T K^-1 mode / 2 - ln|I + W^1/2 K W^1/2| / 2.

    The first term uses the pseudo-Huber loss, the same likelihood the
    Gaussian approximation was built around.
    """
    return posterior.log_evidence


def latent_predict(post: LaplacePosterior, X, Xs, params: KernelParams):
    """Latent mean C*^T alpha and variance k** - C*^T (K + W^-1)^-1 C*."""
    C = cross_cov(X, Xs, params)
    mean = C.T @ post.alpha
    v = linalg.solve_triangular(post.chol_B, np.sqrt(post.W)[:, None] * C, lower=True,
                                check_finite=False)
    latent = params.variance - np.sum(v * v, axis=0)
    return mean, np.maximum(latent, 1e-15 * params.variance)


@dataclass
class HuberGpModel:
    """Fitted HuberLA model; hyperparameters are in standardized response units."""

    params: KernelParams
    cfg: HuberConfig
    weights: np.ndarray
    posterior: LaplacePosterior
    X: np.ndarray
    y_std: np.ndarray
    center: float
    scale: float
    converged: bool = True
    grad_norm: float = 0.0
    optim: OptimResult = None

    @property
    def noise_sd(self):
        """sigma * s in original response units."""
        return self.cfg.sigma * self.posterior.scale * self.scale

    def hyperparameters(self) -> dict:
        return {
            "sigma": self.cfg.sigma,
            "robust_scale": self.posterior.scale * self.scale,
            "noise_sd": self.noise_sd,
            "amplitude": self.params.amplitude * self.scale,
            "length_scales": self.params.length_scales.tolist(),
            "b": self.cfg.b,
            "eps": self.cfg.eps,
            "log_evidence_standardized": self.posterior.log_evidence,
            "converged": self.converged,
            "mode_converged": self.posterior.converged,
        }


class _FrozenScaleEvidence:
    """Log evidence at a frozen robust scale, as a function of log hyperparameters.

    Layout of ``x`` is [log tau, log s_1..s_d], preceded by log sigma when
    ``fit_sigma`` is set. The last mode is reused as the next Newton start.
    """

    def __init__(self, X, ys, cfg, w, s, fit_sigma=False, h=FD_STEP):
        self.X, self.ys, self.cfg, self.w, self.s = X, ys, cfg, w, s
        self.fit_sigma = fit_sigma
        self.h = h
        self._a = None

    def unpack(self, x):
        if self.fit_sigma:
            return self.cfg.with_sigma(np.exp(x[0])), KernelParams.from_log(x[1:])
        return self.cfg, KernelParams.from_log(x)

    def value(self, x):
        cfg, params = self.unpack(x)
        try:
            post = find_mode(self.X, self.ys, cfg, params, self.w, s=self.s, a0=self._a)
        except (np.linalg.LinAlgError, ValueError):
            return -np.inf
        if post.converged:
            self._a = post.alpha
        return post.log_evidence

    def __call__(self, x):
        value = self.value(x)
        g = np.empty_like(x)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = self.h
            g[k] = (self.value(x + e) - self.value(x - e)) / (2 * self.h)
        return value, g


def evidence_and_fd_grad(X, ys, cfg, w, x, s, fit_sigma=False, h=FD_STEP):
    """Approximate log evidence at frozen ``s`` and its central-difference gradient."""
    return _FrozenScaleEvidence(X, ys, cfg, w, s, fit_sigma, h)(np.asarray(x, dtype=float))


def optimize_hyperparams(X, y, cfg: HuberConfig = None, w=None, init=None, restarts=5, seed=0,
                         maxiter=500, gtol=1e-5, fit_sigma=True, max_rounds=MAX_ROUNDS,
                         scale_tol=ROUND_TOL) -> HuberGpModel:
    """ML-II of the Laplace evidence, alternated with robust scale refreshes.

    Each round maximizes the evidence over [log tau, log s_1..s_d] (and
    log sigma if ``fit_sigma``) with ``s`` frozen, then recomputes ``s``
    from the residuals at the new mode. The first round uses ``init`` plus
    ``restarts`` random starts; later rounds continue from the previous
    optimum. Stops once ``s`` moves by less than ``scale_tol`` relative.

    The evidence depends on sigma and s only through sigma * s, so with
    ``fit_sigma`` the refresh merely re-expresses the fitted noise scale and
    the loop ends after the second round. With ``fit_sigma=False`` sigma
    stays at ``cfg.sigma`` and the rounds form a genuine fixed-point scheme.
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ValueError("need at least two training points")
    if X.shape[0] != y.size:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
    cfg = HuberConfig() if cfg is None else cfg
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=float)
    ys, center, scale = standardize_targets(y)
    d = X.shape[1]
    dim = d + 1 + int(fit_sigma)

    rng = np.random.default_rng(seed)
    starts = [] if init is None else [np.asarray(init, dtype=float)]
    default = np.zeros(dim)
    default[dim - d:] = np.log(np.maximum(np.std(X, axis=0), 1e-3))
    starts.append(default)
    starts += log_uniform_starts(rng, restarts, dim)

    s = robust_scale(ys, d).s
    rounds = []
    res = None
    converged = False
    for _ in range(max_rounds):
        objective = _FrozenScaleEvidence(X, ys, cfg, w, s, fit_sigma)
        res = maximize(objective, starts, maxiter=maxiter, gtol=gtol, accept_tol=FD_ACCEPT_TOL)
        fitted, params = objective.unpack(res.x)
        post = find_mode(X, ys, fitted, params, w, s=s)
        s_new = robust_scale(ys - post.mode, d).s
        rounds.append((s, res.value))
        if abs(s_new - s) <= scale_tol * s:
            converged = True
            break
        x_next = res.x.copy()
        if fit_sigma:
            x_next[0] += np.log(s / s_new)  # keep sigma * s where the optimum put it
        starts = [x_next]
        s = s_new
    res.rounds = rounds
    return HuberGpModel(params, fitted, w, post, X, ys, center, scale,
                        converged and res.converged and post.converged, res.grad_norm, res)


def huber_model(X, y, cfg: HuberConfig, params: KernelParams, w=None, standardize=False,
                s=None) -> HuberGpModel:
    """Wrap fixed hyperparameters as a model (mode found, nothing optimized)."""
    X = as_matrix(X)
    y = np.asarray(y, dtype=float)
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=float)
    if standardize:
        ys, center, scale = standardize_targets(y)
    else:
        ys, center, scale = y.copy(), 0.0, 1.0
    post = find_mode(X, ys, cfg, params, w, s=s)
    return HuberGpModel(params, cfg, w, post, X, ys, center, scale, post.converged)


def predict_laplace(model: HuberGpModel, Xs, include_noise=True) -> PredictiveDistribution:
    """Predictive moments around the Laplace posterior; unseen inputs get weight 1."""
    Xs = as_matrix(Xs)
    if Xs.shape[1] != model.X.shape[1]:
        raise ValueError(f"test inputs have {Xs.shape[1]} columns, expected {model.X.shape[1]}")
    mean, latent = latent_predict(model.posterior, model.X, Xs, model.params)
    noise = (model.cfg.sigma * model.posterior.scale) ** 2
    var = latent + noise if include_noise else latent
    s2 = model.scale ** 2
    return PredictiveDistribution(model.center + model.scale * mean, var * s2,
                                  latent_var=latent * s2)
