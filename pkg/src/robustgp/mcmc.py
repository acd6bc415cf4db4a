"""GP with Huber likelihood by sampling (HuberMCMC).

Inliers share one Gaussian variance. Each outlying point gets its own
variance with an exponential prior, which is the scale-mixture form of the
Laplace tail. Given the variances the model is conjugate, so the latent
function is integrated out and the chain moves in hyperparameter space only:

    log p = log N(y | 0, K + Sigma) + n_g log C1 + n_l log C2
            + sum_l [log beta - beta v_l] + log priors

All coordinates live on the log scale. The inlier variance, the exponential
rate and the kernel hyperparameters get log-uniform priors on PRIOR_BOUNDS.
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .conjugate import gaussian_predict
from .dataset import PredictiveDistribution, standardize_targets
from .kernel import KernelParams, as_matrix, build_gram, factorize
from .likelihoods import HuberConfig, ResidualSplit, log_mixture_constants
from .projection import robust_scale

PRIOR_BOUNDS = (1e-4, 1e4)
LOG_PRIOR_BOUNDS = (np.log(PRIOR_BOUNDS[0]), np.log(PRIOR_BOUNDS[1]))
TARGET_ACCEPT = 0.44
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ChainSettings:
    """Sweeps per chain, discarded warm-up, thinning, master seed and chain count.

    ``burn_in=None`` means a fifth of ``total``.
    """

    total: int = 10000
    burn_in: Optional[int] = None
    thin: int = 4
    seed: int = 0
    chains: int = 2
    initial_step: float = 0.5

    def __post_init__(self):
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.total // 5)
        if not self.total > self.burn_in >= 0:
            raise ValueError(f"need total > burn_in >= 0, got {self.total} and {self.burn_in}")
        if self.thin < 1:
            raise ValueError(f"thin must be at least 1, got {self.thin}")
        if self.chains < 1:
            raise ValueError("need at least one chain")

    @property
    def retained(self) -> int:
        return (self.total - self.burn_in) // self.thin


@dataclass
class MixtureState:
    """One point of the chain.

    ``log_sl2`` holds one log variance per entry of ``split.outliers``.
    ``log_beta`` is meaningless while there are no outliers.
    """

    log_sg2: float
    log_sl2: np.ndarray
    log_beta: float
    theta: np.ndarray  # [log tau, log s_1..s_d]
    split: ResidualSplit
    iteration: int = 0

    @property
    def sigma_g2(self) -> float:
        return float(np.exp(self.log_sg2))

    @property
    def sigma_l2(self) -> np.ndarray:
        return np.exp(self.log_sl2)

    @property
    def beta(self) -> float:
        return float(np.exp(self.log_beta))

    @property
    def params(self) -> KernelParams:
        return KernelParams.from_log(self.theta)

    @property
    def n_outliers(self) -> int:
        return self.split.n_outliers

    def noise_diag(self, n=None) -> np.ndarray:
        n = self.split.standardized.size if n is None else n
        out = np.full(n, self.sigma_g2)
        out[self.split.outliers] = self.sigma_l2
        return out

    def copy(self) -> "MixtureState":
        return replace(self, log_sl2=self.log_sl2.copy(), theta=self.theta.copy())


def _make_split(r_std, b, outside=None) -> ResidualSplit:
    outside = np.abs(r_std) > b if outside is None else outside
    return ResidualSplit(np.flatnonzero(~outside), np.flatnonzero(outside), r_std)


def init_chain(X, y, cfg: HuberConfig, w=None, seed=0) -> MixtureState:
    """Starting state from the residuals at f = 0 (``y`` already standardized).

    sigma_g^2 starts at the squared robust scale, each outlier variance at its
    squared residual and beta at the reciprocal mean outlier variance. The
    kernel starts at unit amplitude with length scales equal to the input
    standard deviations. ``seed`` is accepted for interface symmetry; the
    initial state uses no randomness.
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    s = robust_scale(y, d).s
    split = _make_split(y / (w * s), cfg.b)
    sl2 = np.maximum(y[split.outliers] ** 2, s * s)
    log_beta = -np.log(np.mean(sl2)) if sl2.size else 0.0
    theta = np.concatenate([[0.0], np.log(np.maximum(np.std(X, axis=0), 1e-3))])
    lo, hi = LOG_PRIOR_BOUNDS
    return MixtureState(float(np.clip(2 * np.log(s), lo, hi)), np.log(sl2),
                        float(np.clip(log_beta, lo, hi)), np.clip(theta, lo, hi), split)


class CollapsedTarget:
    """Log density of a state with f integrated out, caching K for the current theta."""

    def __init__(self, X, y, cfg: HuberConfig):
        self.X = as_matrix(X)
        self.y = np.asarray(y, dtype=float)
        self.cfg = cfg
        self.log_c1, self.log_c2 = log_mixture_constants(cfg)
        self._theta = None
        self._K = None

    def gram(self, theta):
        if self._theta is None or not np.array_equal(theta, self._theta):
            self._K = build_gram(self.X, KernelParams.from_log(theta)).K
            self._theta = np.array(theta, copy=True)
        return self._K

    def __call__(self, state: MixtureState):
        """(log density, alpha = (K + Sigma)^-1 y); -inf outside the prior support."""
        lo, hi = LOG_PRIOR_BOUNDS
        box = [state.log_sg2, *state.theta]
        if state.n_outliers:
            box.append(state.log_beta)
        if min(box) < lo or max(box) > hi:
            return -np.inf, None
        K = self.gram(state.theta)
        R = K + np.diag(state.noise_diag(self.y.size))
        try:
            fac = factorize(R, scale=float(np.max(np.diag(R))))
        except np.linalg.LinAlgError:
            return -np.inf, None
        alpha = fac.solve(self.y)
        n = self.y.size
        value = -0.5 * self.y @ alpha - 0.5 * fac.logdet - 0.5 * n * LOG_2PI
        n_l = state.n_outliers
        value += (n - n_l) * self.log_c1 + n_l * self.log_c2
        if n_l:
            v = state.sigma_l2
            # exponential prior on each v_l, written on log v_l (Jacobian v_l)
            value += n_l * state.log_beta - state.beta * float(np.sum(v)) + float(np.sum(state.log_sl2))
        return float(value), alpha


def latent_conditional(state: MixtureState, X, y):
    """Mean K (K + Sigma)^-1 y and a lower Cholesky factor of the covariance.

    The covariance K - K (K + Sigma)^-1 K is formed as
    Sigma - Sigma (K + Sigma)^-1 Sigma, which stays accurate when Sigma is
    small relative to K.
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=float)
    K = build_gram(X, state.params).K
    noise = state.noise_diag(y.size)
    fac = factorize(K + np.diag(noise))
    mean = y - noise * fac.solve(y)
    Z = fac.solve(np.diag(noise))
    cov = np.diag(noise) - noise[:, None] * Z
    cov = 0.5 * (cov + cov.T)
    return mean, factorize(cov, scale=float(np.max(np.diag(K)))).L


class _DualAveraging:
    """Per-coordinate step sizes tuned toward a target acceptance probability."""

    def __init__(self, size, initial, target=TARGET_ACCEPT, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.full(size, np.log(10.0 * initial))
        self.hbar = np.zeros(size)
        self.log_step = np.full(size, np.log(initial))
        self.log_step_bar = np.zeros(size)
        self.t = np.zeros(size)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.frozen = False

    def step(self, k):
        return float(np.exp(self.log_step_bar[k] if self.frozen else self.log_step[k]))

    def update(self, k, accept_prob):
        if self.frozen:
            return
        self.t[k] += 1
        t = self.t[k]
        eta = 1.0 / (t + self.t0)
        self.hbar[k] = (1 - eta) * self.hbar[k] + eta * (self.target - accept_prob)
        self.log_step[k] = self.mu[k] - np.sqrt(t) / self.gamma * self.hbar[k]
        m = t ** -self.kappa
        self.log_step_bar[k] = m * self.log_step[k] + (1 - m) * self.log_step_bar[k]

    def freeze(self):
        never = self.t == 0
        self.log_step_bar[never] = self.log_step[never]
        self.frozen = True


# step-size slots: 0 sigma_g^2, 1 beta, 2.. theta, then one per training point
def _slots(d, n):
    return 2 + (d + 1) + n


def _metropolis(target, state, current, set_coord, slot, tuner, rng, counts):
    proposal = state.copy()
    set_coord(proposal, rng.normal(scale=tuner.step(slot)))
    value, alpha = target(proposal)
    log_ratio = value - current[0]
    accept_prob = 1.0 if log_ratio >= 0 else (float(np.exp(log_ratio)) if np.isfinite(log_ratio) else 0.0)
    tuner.update(slot, accept_prob)
    counts[slot, 1] += 1
    if rng.uniform() < accept_prob:
        counts[slot, 0] += 1
        return proposal, (value, alpha)
    return state, current


def sample_hyperparams(state: MixtureState, target: CollapsedTarget, rng, tuner, counts, current=None,
                       update_theta=True):
    """One sweep of single-coordinate random-walk Metropolis on the log scale.

    Order: log sigma_g^2, log beta (only with outliers), log theta, then each
    outlier's log variance. Returns the new state and its (log density, alpha).
    """
    current = target(state) if current is None else current
    n_theta = state.theta.size

    def shift_sg2(s, e):
        s.log_sg2 += e

    state, current = _metropolis(target, state, current, shift_sg2, 0, tuner, rng, counts)
    if state.n_outliers:
        def shift_beta(s, e):
            s.log_beta += e
        state, current = _metropolis(target, state, current, shift_beta, 1, tuner, rng, counts)
    for k in range(n_theta if update_theta else 0):
        def shift_theta(s, e, k=k):
            s.theta[k] += e
        state, current = _metropolis(target, state, current, shift_theta, 2 + k, tuner, rng, counts)
    for j, idx in enumerate(state.split.outliers):
        def shift_sl2(s, e, j=j):
            s.log_sl2[j] += e
        state, current = _metropolis(target, state, current, shift_sl2, 2 + n_theta + idx, tuner, rng, counts)
    return state, current


def refresh_split(state: MixtureState, target: CollapsedTarget, alpha, w, b) -> MixtureState:
    """Re-split on r / (w sigma_g) with r = y - E[f | y, Sigma] = Sigma alpha.

    Points that stay outlying keep their variance; new outliers start at
    their squared residual.
    """
    noise = state.noise_diag(target.y.size)
    r = noise * alpha
    r_std = r / (w * np.sqrt(state.sigma_g2))
    split = _make_split(r_std, b)
    old = dict(zip(state.split.outliers.tolist(), state.log_sl2.tolist()))
    log_sl2 = np.array([old.get(i, np.log(max(r[i] ** 2, state.sigma_g2))) for i in split.outliers])
    new = state.copy()
    new.split = split
    new.log_sl2 = log_sl2
    return new


@dataclass
class ChainOutput:
    """Retained draws of one or more chains, in standardized response units.

    ``draws`` has columns ``names``: log sigma_g^2, log beta (NaN when the
    sample had no outliers), log tau, log s_1..s_d.
    """

    names: list
    draws: np.ndarray  # (T, k)
    chain: np.ndarray  # (T,) chain index of each draw
    iteration: np.ndarray
    log_target: np.ndarray
    noise_diag: np.ndarray  # (T, n) Sigma diagonal per draw
    latent_mean: np.ndarray  # (T, n) E[f | y, Sigma, theta] at training inputs
    n_outliers: np.ndarray
    acceptance: dict
    X: np.ndarray = field(repr=False, default=None)
    y_std: np.ndarray = field(repr=False, default=None)
    center: float = 0.0
    scale: float = 1.0
    cfg: HuberConfig = None
    weights: np.ndarray = field(repr=False, default=None)
    settings: ChainSettings = None
    ess: dict = field(default_factory=dict)
    rhat: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.draws.shape[0]

    @property
    def n_chains(self) -> int:
        return int(self.chain.max()) + 1 if self.size else 0

    def by_chain(self, values) -> np.ndarray:
        """Reshape a per-draw series to (chains, draws per chain)."""
        values = np.asarray(values)
        return np.stack([values[self.chain == c] for c in range(self.n_chains)])

    def records(self):
        """One dict per retained draw, in original response units."""
        s2 = self.scale ** 2
        d = self.draws.shape[1] - 3
        for t in range(self.size):
            row = self.draws[t]
            yield {
                "chain": int(self.chain[t]),
                "iteration": int(self.iteration[t]),
                "log_target": float(self.log_target[t]),
                "sigma_g2": float(np.exp(row[0]) * s2),
                "beta": float(np.exp(row[1]) / s2) if np.isfinite(row[1]) else None,
                "amplitude": float(np.exp(row[2]) * self.scale),
                "length_scales": [float(v) for v in np.exp(row[3:3 + d])],
                "n_outliers": int(self.n_outliers[t]),
            }


def _run_single(X, ys, cfg, w, settings, rng, chain_id):
    n, d = X.shape
    target = CollapsedTarget(X, ys, cfg)
    state = init_chain(X, ys, cfg, w)
    current = target(state)
    if not np.isfinite(current[0]):
        raise np.linalg.LinAlgError("collapsed density is not finite at the initial state")
    tuner = _DualAveraging(_slots(d, n), settings.initial_step)
    counts = np.zeros((_slots(d, n), 2))
    T = settings.retained
    draws = np.empty((T, d + 3))
    noise = np.empty((T, n))
    latent = np.empty((T, n))
    log_target = np.empty(T)
    n_out = np.empty(T, dtype=int)
    iters = np.empty(T, dtype=int)
    t = 0
    for sweep in range(settings.total):
        if sweep == settings.burn_in:
            tuner.freeze()
            counts[:] = 0
        state, current = sample_hyperparams(state, target, rng, tuner, counts, current)
        state = refresh_split(state, target, current[1], w, cfg.b)
        state.iteration = sweep + 1
        current = target(state)
        if sweep >= settings.burn_in and (sweep - settings.burn_in + 1) % settings.thin == 0:
            diag = state.noise_diag(n)
            draws[t] = [state.log_sg2, state.log_beta if state.n_outliers else np.nan, *state.theta]
            noise[t] = diag
            latent[t] = ys - diag * current[1]
            log_target[t] = current[0]
            n_out[t] = state.n_outliers
            iters[t] = sweep
            t += 1
    return draws, noise, latent, log_target, n_out, iters, counts


def run_chain(X, y, cfg: HuberConfig = None, w=None, settings: ChainSettings = None) -> ChainOutput:
    """Run ``settings.chains`` chains and collect retained draws with diagnostics.

    Targets are standardized (median, 1.4826 MAD) first. Chain ``c`` draws
    from ``SeedSequence(settings.seed).spawn(chains)[c]``, so results do not
    depend on how chains are scheduled.
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.size:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
    cfg = HuberConfig() if cfg is None else cfg
    settings = ChainSettings() if settings is None else settings
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=float)
    ys, center, scale = standardize_targets(y)
    d = X.shape[1]
    names = ["log_sigma_g2", "log_beta", "log_tau"] + [f"log_s{k + 1}" for k in range(d)]

    parts = []
    for c, child in enumerate(np.random.SeedSequence(settings.seed).spawn(settings.chains)):
        parts.append(_run_single(X, ys, cfg, w, settings, np.random.default_rng(child), c))

    counts = sum(p[6] for p in parts)
    acceptance = {}
    for slot, name in enumerate(names):
        if counts[slot, 1]:
            acceptance[name] = float(counts[slot, 0] / counts[slot, 1])
    tail = counts[len(names):]
    if tail[:, 1].sum():
        acceptance["log_sigma_l2"] = float(tail[:, 0].sum() / tail[:, 1].sum())

    out = ChainOutput(
        names=names,
        draws=np.concatenate([p[0] for p in parts]),
        chain=np.concatenate([np.full(p[0].shape[0], c) for c, p in enumerate(parts)]),
        iteration=np.concatenate([p[5] for p in parts]),
        log_target=np.concatenate([p[3] for p in parts]),
        noise_diag=np.concatenate([p[1] for p in parts]),
        latent_mean=np.concatenate([p[2] for p in parts]),
        n_outliers=np.concatenate([p[4] for p in parts]),
        acceptance=acceptance, X=X, y_std=ys, center=center, scale=scale, cfg=cfg,
        weights=w, settings=settings,
    )
    for k, name in enumerate(names):
        col = out.by_chain(out.draws[:, k])
        if not np.all(np.isfinite(col)):
            continue  # beta is undefined in draws without outliers
        out.ess[name] = effective_sample_size(col)
        out.rhat[name] = split_rhat(col)
    return out


def _autocovariance(x):
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def effective_sample_size(draws) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence; draws is (chains, n)."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    m, n = draws.shape
    if n < 4:
        return float(m * n)
    acov = np.stack([_autocovariance(c) for c in draws])
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += draws.mean(axis=1).var(ddof=1)
    if not var_plus > 0:
        return float(m * n)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum consecutive pairs while positive, forcing them to be non-increasing
    tau = -1.0
    prev = np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    return float(m * n / max(tau, 1.0 / np.log10(m * n + 10)))


def split_rhat(draws) -> float:
    """Potential scale reduction with every chain cut into two halves."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    half = draws.shape[1] // 2
    if half < 2:
        return float("nan")
    pieces = np.concatenate([draws[:, :half], draws[:, half:2 * half]])
    within = pieces.var(axis=1, ddof=1).mean()
    between = half * pieces.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    var_hat = (half - 1) / half * within + between / half
    return float(np.sqrt(var_hat / within))


def predictive_average(chain: ChainOutput, Xs, include_noise=True) -> PredictiveDistribution:
    """Equal-weight mixture of the per-draw Gaussian predictives.

    Mean is the average of per-draw means; variance is the average per-draw
    variance plus the variance of the per-draw means. Test points get the
    inlier variance sigma_g^2 as observation noise. ``mcse`` is the Monte
    Carlo standard error of the mean, using the ESS of each test point's
    per-draw mean series.
    """
    Xs = as_matrix(Xs)
    if chain.size == 0:
        raise ValueError("chain has no retained draws")
    if Xs.shape[1] != chain.X.shape[1]:
        raise ValueError(f"test inputs have {Xs.shape[1]} columns, expected {chain.X.shape[1]}")
    T = chain.size
    means = np.empty((T, Xs.shape[0]))
    latents = np.empty_like(means)
    for t in range(T):
        params = KernelParams.from_log(chain.draws[t, 2:])
        means[t], latents[t], _ = gaussian_predict(chain.X, chain.y_std, chain.noise_diag[t], params, Xs)
    noise = np.exp(chain.draws[:, 0])[:, None] if include_noise else 0.0
    mean, var = mixture_moments(means, latents + noise)
    latent_var = mixture_moments(means, latents)[1]
    per_chain = [means[chain.chain == c] for c in range(chain.n_chains)]
    ess = np.array([effective_sample_size(np.stack([p[:, i] for p in per_chain]))
                    for i in range(Xs.shape[0])])
    mcse = means.std(axis=0, ddof=1) / np.sqrt(ess) if T > 1 else np.zeros(Xs.shape[0])
    s = chain.scale
    return PredictiveDistribution(chain.center + s * mean, var * s * s,
                                  latent_var=latent_var * s * s, mcse=mcse * s)


def mixture_moments(means, variances):
    """(mean, variance) of an equal-weight Gaussian mixture, columnwise."""
    means = np.atleast_2d(means)
    variances = np.atleast_2d(variances)
    return means.mean(axis=0), variances.mean(axis=0) + means.var(axis=0)
