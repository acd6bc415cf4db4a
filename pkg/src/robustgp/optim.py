"""Multi-start bounded quasi-Newton maximization in log-parameter space."""
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

LOG_BOUNDS = (np.log(1e-5), np.log(1e5))


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    grad_norm: float
    converged: bool
    iterations: int
    starts: list
    rounds: list = field(default_factory=list)  # (frozen s, best value) per outer round


class NonFiniteObjective(FloatingPointError):
    pass


def maximize(fun_grad, starts, maxiter=500, gtol=1e-5, bounds=LOG_BOUNDS, accept_tol=None):
    """Maximize ``fun_grad(x) -> (value, grad)`` from every start, keep the best.

    ``gtol`` is the stopping tolerance handed to L-BFGS-B. A run counts as
    converged when its projected gradient sup-norm is below ``accept_tol``
    (default ``gtol``); pass a looser value when the gradient itself is only
    known to finite-difference accuracy. Unconverged runs still return the
    best iterate, flagged ``converged=False``.
    """
    accept_tol = gtol if accept_tol is None else accept_tol
    lo, hi = bounds
    best = None
    history = []

    for x0 in starts:
        x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
        v0, _ = fun_grad(x0)
        if not np.isfinite(v0):
            history.append((x0, -np.inf, False))
            continue

        def neg(x):
            v, g = fun_grad(x)
            if not np.isfinite(v):
                return 1e300, np.zeros_like(x)
            return -v, -np.asarray(g, dtype=float)

        res = optimize.minimize(
            neg, x0, jac=True, method="L-BFGS-B",
            bounds=[(lo, hi)] * x0.size,
            options={"maxiter": maxiter, "gtol": gtol, "ftol": 1e-15, "maxls": 40},
        )
        v, g = fun_grad(res.x)
        pg = _projected_grad(res.x, g, lo, hi)
        ok = bool(np.isfinite(v) and np.max(np.abs(pg)) < accept_tol)
        history.append((res.x, v, ok))
        if best is None or v > best.value:
            best = OptimResult(res.x.copy(), float(v), float(np.max(np.abs(pg))), ok,
                               int(res.nit), [])

    if best is None:
        raise NonFiniteObjective("objective is not finite at any starting point")
    best.starts = history
    return best


def _projected_grad(x, g, lo, hi):
    g = np.array(g, dtype=float)
    tight = 1e-10
    g[(x <= lo + tight) & (g < 0)] = 0.0
    g[(x >= hi - tight) & (g > 0)] = 0.0
    return g


def log_uniform_starts(rng, n_starts, dim, low=1e-2, high=1e2):
    return [rng.uniform(np.log(low), np.log(high), size=dim) for _ in range(n_starts)]
