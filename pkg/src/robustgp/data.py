"""Benchmark generators (Neal, Friedman), CSV ingestion, k-fold splits and metrics."""
import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .dataset import Dataset, PredictiveDistribution

NOISE_FAMILIES = ("normal", "student_t", "laplace", "cauchy")

_NOISE_ALIASES = {
    "normal": "normal", "gaussian": "normal", "n": "normal",
    "student_t": "student_t", "student-t": "student_t", "studentt": "student_t", "t": "student_t",
    "laplace": "laplace",
    "cauchy": "cauchy",
}

_NOISE_DEFAULTS = {
    "normal": (0.0, 1.0),      # mean, sd
    "student_t": (10.0, 1.0),  # dof, scale
    "laplace": (0.0, 1.0),     # location, scale
    "cauchy": (0.0, 1.0),      # location, scale
}


class ConfigError(ValueError):
    """Invalid user-supplied setting; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class NoiseSpec:
    family: str
    params: tuple

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ConfigError("noise", f"unknown family {self.family!r}; expected one of {NOISE_FAMILIES}")
        p = tuple(float(v) for v in self.params)
        defaults = _NOISE_DEFAULTS[self.family]
        if len(p) > len(defaults):
            raise ConfigError("noise", f"{self.family} takes at most {len(defaults)} parameters")
        p = p + defaults[len(p):]
        object.__setattr__(self, "params", p)
        if self.family == "student_t" and not p[0] > 0:
            raise ConfigError("noise", "student-t degrees of freedom must be positive")
        if not p[1] > 0:
            raise ConfigError("noise", f"{self.family} scale must be positive")
        if not all(np.isfinite(p)):
            raise ConfigError("noise", "parameters must be finite")

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """'family[:p1[,p2]]', e.g. ``student-t:10`` or ``normal:0.01,0.08``."""
        name, _, rest = text.strip().partition(":")
        family = _NOISE_ALIASES.get(name.strip().lower())
        if family is None:
            raise ConfigError("noise", f"unknown family {name!r}; expected one of {NOISE_FAMILIES}")
        try:
            params = tuple(float(v) for v in rest.split(",") if v.strip())
        except ValueError:
            raise ConfigError("noise", f"cannot parse parameters {rest!r}") from None
        return cls(family, params)

    def label(self) -> str:
        return f"{self.family}:" + ",".join(f"{v:g}" for v in self.params)


def sample_noise(spec: NoiseSpec, n, rng) -> np.ndarray:
    a, b = spec.params
    if spec.family == "normal":
        return rng.normal(a, b, size=n)
    if spec.family == "student_t":
        return b * rng.standard_t(a, size=n)
    if spec.family == "laplace":
        return rng.laplace(a, b, size=n)
    # tangent transform of a uniform angle
    return a + b * np.tan(np.pi * (rng.uniform(size=n) - 0.5))


@dataclass(frozen=True)
class ContaminationPlan:
    """Planted contamination, all indices 0-based.

    ``leverage`` maps a row to ``(x, y)`` replacements (``None`` keeps the
    generated value); ``x`` is written into ``leverage_column``.
    ``good_leverage`` rows are relocated in input space but keep a response
    consistent with the model, so they are not marked as outliers.
    """

    vertical: tuple = ()
    vertical_magnitude: float = 10.0
    leverage: dict = field(default_factory=dict)
    leverage_column: int = 0
    good_leverage: dict = field(default_factory=dict)
    random_count: int = 0
    random_mean: float = 10.0
    random_sd: float = 3.0

    def validate(self, n, d):
        vert = set(self.vertical)
        lev = set(self.leverage)
        good = set(self.good_leverage)
        for name, idx in (("vertical", vert), ("leverage", lev), ("good_leverage", good)):
            bad = [i for i in idx if not 0 <= i < n]
            if bad:
                raise ConfigError("plan", f"{name} indices {sorted(bad)} out of range for n={n}")
        if vert & lev or vert & good or lev & good:
            raise ConfigError("plan", "vertical, leverage and good-leverage index sets must be disjoint")
        if not 0 <= self.leverage_column < d:
            raise ConfigError("plan", f"leverage column {self.leverage_column} out of range for d={d}")
        if self.random_count > n - len(vert | lev | good):
            raise ConfigError("plan", "not enough free rows for the random outliers")

    @property
    def fixed_rows(self):
        return sorted(set(self.vertical) | set(self.leverage) | set(self.good_leverage))

    @classmethod
    def none(cls):
        return cls()

    @classmethod
    def neal(cls):
        return cls(
            vertical=tuple(i - 1 for i in (7, 8, 9, 10, 11, 15, 61, 70)),
            vertical_magnitude=10.0,
            leverage={20: (4.3, 8.4763), 21: (4.4, 9.1938), 22: (4.5, 0.2833)},
            good_leverage={49 + k: (x, y) for k, (x, y) in enumerate(zip(
                NEAL_GOOD_LEVERAGE_X, (1.9773, 2.1271, 2.1096, 1.8316, 1.9467, 2.373)))},
        )

    @classmethod
    def friedman(cls):
        return cls(
            vertical=tuple(i - 1 for i in (7, 8, 9, 10, 11, 15, 61, 70)),
            vertical_magnitude=10.0,
            leverage={20 + k: (v, None) for k, v in enumerate(
                (8.5312, 9.3654, 0.7739, 0.4802, 1.3408, 1.7653))},
            leverage_column=4,
            random_count=10, random_mean=10.0, random_sd=3.0,
        )


NEAL_GOOD_LEVERAGE_X = (3.5, 3.55, 3.6, 3.65, 3.7, 3.75)
NEAL_INPUT_SD = 1.38
NEAL_INPUT_RANGE = (-2.7, 2.7)
NEAL_TEST_GRID = (-2.7, 5.0, 541)


def neal_truth(x):
    x = np.asarray(x, dtype=float)
    return 0.3 + 0.4 * x + 0.5 * np.sin(2.7 * x) + 1.1 / (1.0 + x * x)


def friedman_truth(X):
    X = np.asarray(X, dtype=float)
    return (10.0 * np.sin(np.pi * X[..., 0] * X[..., 1]) + 20.0 * (X[..., 2] - 0.5) ** 2
            + 10.0 * X[..., 3] + 5.0 * X[..., 4])


def _neal_inputs(n, free, rng):
    """Stratified N(0, 1.38^2) draws for the rows not fixed by the plan, truncated to +-2.7."""
    m = free.size
    lo, hi = special.ndtr(np.array(NEAL_INPUT_RANGE) / NEAL_INPUT_SD)
    p = lo + (hi - lo) * (rng.permutation(m) + rng.uniform(size=m)) / m
    x = np.zeros(n)
    x[free] = NEAL_INPUT_SD * special.ndtri(p)
    return x


def _apply_vertical_and_random(y, plan, rng, exclude):
    mask = np.zeros(y.size, dtype=bool)
    v = np.asarray(plan.vertical, dtype=int)
    y[v] += plan.vertical_magnitude
    mask[v] = True
    if plan.random_count:
        pool = np.setdiff1d(np.arange(y.size), np.asarray(sorted(exclude), dtype=int))
        idx = np.sort(rng.choice(pool, size=plan.random_count, replace=False))
        y[idx] += rng.normal(plan.random_mean, plan.random_sd, size=idx.size)
        mask[idx] = True
    return mask


def gen_neal(noise: NoiseSpec, plan: Optional[ContaminationPlan] = None, seed=0, n=100) -> Dataset:
    """Neal's one-dimensional benchmark with the planted outlier protocol.

    The test grid holds 541 evenly spaced points on [-2.7, 5] with noise-free
    targets.
    """
    plan = ContaminationPlan.neal() if plan is None else plan
    plan.validate(n, 1)
    rng = np.random.default_rng(seed)
    fixed = np.asarray(plan.fixed_rows, dtype=int)
    # vertical outliers keep ordinary inputs; only leverage rows are relocated
    free = np.setdiff1d(np.arange(n), list(plan.leverage) + list(plan.good_leverage))
    x = _neal_inputs(n, free, rng)
    for i, (xv, _) in {**plan.good_leverage, **plan.leverage}.items():
        x[i] = xv
    y = neal_truth(x) + sample_noise(noise, n, rng)
    mask = _apply_vertical_and_random(y, plan, rng, fixed)
    for i, (_, yv) in {**plan.good_leverage, **plan.leverage}.items():
        if yv is not None:
            y[i] = yv
    mask[list(plan.leverage)] = True
    lo, hi, m = NEAL_TEST_GRID
    xs = np.linspace(lo, hi, m)
    meta = {"vertical": list(plan.vertical), "bad_leverage": sorted(plan.leverage),
            "good_leverage": sorted(plan.good_leverage), "noise": noise.label(), "seed": seed}
    return Dataset(x[:, None], y, xs[:, None], neal_truth(xs), mask, "neal", meta)


def gen_friedman(replicates=10, noise: Optional[NoiseSpec] = None,
                 plan: Optional[ContaminationPlan] = None, seed=0, n=100, n_test=10000, d=10):
    """Friedman replicates on [0, 1]^10 plus one shared noise-free test set.

    Replicate ``r`` draws from the r-th child of ``SeedSequence(seed)``; the
    test set uses the child after the last replicate.
    """
    noise = NoiseSpec("normal", (0.01, 0.08)) if noise is None else noise
    plan = ContaminationPlan.friedman() if plan is None else plan
    plan.validate(n, d)
    children = np.random.SeedSequence(seed).spawn(replicates + 1)
    test_rng = np.random.default_rng(children[-1])
    Xs = test_rng.uniform(size=(n_test, d))
    ys = friedman_truth(Xs)
    out = []
    for r in range(replicates):
        rng = np.random.default_rng(children[r])
        X = rng.uniform(size=(n, d))
        y = friedman_truth(X) + sample_noise(noise, n, rng)
        mask = _apply_vertical_and_random(y, plan, rng, plan.fixed_rows)
        for i, (xv, yv) in plan.leverage.items():
            if xv is not None:
                X[i, plan.leverage_column] = xv
            if yv is not None:
                y[i] = yv
        mask[list(plan.leverage)] = True
        meta = {"replicate": r, "vertical": list(plan.vertical), "bad_leverage": sorted(plan.leverage),
                "noise": noise.label(), "seed": seed}
        out.append(Dataset(X, y, Xs, ys, mask, "friedman", meta))
    return out


# -- tabular input -----------------------------------------------------------

class CsvError(ValueError):
    def __init__(self, message, row=None, col=None):
        where = f" at (row {row}, col {col})" if row is not None else ""
        super().__init__(message + where)
        self.row, self.col = row, col


@dataclass(frozen=True)
class Standardizer:
    """Per-column median/MAD transform of the inputs."""

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        center = np.median(X, axis=0)
        scale = 1.4826 * np.median(np.abs(X - center), axis=0)
        fallback = np.std(X, axis=0)
        scale = np.where(scale > 0, scale, np.where(fallback > 0, fallback, 1.0))
        return cls(center, scale)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.center) / self.scale

    def inverse(self, Z):
        return np.asarray(Z, dtype=float) * self.scale + self.center


def load_csv(path, target_column, standardize=False) -> Dataset:
    """Read a headed, comma-separated numeric table.

    Rows and columns in error messages are 1-based and count data rows only.
    ``target_column`` is a header name or a 0-based index. With
    ``standardize`` the inputs are median/MAD scaled and the transform is
    stored in ``meta["standardizer"]``.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CsvError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise CsvError("empty file")
    header = [h.strip() for h in rows[0]]
    if isinstance(target_column, str) and not target_column.lstrip("-").isdigit():
        if target_column not in header:
            raise CsvError(f"target column {target_column!r} not in header {header}")
        t = header.index(target_column)
    else:
        t = int(target_column)
        if not -len(header) <= t < len(header):
            raise CsvError(f"target column index {t} out of range")
        t %= len(header)
    data = []
    for r, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CsvError(f"expected {len(header)} fields, found {len(row)}", r, len(row))
        vals = []
        for c, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise CsvError(f"non-numeric cell {cell!r}", r, c) from None
        data.append(vals)
    if len(data) < 2:
        raise CsvError(f"need at least two data rows, found {len(data)}")
    A = np.asarray(data)
    y = A[:, t]
    X = np.delete(A, t, axis=1)
    meta = {"path": str(path), "columns": [h for i, h in enumerate(header) if i != t],
            "target": header[t]}
    if standardize:
        st = Standardizer.fit(X)
        X = st.transform(X)
        meta["standardizer"] = st
    return Dataset(X, y, name="csv", meta=meta)


def kfold_split(n, k, seed=0):
    """Shuffled k-fold partition of range(n) into (train, test) index pairs.

    ``n`` may also be a Dataset. Fold sizes differ by at most one.
    """
    if isinstance(n, Dataset):
        n = n.n
    if not isinstance(k, (int, np.integer)) or k < 2 or k > n:
        raise ConfigError("kfold", f"k must be an integer in [2, n={n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


# -- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    nlp: float
    n: int

    def as_dict(self):
        return {"rmse": self.rmse, "mae": self.mae, "nlp": self.nlp, "n": self.n}


def metrics(pred: PredictiveDistribution, y_true) -> MetricsReport:
    """RMSE, MAE and mean negative log Gaussian predictive density."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    mu = np.asarray(pred.mean, dtype=float).ravel()
    var = np.asarray(pred.var, dtype=float).ravel()
    if mu.size != y_true.size or var.size != y_true.size:
        raise ValueError(f"length mismatch: {mu.size} predictions for {y_true.size} targets")
    if np.any(var <= 0):
        raise ValueError("predictive variances must be positive")
    err = y_true - mu
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mae = float(np.mean(np.abs(err)))
    nlp = float(np.mean(0.5 * np.log(2 * np.pi * var) + 0.5 * err ** 2 / var))
    return MetricsReport(rmse, mae, nlp, int(y_true.size))


def write_dataset_csv(path, X, y, mask=None, columns=None):
    """Write inputs, target and optional ``is_outlier`` column with round-trip floats."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    columns = columns or [f"x{k + 1}" for k in range(X.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(list(columns) + ["y"] + (["is_outlier"] if mask is not None else []))
        for i in range(X.shape[0]):
            row = [repr(float(v)) for v in X[i]] + [repr(float(y[i]))]
            if mask is not None:
                row.append(str(int(bool(mask[i]))))
            wr.writerow(row)
