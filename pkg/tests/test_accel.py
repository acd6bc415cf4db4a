import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from robustgp import _kernels as kk
from robustgp._accel import USE_NUMBA


def inputs(seed, n=40, d=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    inv = 1.0 / rng.uniform(0.3, 3.0, size=d) ** 2
    G = rng.normal(size=(n, n))
    return rng, X, inv, G + G.T


def variants(name):
    fast = getattr(kk, f"_{name}_numba")
    return [fast, getattr(fast, "py_func", fast), getattr(kk, f"_{name}_numpy")]


@given(st.integers(0, 10_000), st.integers(1, 30), st.integers(1, 4))
def test_sqexp_cross_paths_agree(seed, n, d):
    rng, X, inv, _ = inputs(seed, n, d)
    Xs = rng.normal(size=(n + 3, d))
    outs = [f(X, Xs, inv, 1.7) for f in variants("sqexp_cross")]
    for out in outs[1:]:
        np.testing.assert_allclose(out, outs[0], rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_ard_traces_paths_agree(seed):
    _, X, inv, G = inputs(seed)
    K = kk._sqexp_cross_numpy(X, X, inv, 0.8)
    outs = [f(X, inv, G * K) for f in variants("ard_traces")]
    for out in outs[1:]:
        np.testing.assert_allclose(out, outs[0], rtol=1e-11, atol=1e-11)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("n,d", [(7, 2), (40, 3), (25, 1)])
def test_projection_scan_paths_agree(seed, n, d):
    _, X, _, _ = inputs(seed, n, d)
    results = [f(X, np.median(X, axis=0)) for f in variants("projection_scan")]
    for ps, used in results[1:]:
        np.testing.assert_allclose(ps, results[0][0], rtol=1e-12)
        assert used == results[0][1]


def test_projection_scan_degenerate():
    X = np.ones((5, 2))
    for f in variants("projection_scan"):
        ps, used = f(X, np.median(X, axis=0))
        assert used == 0 and np.all(ps == 0)


def test_switch_selects_path():
    assert (kk.sqexp_cross is kk._sqexp_cross_numba) == USE_NUMBA
    code = "from robustgp import _kernels as k; print(k.projection_scan is k._projection_scan_numpy)"
    out = subprocess.run([sys.executable, "-c", code], env={"ROBUSTGP_NUMBA": "0", "PATH": ""},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "True"
