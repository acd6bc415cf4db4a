"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom dispatch on :data:`robustgp._accel.USE_NUMBA`.
Both implementations are importable directly so tests and the benchmark can
compare them.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

MAD_CONSTANT = 1.4826


# -- squared-exponential cross covariance ------------------------------------

@njit
def _sqexp_cross_numba(X1, X2, inv_ls2, tau2):
    n1, d = X1.shape
    n2 = X2.shape[0]
    out = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            acc = 0.0
            for k in range(d):
                diff = X1[i, k] - X2[j, k]
                acc += diff * diff * inv_ls2[k]
            out[i, j] = tau2 * np.exp(-acc)
    return out


def _sqexp_cross_numpy(X1, X2, inv_ls2, tau2):
    acc = np.zeros((X1.shape[0], X2.shape[0]))
    for k in range(X1.shape[1]):
        diff = X1[:, k, None] - X2[None, :, k]
        acc += diff * diff * inv_ls2[k]
    return tau2 * np.exp(-acc)


# -- length-scale gradient traces --------------------------------------------
# out[k] = sum_ij G_ij * 2 * (x_ik - x_jk)^2 * inv_ls2[k], i.e. <G, dK/dlog s_k>
# when G already contains the elementwise factor K.

@njit
def _ard_traces_numba(X, inv_ls2, G):
    n, d = X.shape
    out = np.zeros(d)
    for i in range(n):
        for j in range(n):
            g = G[i, j]
            if g == 0.0:
                continue
            for k in range(d):
                diff = X[i, k] - X[j, k]
                out[k] += g * diff * diff
    for k in range(d):
        out[k] *= 2.0 * inv_ls2[k]
    return out


def _ard_traces_numpy(X, inv_ls2, G):
    out = np.empty(X.shape[1])
    for k in range(X.shape[1]):
        diff = X[:, k, None] - X[None, :, k]
        out[k] = 2.0 * inv_ls2[k] * np.sum(G * diff * diff)
    return out


# -- projection statistics ---------------------------------------------------

@njit
def _projection_scan_numba(X, center):
    n, d = X.shape
    ps = np.zeros(n)
    used = 0
    z = np.empty(n)
    u = np.empty(d)
    for j in range(n):
        norm2 = 0.0
        for k in range(d):
            u[k] = X[j, k] - center[k]
            norm2 += u[k] * u[k]
        if norm2 == 0.0:
            continue
        norm = np.sqrt(norm2)
        for k in range(d):
            u[k] /= norm
        for i in range(n):
            acc = 0.0
            for k in range(d):
                acc += X[i, k] * u[k]
            z[i] = acc
        med = np.median(z)
        dev = np.abs(z - med)
        mad = np.median(dev)
        if mad == 0.0:
            continue
        used += 1
        scale = MAD_CONSTANT * mad
        for i in range(n):
            val = dev[i] / scale
            if val > ps[i]:
                ps[i] = val
    return ps, used


def _projection_scan_numpy(X, center):
    V = X - center
    norms = np.sqrt(np.sum(V * V, axis=1))
    keep = norms > 0.0
    if not np.any(keep):
        return np.zeros(X.shape[0]), 0
    U = V[keep] / norms[keep, None]
    Z = X @ U.T
    dev = np.abs(Z - np.median(Z, axis=0))
    mad = np.median(dev, axis=0)
    ok = mad > 0.0
    if not np.any(ok):
        return np.zeros(X.shape[0]), 0
    ps = np.max(dev[:, ok] / (MAD_CONSTANT * mad[ok]), axis=1)
    return ps, int(np.count_nonzero(ok))


if USE_NUMBA:
    sqexp_cross = _sqexp_cross_numba
    ard_traces = _ard_traces_numba
    projection_scan = _projection_scan_numba
else:
    sqexp_cross = _sqexp_cross_numpy
    ard_traces = _ard_traces_numpy
    projection_scan = _projection_scan_numpy
