import math

import numpy as np
import pytest
from scipy import integrate

from robustgp.conjugate import conjugate_model, fit_ml2, gaussian_log_evidence, predict
from robustgp.kernel import KernelParams, build_gram
from robustgp.laplace import (_newton, _psi, _pseudo_terms, approx_log_evidence, evidence_and_fd_grad, find_mode, huber_model,
                              optimize_hyperparams, predict_laplace)
from robustgp.likelihoods import HuberConfig, huber_log_likelihood

GAUSS = HuberConfig(b=1e6)


def smooth_data(rng, n=30, noise=0.1):
    X = rng.uniform(-3, 3, size=(n, 1))
    return X, np.sin(X[:, 0]) + noise * rng.normal(size=n)


def test_zero_targets_give_zero_mode():
    post = find_mode(np.linspace(0, 1, 6)[:, None], np.zeros(6), HuberConfig(), KernelParams(1.0, [0.5]))
    np.testing.assert_array_equal(post.mode, 0.0)
    assert post.converged


def test_quadratic_regime_mode_is_conjugate_mean(rng):
    X, y = smooth_data(rng)
    p = KernelParams(1.1, [0.9])
    w = rng.uniform(0.5, 1.0, size=y.size)
    post = find_mode(X, y, GAUSS.with_sigma(0.7), p, w)
    sig = w * 0.7 * post.scale
    K = build_gram(X, p).K
    want = K @ np.linalg.solve(K + np.diag(sig ** 2), y)
    assert np.max(np.abs(post.mode - want)) < 1e-6
    assert np.all(post.W > 0)


def test_vertical_outlier_has_bounded_pull(rng):
    X, y = smooth_data(rng, n=40)
    p, cfg = KernelParams(1.0, [1.0]), HuberConfig(sigma=1.0)
    base = find_mode(X, y, cfg, p)
    y2 = y.copy()
    y2[5] = 1e6
    post = find_mode(X, y2, cfg, p)
    eff = cfg.sigma * post.scale
    assert abs(post.mode[5]) < np.max(np.abs(np.delete(y, 5))) + 3 * eff
    # a residual clipped at b noise scales cannot move the fit by more than that
    shift = np.max(np.abs(np.delete(post.mode - base.mode, 5)))
    assert shift < cfg.b * eff
    gp_base = conjugate_model(X, y, eff ** 2, p)
    gp_out = conjugate_model(X, y2, eff ** 2, p)
    gp_shift = np.max(np.abs(np.delete(predict(gp_out, X).mean - predict(gp_base, X).mean, 5)))
    assert shift < 1e-5 * gp_shift


def test_quadratic_regime_evidence_matches_gaussian(rng):
    X, y = smooth_data(rng)
    p = KernelParams(0.8, [1.2])
    cfg = GAUSS.with_sigma(0.9)
    post = find_mode(X, y, cfg, p, s=0.35)
    gauss, _ = gaussian_log_evidence(X, y, (0.9 * 0.35) ** 2, p, grad=False)
    assert approx_log_evidence(post) - gauss == pytest.approx(y.size * math.log(0.55), abs=1e-6)


def test_single_point_gaussian_case_matches_quadrature():
    # exact integral of N(0.7 | f, 0.5^2) (1 - eps) N(f | 0, 1) over f
    exact = integrate.quad(lambda f: 0.55 * math.exp(-0.5 * ((0.7 - f) / 0.5) ** 2) / (math.sqrt(2 * math.pi) * 0.5)
                           * math.exp(-0.5 * f * f) / math.sqrt(2 * math.pi), -40, 40, epsabs=0, epsrel=1e-13)[0]
    post = find_mode(np.zeros((1, 1)), np.array([0.7]), GAUSS, KernelParams(1.0, [1.0]), s=0.5)
    assert post.log_evidence == pytest.approx(math.log(exact), abs=1e-4)
    assert post.log_evidence == pytest.approx(-1.82434730961711, abs=1e-8)


def test_single_point_huber_case_matches_scalar_laplace():
    # scalar mode by root bracketing and the closed-form Laplace evidence, frozen
    post = find_mode(np.zeros((1, 1)), np.array([2.5]), HuberConfig(b=1.5), KernelParams(1.3, [1.0]),
                     w=np.array([0.8]), s=0.4)
    assert post.mode[0] == pytest.approx(2.3508395596918783, abs=1e-8)
    assert post.log_evidence == pytest.approx(-3.4848107955942433, abs=1e-8)
    # the Laplace value sits close to, not on, the exact integral (-3.366560513672985)
    assert abs(post.log_evidence - -3.366560513672985) < 0.15


def test_evidence_drops_as_outlier_grows(rng):
    X, y = smooth_data(rng)
    p, cfg = KernelParams(1.0, [1.0]), HuberConfig()
    vals = []
    for m in (1e3, 1e6):
        y2 = y.copy()
        y2[3] = m
        vals.append(find_mode(X, y2, cfg, p, s=0.2).log_evidence)
    assert vals[1] < vals[0]


def test_bounded_influence_saturates(rng):
    X, y = smooth_data(rng, n=40)
    p, cfg = KernelParams(1.0, [1.0]), HuberConfig()
    base = find_mode(X, y, cfg, p, s=0.15).mode
    shifts = []
    for m in (1e2, 1e4, 1e6):
        y2 = y.copy()
        y2[7] = m
        shifts.append(np.delete(find_mode(X, y2, cfg, p, s=0.15).mode - base, 7))
    assert np.max(np.abs(shifts[2] - shifts[1])) < 1e-6
    assert np.max(np.abs(shifts[2])) < 1.0


def test_newton_objective_never_decreases(rng):
    X, y = smooth_data(rng, n=25, noise=0.3)
    y[[2, 9]] += 8.0
    K = build_gram(X, KernelParams(2.0, [0.7])).K
    scale = np.full(y.size, 0.2)
    prev = -np.inf
    for k in range(1, 12):
        a, f, *_ = _newton(K, y, scale, 1.5, np.zeros(y.size), max_iter=k)
        val = _psi(a, f, y, scale, 1.5)
        assert val >= prev - 1e-10 * abs(val)
        prev = val


def test_log_det_two_ways(rng):
    X, y = smooth_data(rng, n=15)
    p = KernelParams(1.2, [0.8])
    post = find_mode(X, y, HuberConfig(), p, s=0.3)
    K = build_gram(X, p).K
    A = np.linalg.inv(np.linalg.inv(K) + np.diag(post.W))
    assert post.log_det_A() == pytest.approx(np.linalg.slogdet(A)[1], rel=1e-8)


def test_mode_gradient_matches_differences(rng):
    X, y = smooth_data(rng, n=12, noise=0.4)
    p, cfg = KernelParams(1.0, [1.1]), HuberConfig()
    w = np.linspace(0.6, 1.0, 12)
    post = find_mode(X, y, cfg, p, w, s=0.5)
    Kinv = np.linalg.inv(post.K)

    def objective(f):
        return huber_log_likelihood(y, f, cfg, w, 0.5, pseudo=True) - 0.5 * f @ Kinv @ f

    h = 1e-6
    fd = np.array([(objective(post.mode + h * e) - objective(post.mode - h * e)) / (2 * h) for e in np.eye(12)])
    _, lik_grad, _ = _pseudo_terms(y, post.mode, w * cfg.sigma * 0.5, cfg.b)
    analytic = lik_grad - Kinv @ post.mode
    assert np.max(np.abs(fd - analytic)) < 1e-5
    assert post.grad_norm < 1e-8


def test_training_inputs_reproduce_mode(rng):
    X, y = smooth_data(rng)
    m = huber_model(X, y, GAUSS, KernelParams(1.0, [1.0]))
    pred = predict_laplace(m, X, include_noise=False)
    assert np.max(np.abs(pred.mean - m.posterior.mode)) < 1e-8


def test_far_point_reverts_to_prior(rng):
    X, y = smooth_data(rng)
    m = huber_model(X, y, HuberConfig(), KernelParams(1.5, [0.5]))
    pred = predict_laplace(m, np.array([[100.0]]), include_noise=False)
    assert abs(pred.mean[0]) < 1e-12
    assert pred.var[0] == pytest.approx(2.25, rel=1e-12)
    with pytest.raises(ValueError):
        predict_laplace(m, np.zeros((2, 2)))


def test_quadratic_regime_prediction_matches_conjugate(rng):
    X, y = smooth_data(rng)
    p = KernelParams(0.9, [1.1])
    m = huber_model(X, y, GAUSS.with_sigma(0.8), p, s=0.4)
    ref = conjugate_model(X, y, (0.8 * 0.4) ** 2, p)
    Xs = np.linspace(-4, 4, 50)[:, None]
    a, b = predict_laplace(m, Xs), predict(ref, Xs)
    assert np.max(np.abs(a.mean - b.mean)) < 1e-6
    assert np.max(np.abs(a.var - b.var)) < 1e-6


def test_fd_gradient_of_evidence(rng):
    X, y = smooth_data(rng, n=20)
    x = np.array([0.1, -0.2, 0.05])
    v, g = evidence_and_fd_grad(X, y, HuberConfig(), np.ones(20), x, 0.3, fit_sigma=True)
    h = 1e-3
    e0 = np.array([h, 0, 0])
    vp, _ = evidence_and_fd_grad(X, y, HuberConfig(), np.ones(20), x + e0, 0.3, fit_sigma=True)
    vm, _ = evidence_and_fd_grad(X, y, HuberConfig(), np.ones(20), x - e0, 0.3, fit_sigma=True)
    assert g[0] == pytest.approx((vp - vm) / (2 * h), rel=1e-4, abs=1e-6)
    assert np.isfinite(v)


def test_clean_data_close_to_conjugate():
    rng = np.random.default_rng(12)
    X = rng.uniform(-3, 3, size=(60, 1))
    y = np.sin(1.5 * X[:, 0]) + 0.2 * rng.normal(size=60)
    Xs = np.linspace(-3, 3, 200)[:, None]
    truth = np.sin(1.5 * Xs[:, 0])
    la = optimize_hyperparams(X, y, seed=0, restarts=3)
    gp = fit_ml2(X, y, seed=0)
    r_la = np.sqrt(np.mean((predict_laplace(la, Xs).mean - truth) ** 2))
    r_gp = np.sqrt(np.mean((predict(gp, Xs).mean - truth) ** 2))
    assert r_la <= 1.2 * r_gp
    assert la.optim.rounds and len(la.optim.rounds) >= 2


def test_doubling_targets_doubles_predictions(rng):
    X = rng.uniform(-3, 3, size=(30, 1))
    y = np.cos(X[:, 0]) + 0.1 * rng.normal(size=30)
    y[4] += 5
    Xs = np.linspace(-3, 3, 25)[:, None]
    a = optimize_hyperparams(X, y, seed=2, restarts=2)
    b = optimize_hyperparams(X, 2 * y, seed=2, restarts=2)
    np.testing.assert_allclose(predict_laplace(b, Xs).mean, 2 * predict_laplace(a, Xs).mean, rtol=1e-6, atol=1e-9)


def test_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        optimize_hyperparams(np.zeros((5, 1)), np.zeros(4))
