import numpy as np
import pytest

from diffbackdoor import AnalyticModel, GaussianData, SchedulerSpec, analytic_eps, build_schedule


@pytest.fixture
def gd():
    return GaussianData(np.array([1.0, -1.0]), np.array([[0.05, 0.01], [0.01, 0.02]]))


def _log_q(gd, sched, x, t):
    mu, cov = gd.marginal(sched, t)
    d = x - mu
    return -0.5 * d @ np.linalg.solve(cov, d)


def test_eps_is_scaled_negative_score(gd):
    s = build_schedule(SchedulerSpec(T=30))
    x = np.array([0.3, 0.2])
    for t in (1, 10, 30):
        grad = np.zeros(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-6
            grad[i] = (_log_q(gd, s, x + e, t) - _log_q(gd, s, x - e, t)) / 2e-6
        np.testing.assert_allclose(analytic_eps(gd, s, x, t), -s.beta_hat[t] * grad, rtol=1e-6)


def test_eps_is_posterior_mean_of_noise(gd):
    # E[eps | x_t] by Monte Carlo regression on a thin slab around a point
    s = build_schedule(SchedulerSpec(T=20))
    rng = np.random.default_rng(0)
    t = 12
    n = 400_000
    x0 = gd.sample(n, rng)
    eps = rng.standard_normal((n, 2))
    xt = s.alpha_hat[t] * x0 + s.beta_hat[t] * eps
    # linear-Gaussian: E[eps | x] is affine in x, so least squares recovers it exactly
    A = np.column_stack([xt, np.ones(n)])
    coef, *_ = np.linalg.lstsq(A, eps, rcond=None)
    probe = np.array([[0.5, -0.2], [1.0, 0.0]])
    fit = np.column_stack([probe, np.ones(2)]) @ coef
    np.testing.assert_allclose(fit, analytic_eps(gd, s, probe, t), atol=0.01)


def test_model_handles_step_arrays(gd):
    s = build_schedule(SchedulerSpec(T=10))
    m = AnalyticModel(gd, s)
    x = np.array([[0.1, 0.2], [0.3, -0.4], [1.0, 1.0]])
    t = np.array([3, 7, 3])
    out = m(x, t)
    for i in range(3):
        np.testing.assert_allclose(out[i], analytic_eps(gd, s, x[i], int(t[i])))


def test_scalar_and_diagonal_covariance():
    a = GaussianData(np.zeros(3), 0.5)
    b = GaussianData(np.zeros(3), np.full(3, 0.5))
    np.testing.assert_array_equal(a.cov, b.cov)
    with pytest.raises(ValueError):
        GaussianData(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        GaussianData(np.zeros(2), np.eye(3))


def test_step_range(gd):
    s = build_schedule(SchedulerSpec(T=5))
    with pytest.raises(ValueError):
        analytic_eps(gd, s, np.zeros(2), 0)
