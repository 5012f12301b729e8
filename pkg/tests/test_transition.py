import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffbackdoor import SchedulerSpec, build_schedule, compute_reparam, compute_transition, correction_coefficient


def test_vp_two_step_values(vp2):
    tc = compute_transition(vp2)
    assert tc.a[1] == pytest.approx(0.319438, abs=1e-6)
    assert tc.b[1] == pytest.approx(0.677631, abs=1e-6)
    # unrounded value is 0.4728708; 0.472877 follows from the rounded a, b above
    assert tc.s[1] == pytest.approx(0.4728708, abs=1e-6)
    assert tc.s[1] == pytest.approx(0.472877, abs=1e-5)
    assert tc.c[1] == pytest.approx(0.002931, abs=1e-6)
    assert tc.H[1] == pytest.approx(-0.118034, abs=1e-6)
    assert tc.G[1] ** 2 == pytest.approx(0.422577, abs=1e-6)


def test_correction_coefficient_examples(vp2):
    tc = compute_transition(vp2)
    # exact value from unrounded H / G^2; rounding H and G^2 first gives -0.279322
    assert correction_coefficient(tc, 2, 1.0) == pytest.approx(-0.2793194, abs=1e-6)
    assert correction_coefficient(tc, 2, 0.0) == pytest.approx(-0.5586388, abs=1e-6)
    assert correction_coefficient(tc, 2, 1.0) == pytest.approx(-0.279322, abs=5e-6)


def test_first_step(schedule_corpus):
    for s in schedule_corpus:
        tc = compute_transition(s)
        assert tc.a[0] == pytest.approx(0.0, abs=1e-15)
        assert tc.b[0] == pytest.approx(1.0, abs=1e-12)
        assert tc.c[0] == pytest.approx(0.0, abs=1e-12)


def test_posterior_consistency(schedule_corpus):
    for s in schedule_corpus:
        tc = compute_transition(s)
        np.testing.assert_allclose(tc.a * s.alpha_hat[1:] + tc.b, s.alpha_hat[:-1], atol=1e-9)
        np.testing.assert_allclose(tc.a * s.rho_hat[1:] + tc.c, s.rho_hat[:-1], atol=1e-9)
        np.testing.assert_allclose(tc.s, tc.G * np.sqrt(s.beta_hat[1:]), rtol=1e-12)


def test_posterior_mean_reconstruction(schedule_corpus):
    rng = np.random.default_rng(3)
    for s in schedule_corpus[:10]:
        tc = compute_transition(s)
        x0, r = rng.standard_normal(2)
        t = np.arange(1, s.T + 1)
        xt = s.alpha_hat[t] * x0 + s.rho_hat[t] * r
        mean = tc.a * xt + tc.b * x0 + tc.c * r
        np.testing.assert_allclose(mean, s.alpha_hat[t - 1] * x0 + s.rho_hat[t - 1] * r, atol=1e-9)


def test_vp_one_minus_alpha_drift_identity():
    s = build_schedule(SchedulerSpec(T=100))
    tc = compute_transition(s)
    np.testing.assert_allclose(tc.F + tc.H, 0.0, atol=1e-12)
    np.testing.assert_allclose(tc.F, 1 / compute_reparam(s).k - 1, atol=1e-12)


def test_zeta_ratio(schedule_corpus):
    for s in schedule_corpus:
        tc = compute_transition(s)
        t = np.arange(1, s.T + 1)
        c1 = correction_coefficient(tc, t, 1.0)
        c0 = correction_coefficient(tc, t, 0.0)
        nz = np.abs(c1) > 1e-300
        np.testing.assert_allclose(c0[nz] / c1[nz], 2.0, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(zeta=st.floats(0.0, 1.0), t=st.integers(1, 100))
def test_coefficient_formula(zeta, t):
    tc = compute_transition(build_schedule(SchedulerSpec(T=100)))
    expect = 2 * tc.H[t - 1] / ((1 + zeta) * tc.G[t - 1] ** 2)
    assert correction_coefficient(tc, t, zeta) == pytest.approx(expect, rel=1e-12)


def test_zero_numerator_gives_zero():
    # constant correction on VE: h_t = 0 for t >= 2, hence H = c - b rho/alpha = 0 there
    tc = compute_transition(build_schedule(SchedulerSpec(kind="VE", T=5)))
    for zeta in (0.0, 0.5, 1.0):
        assert correction_coefficient(tc, 3, zeta) == pytest.approx(0.0, abs=1e-12)


def test_coefficient_errors(vp2):
    tc = compute_transition(vp2)
    with pytest.raises(ValueError):
        correction_coefficient(tc, 3, 1.0)
    with pytest.raises(ValueError):
        correction_coefficient(tc, 0, 1.0)
    with pytest.raises(ValueError):
        correction_coefficient(tc, 1, 1.5)


def test_table_columns(vp2):
    tab = compute_transition(vp2).table()
    assert tab.shape == (2, 11)
    np.testing.assert_array_equal(tab[:, 0], [1, 2])


def test_mismatched_reparam_rejected(vp2):
    rc = compute_reparam(build_schedule(SchedulerSpec(T=3)))
    with pytest.raises(ValueError):
        compute_transition(vp2, rc)
