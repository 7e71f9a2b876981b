"""Degeneracy, gradient weight, moving domain and control windows."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degcontrol.geometry import (
    ControlGeometry,
    DegeneracySpec,
    GradientWeightSpec,
    MovingDomainSpec,
    beta_condition_report,
)


class TestDegeneracy:
    def test_alpha_range(self):
        with pytest.raises(ValueError):
            DegeneracySpec(alpha=0.0)
        with pytest.raises(ValueError):
            DegeneracySpec(alpha=1.0)

    def test_a_values(self):
        deg = DegeneracySpec(alpha=0.5)
        assert deg.a(0.0) == 0.0
        assert deg.a(0.25) == pytest.approx(0.5)
        assert deg.a(1.0) == 1.0

    def test_a_prime_fd(self):
        deg = DegeneracySpec(alpha=0.5)
        x = np.linspace(0.1, 1.0, 7)
        eps = 1e-6
        fd = (deg.a(x + eps) - deg.a(x - eps)) / (2 * eps)
        assert np.allclose(deg.a_prime(x), fd, rtol=1e-8)

    def test_weak_degeneracy_constant(self):
        # x a'(x) = alpha a(x), so K = alpha < 1
        deg = DegeneracySpec(alpha=0.7)
        x = np.linspace(0.05, 1.0, 11)
        assert np.allclose(x * deg.a_prime(x), deg.K * deg.a(x))
        assert deg.K < 1.0

    def test_negative_x_rejected(self):
        with pytest.raises(ValueError):
            DegeneracySpec(alpha=0.5).a(-0.1)

    @given(st.floats(0.05, 0.95), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_a_multiplicative(self, alpha, x1, x2):
        deg = DegeneracySpec(alpha=alpha)
        assert deg.a(x1 * x2) == pytest.approx(deg.a(x1) * deg.a(x2),
                                               rel=1e-12)


class TestGradientWeight:
    def test_b_exp_validated(self):
        with pytest.raises(ValueError):
            GradientWeightSpec(b_exp=1.0)

    def test_clip_factor_default(self):
        deg = DegeneracySpec(alpha=0.5)
        gw = GradientWeightSpec(b_exp=2.0).attach(deg)
        assert gw.clip_factor == pytest.approx(0.5)

    def test_beta_conditions_hold(self):
        deg = DegeneracySpec(alpha=0.5)
        gw = GradientWeightSpec(b_exp=2.0).attach(deg)
        rep = beta_condition_report(gw, deg)
        assert rep["all_ok"]
        assert rep["beta_sq_le_a"]
        assert rep["beta_sq_prime_le_2a_prime"]
        assert rep["beta_prime_bounded"]
        assert np.isfinite(rep["M"])

    def test_unclipped_weight_violates(self):
        # without the clip the raw x^{b/2} weight fails beta^2 <= a
        deg = DegeneracySpec(alpha=0.5)
        gw = GradientWeightSpec(b_exp=2.0, clip_enabled=False).attach(deg)
        rep = beta_condition_report(gw, deg)
        assert rep["raw_violation_margin"] > 0


class TestMovingDomain:
    def test_affine_values(self):
        dom = MovingDomainSpec(T=1.0, family="affine", k=0.25)
        assert dom.ell(0.0) == 1.0
        assert dom.ell(1.0) == 1.25
        assert dom.ell_prime(0.5) == pytest.approx(0.25)

    @pytest.mark.parametrize("family,k",
                             [("constant", 0.0), ("affine", 0.25),
                              ("exponential", 0.2), ("sinusoidal", 0.3)])
    def test_ell_prime_consistent(self, family, k):
        dom = MovingDomainSpec(T=1.0, family=family, k=k)
        dom.validate()
        t = np.linspace(0.05, 0.95, 9)
        eps = 1e-6
        fd = (dom.ell(t + eps) - dom.ell(t - eps)) / (2 * eps)
        assert np.allclose(dom.ell_prime(t), fd, rtol=1e-7, atol=1e-9)

    def test_sinusoidal_amplitude_limit(self):
        with pytest.raises(ValueError):
            MovingDomainSpec(T=1.0, family="sinusoidal", k=1.0).validate()

    def test_coefficients_formulas(self):
        deg = DegeneracySpec(alpha=0.5)
        gw = GradientWeightSpec(b_exp=2.0).attach(deg)
        dom = MovingDomainSpec(T=1.0, family="affine", k=0.25)
        t = 0.5
        b, B, C = dom.coefficients(deg, gw, t)
        ell = dom.ell(t)
        assert b == pytest.approx(deg.a(ell) / ell**2)
        assert B == pytest.approx(dom.ell_prime(t) / ell)
        assert C == pytest.approx(gw.beta(ell) / ell)

    def test_time_outside_horizon_rejected(self):
        deg = DegeneracySpec(alpha=0.5)
        gw = GradientWeightSpec(b_exp=2.0).attach(deg)
        dom = MovingDomainSpec(T=1.0, family="affine", k=0.25)
        with pytest.raises(ValueError):
            dom.coefficients(deg, gw, 1.5)

    def test_pullback_pushforward_roundtrip(self):
        dom = MovingDomainSpec(T=1.0, family="affine", k=0.25)
        x = np.linspace(0.0, 1.0, 11)
        xp = dom.pushforward(x, 0.7)
        assert np.allclose(dom.pullback(xp, 0.7), x)

    def test_jacobian_is_ell(self):
        dom = MovingDomainSpec(T=1.0, family="affine", k=0.25)
        assert dom.jacobian(0.8) == pytest.approx(dom.ell(0.8))


class TestControlGeometry:
    def test_defaults_valid(self):
        ControlGeometry()

    def test_follower_window_must_avoid_o(self):
        with pytest.raises(ValueError, match="disjoint"):
            ControlGeometry(O=(0.3, 0.5), O1=(0.4, 0.6))

    def test_od_must_meet_o(self):
        with pytest.raises(ValueError, match="intersect"):
            ControlGeometry(Od=(0.05, 0.1))

    def test_indicator_open_interval(self):
        geo = ControlGeometry()
        x = np.array([0.3, 0.4, 0.5])
        ind = geo.indicator("O", x)
        assert list(ind) == [0.0, 1.0, 0.0]
