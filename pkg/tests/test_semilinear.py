"""Nonlinearity catalogue and derivative consistency."""

import numpy as np
import pytest

from degcontrol.semilinear import SemilinearF, fd_consistency_report


class TestCatalogue:
    def test_zero_is_zero(self):
        f = SemilinearF.zero()
        assert f.is_zero
        u = np.linspace(-1, 1, 5)
        assert np.all(f.F(u, u) == 0.0)
        assert np.all(f.D1(u, u) == 0.0)

    def test_sinusoidal_values(self):
        f = SemilinearF.sinusoidal(kappa1=2.0, kappa2=0.5)
        u, w = np.array([0.3]), np.array([-0.2])
        assert f.F(u, w)[0] == pytest.approx(2.0 * np.sin(0.3)
                                             + 0.5 * np.sin(-0.2))
        assert f.D1(u, w)[0] == pytest.approx(2.0 * np.cos(0.3))
        assert f.D2(u, w)[0] == pytest.approx(0.5 * np.cos(-0.2))

    def test_sinusoidal_not_zero(self):
        assert not SemilinearF.sinusoidal().is_zero

    def test_globally_lipschitz_bound(self):
        rep = SemilinearF.sinusoidal().derivative_bound_report(box=4.0)
        assert all(np.isfinite(v) for v in rep.values())


class TestDerivativeConsistency:
    @pytest.mark.parametrize("maker", [SemilinearF.sinusoidal,
                                       SemilinearF.zero])
    def test_fd_consistency(self, maker, rng):
        rep = fd_consistency_report(maker(), rng)
        assert rep["max"] <= 1e-6

    def test_second_derivatives(self, rng):
        f = SemilinearF.sinusoidal()
        u = rng.standard_normal(16)
        w = rng.standard_normal(16)
        eps = 1e-6
        fd = (f.D1(u + eps, w) - f.D1(u - eps, w)) / (2 * eps)
        assert np.max(np.abs(fd - f.D11(u, w))) <= 1e-6
        fd = (f.D2(u, w + eps) - f.D2(u, w - eps)) / (2 * eps)
        assert np.max(np.abs(fd - f.D22(u, w))) <= 1e-6
