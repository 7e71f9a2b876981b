"""Forward/backward kernels, discrete duality and coupled sweeps."""

import numpy as np
import pytest

from degcontrol.grids import TrajectoryField
from degcontrol.semilinear import SemilinearF
from degcontrol.solvers import (
    CylinderProblem,
    energy_diagnostics,
    solve_adjoint_coupled,
    solve_backward_linear,
    solve_forward_linear,
    solve_forward_semilinear,
    solve_linearized_coupled,
)

from conftest import sine_data


def _duality_mismatch(prob, ops, rng):
    """Relative gap in sum dt<f,p> + <y0,p^1> = sum dt<g,y>."""
    M, n = prob.mesh.M, prob.grid.N - 1
    dt = prob.mesh.dt
    wv = prob.grid.interior_volumes
    f = rng.standard_normal((M + 1, n))
    g = rng.standard_normal((M + 1, n))
    y0 = np.pad(rng.standard_normal(n), 1)
    y = solve_forward_linear(ops, y0, f)
    p = solve_backward_linear(ops, g)
    yi, pi = y.values[:, 1:-1], p.values[:, 1:-1]
    lhs = dt * np.einsum("j,nj->", wv, f[1:] * pi[1:]) \
        + float(np.sum(wv * y0[1:-1] * pi[1]))
    rhs = dt * np.einsum("j,nj->", wv, g[1:] * yi[1:])
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


class TestDuality:
    def test_five_random_pairs(self, prob, rng):
        ops = prob.linearized_ops()
        for _ in range(5):
            assert _duality_mismatch(prob, ops, rng) <= 1e-8

    def test_duality_at_nonzero_state(self, prob, rng):
        y = TrajectoryField.from_function(
            prob.grid, prob.mesh, lambda x, t: 0.2 * np.sin(np.pi * x) * (1 + t))
        ops = prob.ops_at_state(y)
        assert _duality_mismatch(prob, ops, rng) <= 1e-8


class TestForward:
    def test_zero_data_stays_zero(self, prob):
        y = solve_forward_semilinear(prob, np.zeros(prob.grid.N + 1))
        assert np.all(y.values == 0.0)

    def test_dirichlet_boundaries(self, prob):
        y = solve_forward_semilinear(prob, sine_data(prob, 0.1))
        assert np.all(y.values[:, 0] == 0.0)
        assert np.all(y.values[:, -1] == 0.0)

    def test_semilinear_reduces_to_linear(self, prob_linear):
        y0 = sine_data(prob_linear, 0.1)
        ys = solve_forward_semilinear(prob_linear, y0)
        ops = prob_linear.linearized_ops()
        shape = (prob_linear.mesh.M + 1, prob_linear.grid.N - 1)
        yl = solve_forward_linear(ops, y0, np.zeros(shape))
        assert np.max(np.abs(ys.values - yl.values)) <= 1e-12

    def test_dissipation_without_forcing(self, prob_linear):
        y = solve_forward_semilinear(prob_linear, sine_data(prob_linear, 0.1))
        norms = [prob_linear.grid.norm(row) for row in y.values]
        assert norms[-1] < norms[0]

    def test_bad_initial_shape(self, prob):
        with pytest.raises(ValueError):
            solve_forward_semilinear(prob, np.zeros(3))


class TestCoupledSweeps:
    def test_linearized_coupled_converges(self, prob, rng):
        y0 = sine_data(prob, 0.05)
        sol = solve_linearized_coupled(prob, y0)
        assert np.all(np.isfinite(sol.y.values))
        assert sol.history[-1] <= 1e-10

    def test_adjoint_reduction_identity(self, prob, rng):
        # the reduced variable is rho = alpha1 psi1 + alpha2 psi2
        phiT = sine_data(prob, 1.0)
        alphas = (1.3, 0.7)
        full = solve_adjoint_coupled(prob, phiT, alphas=alphas)
        red = solve_adjoint_coupled(prob, phiT, alphas=alphas, reduced=True)
        combo = alphas[0] * full.psi1.values + alphas[1] * full.psi2.values
        scale = np.max(np.abs(combo)) + 1e-30
        assert np.max(np.abs(red.rho.values - combo)) / scale <= 1e-8


class TestEnergy:
    def test_diagnostics_finite(self, prob):
        y = solve_forward_semilinear(prob, sine_data(prob, 0.1))
        rep = energy_diagnostics(prob, {"y": y})
        assert np.isfinite(rep.sup_l2["y"])
        assert np.isfinite(rep.grad_energy["y"])
        assert rep.total("y") > 0

    def test_sup_matches_norm(self, prob):
        y = solve_forward_semilinear(prob, sine_data(prob, 0.1))
        rep = energy_diagnostics(prob, {"y": y})
        sup = max(prob.grid.norm(row) for row in y.values)
        assert rep.sup_l2["y"] == pytest.approx(sup)
