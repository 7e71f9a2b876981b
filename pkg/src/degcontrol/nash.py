"""Follower Nash quasi-equilibria, functionals and the convexity certificate.

For a fixed leader control h the followers minimize

    J_i = (alpha_i/2) int_{Od} wt(t) |y - y_id|^2 + (mu_i/2) int_{Oi} wt(t) |v^i|^2,

where wt is 1 for the Jacobian-weighted physical functionals (the factor
|Jac|^{-1} cancels under the pullback to the cylinder) and wt = l(t)
for the variant without the Jacobian factor.  The discrete gradient of
J_i with respect to v^i is exactly mu_i wt v^i + p^i on O_i, because the
adjoint p^i is built from the exact weighted transpose of the linearized
forward step; the quasi-equilibrium is the Picard fixed point of

    v^i = -(1/(mu_i wt)) p^i 1_{Oi}.

The second-derivative quadratic form follows the tangent/second-adjoint
(theta, eta) system; with the exact-transpose construction it is the
exact Hessian of the discrete J_1, so finite-difference cross-checks
hold to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .grids import TrajectoryField
from .solvers import (
    CylinderProblem,
    LevelOps,
    SweepFailureError,
    _interior,
    solve_backward_linear,
    solve_forward_linear,
    solve_forward_semilinear,
)

__all__ = [
    "GameSpec",
    "NashSolution",
    "make_default_targets",
    "evaluate_functional",
    "nash_fixed_point",
    "functional_gradient",
    "second_derivative_form",
    "convexity_margin",
    "fit_mu_star",
]


@dataclass
class GameSpec:
    """Weights, penalties and targets of the two-follower game.

    jacobian_weighting=True is the paper's functional (with the inverse
    Jacobian factor), whose cylinder form carries no time weight; False
    drops the Jacobian factor, which puts wt(t)=l(t) into the cylinder
    integrals.
    """

    alpha1: float = 1.0
    alpha2: float = 1.0
    mu1: float = 1.0
    mu2: float = 1.0
    target1: TrajectoryField | None = None
    target2: TrajectoryField | None = None
    jacobian_weighting: bool = True

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "mu1", "mu2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def alphas(self) -> tuple:
        return (self.alpha1, self.alpha2)

    @property
    def mus(self) -> tuple:
        return (self.mu1, self.mu2)

    def targets(self, prob: CylinderProblem) -> tuple:
        t1 = self.target1 if self.target1 is not None else prob.new_field()
        t2 = self.target2 if self.target2 is not None else prob.new_field()
        return (t1, t2)

    def time_weight(self, prob: CylinderProblem) -> np.ndarray:
        if self.jacobian_weighting:
            return np.ones(prob.mesh.M + 1)
        return np.atleast_1d(prob.dom.ell(prob.mesh.times))


def make_default_targets(prob: CylinderProblem, weights=None,
                         amplitude: float = 1.0) -> tuple:
    """Smooth bumps in Od with a time profile decaying like 1/rho0.

    The profile keeps rho0 * y_id bounded on the mesh, the discrete
    stand-in for the square-summability hypothesis on rho y_id.
    """
    lo, hi = prob.windows.Od
    c, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    x = prob.grid.nodes
    r = np.clip((x - c) / half, -1.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        bump = np.where(np.abs(r) < 1.0,
                        np.exp(-1.0 / np.maximum(1.0 - r**2, 1e-300)), 0.0)
    bump *= amplitude * np.e  # peak value = amplitude
    if weights is not None:
        profile = np.exp(-(np.minimum(weights.log_rho0, 1e6)
                           - weights.norm_shifts["rho0"]))
    else:
        profile = (1.0 - prob.mesh.times / prob.mesh.T) ** 4
    vals = profile[:, None] * bump[None, :]
    t1 = TrajectoryField(prob.grid, prob.mesh, vals)
    t2 = TrajectoryField(prob.grid, prob.mesh, 0.5 * vals)
    return t1, t2


def evaluate_functional(prob: CylinderProblem, game: GameSpec, i: int,
                        y: TrajectoryField, v_i: TrajectoryField) -> float:
    """J_i for a state y and follower control v_i (i in {1, 2})."""
    if i not in (1, 2):
        raise ValueError("follower index must be 1 or 2")
    alpha = game.alphas[i - 1]
    mu = game.mus[i - 1]
    target = game.targets(prob)[i - 1]
    wt = game.time_weight(prob)
    w = prob.grid.cell_volumes
    dt = prob.mesh.dt
    ind_d = prob.indicator("Od")
    ind_i = prob.indicator("O1" if i == 1 else "O2")
    mis = (y.values - target.values) ** 2 * ind_d[None, :]
    track = dt * np.einsum("n,j,nj->", wt[1:], w, mis[1:])
    pen = dt * np.einsum("n,j,nj->", wt[1:], w,
                         (v_i.values[1:] ** 2) * ind_i[None, :])
    return float(0.5 * alpha * track + 0.5 * mu * pen)


@dataclass
class NashSolution:
    """Quasi-equilibrium state: v^i = -(1/(mu_i wt)) p^i on O_i by construction."""

    y: TrajectoryField
    p1: TrajectoryField
    p2: TrajectoryField
    v1: TrajectoryField
    v2: TrajectoryField
    history: list = dc_field(default_factory=list)
    residuals: dict = dc_field(default_factory=dict)


def _follower_sources(prob, game, y_vals_int, targets, wt):
    ind_d = prob.indicator_interior("Od")
    out = []
    for i in (0, 1):
        mis = y_vals_int - _interior(targets[i].values)
        out.append(game.alphas[i] * wt[:, None] * mis * ind_d[None, :])
    return out


def nash_fixed_point(prob: CylinderProblem, game: GameSpec,
                     h: TrajectoryField | None, y0: np.ndarray,
                     tol: float = 1e-10, max_sweeps: int = 300,
                     compute_residuals: bool = True) -> NashSolution:
    """Picard iteration on the followers' optimality system.

    Alternates the semilinear forward solve (with the current follower
    controls) and the two adjoint solves with coefficients frozen at the
    new state, until the trajectory update stalls below tol.
    """
    targets = game.targets(prob)
    wt = game.time_weight(prob)
    ind = [prob.indicator("O1"), prob.indicator("O2")]
    shape = (prob.mesh.M + 1, prob.grid.N + 1)
    p_vals = [np.zeros(shape), np.zeros(shape)]
    history = []
    sol = None
    for _ in range(max_sweeps):
        v = [TrajectoryField(prob.grid, prob.mesh,
                             -p_vals[i] * ind[i][None, :]
                             / (game.mus[i] * wt[:, None]))
             for i in (0, 1)]
        y = solve_forward_semilinear(prob, y0, h=h, v1=v[0], v2=v[1])
        ops = prob.ops_at_state(y)
        srcs = _follower_sources(prob, game, _interior(y.values), targets, wt)
        delta = 0.0
        p_fields = []
        for i in (0, 1):
            pf = solve_backward_linear(ops, srcs[i])
            delta = max(delta, float(np.max(np.abs(pf.values - p_vals[i]))))
            p_vals[i] = pf.values.copy()
            p_fields.append(pf)
        history.append(delta)
        if delta <= tol:
            sol = NashSolution(y=y, p1=p_fields[0], p2=p_fields[1],
                               v1=v[0], v2=v[1], history=history)
            break
    if sol is None:
        raise SweepFailureError(history, "nash optimality system")
    # one more control update so v matches the final adjoints exactly
    sol.v1 = TrajectoryField(prob.grid, prob.mesh,
                             -sol.p1.values * ind[0][None, :]
                             / (game.mu1 * wt[:, None]))
    sol.v2 = TrajectoryField(prob.grid, prob.mesh,
                             -sol.p2.values * ind[1][None, :]
                             / (game.mu2 * wt[:, None]))
    if compute_residuals:
        for i, v_i in ((1, sol.v1), (2, sol.v2)):
            g = functional_gradient(prob, game, i, h, sol.v1, sol.v2, y0)
            scale = 1.0 + v_i.l2q_norm()
            sol.residuals[f"grad_J{i}"] = g.l2q_norm() / scale
    return sol


def functional_gradient(prob: CylinderProblem, game: GameSpec, i: int,
                        h: TrajectoryField | None, v1: TrajectoryField | None,
                        v2: TrajectoryField | None, y0: np.ndarray,
                        y: TrajectoryField | None = None) -> TrajectoryField:
    """Riesz representative mu_i wt v^i + p^i of D_{v^i} J_i, on O_i.

    Recomputes the forward state and follower adjoint from scratch, so
    the result is independent of any fixed-point construction.
    """
    if i not in (1, 2):
        raise ValueError("follower index must be 1 or 2")
    if y is None:
        y = solve_forward_semilinear(prob, y0, h=h, v1=v1, v2=v2)
    targets = game.targets(prob)
    wt = game.time_weight(prob)
    ops = prob.ops_at_state(y)
    srcs = _follower_sources(prob, game, _interior(y.values), targets, wt)
    p = solve_backward_linear(ops, srcs[i - 1])
    v_i = (v1 if i == 1 else v2)
    ind = prob.indicator("O1" if i == 1 else "O2")
    v_vals = v_i.values if v_i is not None else 0.0
    grad = (game.mus[i - 1] * wt[:, None] * v_vals + p.values) * ind[None, :]
    # the quadrature puts no weight on t=0, so that slice of the control
    # does not enter J_i and its exact discrete gradient vanishes there
    grad[0] = 0.0
    return TrajectoryField(prob.grid, prob.mesh, grad)


def _dL_transpose_apply(prob: CylinderProblem, n: int, y_row: np.ndarray,
                        theta_row: np.ndarray, p_row: np.ndarray) -> np.ndarray:
    """(dL_n[theta])^T p with respect to the volume inner product.

    dL_n[theta] = diag(r) + diag(q g) Dc with
    r = D11 theta + D12 (g Dc theta), q = D21 theta + D22 (g Dc theta),
    all derivative coefficients evaluated at (y, g Dc y).
    """
    g = prob.grad_weight(n)
    w_arg = g * (prob.Dc @ y_row)
    dth = g * (prob.Dc @ theta_row)
    F = prob.F
    r = F.D11(y_row, w_arg) * theta_row + F.D12(y_row, w_arg) * dth
    q = F.D21(y_row, w_arg) * theta_row + F.D22(y_row, w_arg) * dth
    wv = prob.grid.interior_volumes
    return r * p_row + (prob.Dc.T @ (q * g * wv * p_row)) / wv


def second_derivative_form(prob: CylinderProblem, game: GameSpec,
                           state: NashSolution, vbar: TrajectoryField,
                           vtilde: TrajectoryField | None = None,
                           symmetrize: bool = True) -> float:
    """<D_1^2 J_1 (vbar, vtilde)> at the given state.

    Solves the tangent system for theta (direction vbar in O_1) and the
    second adjoint eta backward, whose source combines the tracking term
    and the derivative of the adjoint operator along theta; then returns
    int_{O1} eta vtilde + mu_1 int wt vbar vtilde.  For vtilde=None the
    quadratic form at vbar is returned; otherwise the bilinear form,
    averaged over both orderings when symmetrize is set.
    """
    if vtilde is not None and symmetrize:
        ab = second_derivative_form(prob, game, state, vbar, vtilde,
                                    symmetrize=False)
        ba = second_derivative_form(prob, game, state, vtilde, vbar,
                                    symmetrize=False)
        return 0.5 * (ab + ba)
    other = vbar if vtilde is None else vtilde
    wt = game.time_weight(prob)
    ind1 = prob.indicator_interior("O1")
    ind_d = prob.indicator_interior("Od")
    ops = prob.ops_at_state(state.y)
    src_theta = _interior(vbar.values) * ind1[None, :]
    theta = solve_forward_linear(ops, np.zeros(prob.grid.N + 1), src_theta)
    yi = _interior(state.y.values)
    ti = _interior(theta.values)
    pi = _interior(state.p1.values)
    g_eta = np.empty_like(ti)
    for n in range(prob.mesh.M + 1):
        g_eta[n] = (game.alpha1 * wt[n] * ti[n] * ind_d
                    - _dL_transpose_apply(prob, n, yi[n], ti[n], pi[n]))
    eta = solve_backward_linear(ops, g_eta)
    w = prob.grid.cell_volumes
    dt = prob.mesh.dt
    ind1_full = prob.indicator("O1")
    cross = dt * np.einsum("j,nj->", w, (eta.values * other.values
                                         * ind1_full[None, :])[1:])
    quad = dt * np.einsum("n,j,nj->", wt[1:], w,
                          (vbar.values * other.values * ind1_full[None, :])[1:])
    return float(cross + game.mu1 * quad)


def _random_probe(prob: CylinderProblem, rng: np.random.Generator) -> TrajectoryField:
    """Random smooth direction supported in O_1."""
    x = prob.grid.nodes
    t = prob.mesh.times
    ind = prob.indicator("O1")
    c = rng.standard_normal(4)
    vals = (c[0] * np.sin(np.pi * np.outer(t, x))
            + c[1] * np.outer(np.cos(t), x)
            + c[2] * np.outer(t, 1 - x) + c[3])
    return TrajectoryField(prob.grid, prob.mesh, vals * ind[None, :])


def convexity_margin(prob: CylinderProblem, game: GameSpec,
                     state: NashSolution, probes: int = 8,
                     rng: np.random.Generator | None = None) -> dict:
    """Min of the normalized quadratic form over random probe directions.

    certified=True iff the minimum is positive, which upgrades the
    quasi-equilibrium to a genuine local Nash equilibrium in v^1.
    """
    rng = rng or np.random.default_rng(0)
    margins = []
    for _ in range(probes):
        vbar = _random_probe(prob, rng)
        nrm2 = vbar.l2q_inner(vbar)
        if nrm2 <= 1e-300:
            continue
        margins.append(second_derivative_form(prob, game, state, vbar) / nrm2)
    m = float(np.min(margins))
    return {"margin": m, "certified": bool(m > 0.0),
            "margins": [float(v) for v in margins], "probes": probes}


def fit_mu_star(prob: CylinderProblem, game: GameSpec,
                h: TrajectoryField | None, y0: np.ndarray,
                bracket: tuple = (1e-2, 1e6), iters: int = 14,
                probes: int = 4,
                rng: np.random.Generator | None = None) -> dict:
    """Bisection for the smallest mu (mu1=mu2) with a certified margin.

    Each trial re-solves the Nash fixed point; Picard divergence counts
    as not certified.  Bisection runs on log(mu).
    """
    rng = rng or np.random.default_rng(1)
    lo, hi = np.log(bracket[0]), np.log(bracket[1])

    def certified(mu: float) -> bool:
        g = GameSpec(alpha1=game.alpha1, alpha2=game.alpha2, mu1=mu, mu2=mu,
                     target1=game.target1, target2=game.target2,
                     jacobian_weighting=game.jacobian_weighting)
        try:
            st = nash_fixed_point(prob, g, h, y0, compute_residuals=False)
        except SweepFailureError:
            return False
        rep = convexity_margin(prob, g, st, probes=probes,
                               rng=np.random.default_rng(12345))
        return rep["certified"]

    if not certified(np.exp(hi)):
        return {"mu_star": float("inf"), "bracket": bracket, "iters": 0}
    if certified(np.exp(lo)):
        return {"mu_star": float(bracket[0]), "bracket": bracket, "iters": 0}
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if certified(np.exp(mid)):
            hi = mid
        else:
            lo = mid
    return {"mu_star": float(np.exp(hi)), "bracket": bracket, "iters": iters}
