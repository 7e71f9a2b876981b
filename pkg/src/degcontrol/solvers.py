"""Forward, backward and coupled PDE solvers on the fixed cylinder.

All systems derive from the primal operator

    L_n = b(t_n) W^{-1} A + upwind(-B(t_n) x) + diag(D1F) + diag(D2F g_n) Dc,

with g_n = C(t_n) beta(x) and Dc the central gradient matrix.  Backward
problems use the weighted transpose of the exact forward matrix at each
level, so every forward/backward pair obeys the summation-by-parts
identity

    sum_n dt <f^n, p^n>_W + <y^0, p^1>_W = sum_n dt <g^n, y^n>_W

to roundoff.  Gradients of the tracking functionals computed from these
adjoints are therefore exact discrete derivatives, not approximations.

Time stepping is backward Euler; the semilinear term is resolved by a
per-step Picard loop around the frozen linear factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import ControlGeometry, DegeneracySpec, GradientWeightSpec, MovingDomainSpec
from .grids import SpatialGrid, TimeMesh, TrajectoryField
from .operators import assemble_drift, assemble_stiffness, weighted_transpose
from .semilinear import SemilinearF

__all__ = [
    "CylinderProblem",
    "LevelOps",
    "StepFailureError",
    "SweepFailureError",
    "solve_forward_semilinear",
    "solve_forward_linear",
    "solve_backward_linear",
    "solve_adjoint_follower",
    "solve_linearized_coupled",
    "solve_adjoint_coupled",
    "LinearizedSolution",
    "AdjointSolution",
    "EnergyReport",
    "energy_diagnostics",
    "central_gradient_matrix",
]


class StepFailureError(RuntimeError):
    """Inner Picard loop of a time step failed to converge."""

    def __init__(self, time_index: int, residual: float):
        super().__init__(
            f"step {time_index}: inner iteration stalled at residual {residual:.3e}"
        )
        self.time_index = time_index
        self.residual = residual


class SweepFailureError(RuntimeError):
    """Trajectory-level Picard sweep failed to converge."""

    def __init__(self, history: Sequence[float], what: str):
        super().__init__(
            f"{what}: sweep residual {history[-1]:.3e} after {len(history)} sweeps"
        )
        self.history = list(history)


def central_gradient_matrix(grid: SpatialGrid) -> sp.csr_matrix:
    """Central difference u_x at interior nodes with Dirichlet closure.

    Row j (node x_{j+1}) is (u_{j+2} - u_j) / (x_{j+2} - x_j); boundary
    values are zero, so the matrix is (N-1) x (N-1).  On the smoothly
    graded mesh this is second-order accurate.
    """
    x = grid.nodes
    n = grid.N - 1
    denom = x[2:] - x[:-2]  # length N-1
    upper = 1.0 / denom[:-1]
    lower = -1.0 / denom[1:]
    return sp.diags([lower, np.zeros(n), upper], [-1, 0, 1], shape=(n, n), format="csr")


def _interior(values: np.ndarray) -> np.ndarray:
    return values[..., 1:-1]


@dataclass
class LevelOps:
    """Per-level linear operators and factorizations of (I + dt L_n).

    `mats[n]` is the full spatial operator at level n; `lu_fw`/`lu_bw`
    factorize the implicit forward and (weighted-transpose) backward
    systems.  Instances are immutable once built and shared by sweeps.
    """

    prob: "CylinderProblem"
    mats: list
    mats_t: list
    lu_fw: list
    lu_bw: list

    @classmethod
    def build(cls, prob: "CylinderProblem", reaction: np.ndarray,
              grad_coeff: np.ndarray) -> "LevelOps":
        """reaction, grad_coeff: arrays of shape (M+1, N-1)."""
        dt = prob.mesh.dt
        n = prob.grid.N - 1
        eye = sp.identity(n, format="csr")
        wv = prob.grid.interior_volumes
        mats, mats_t, lu_fw, lu_bw = [], [], [], []
        for m in range(prob.mesh.M + 1):
            L = (prob.base_operator(m)
                 + sp.diags(reaction[m])
                 + sp.diags(grad_coeff[m]) @ prob.Dc).tocsr()
            Lt = weighted_transpose(L, wv)
            mats.append(L)
            mats_t.append(Lt)
            lu_fw.append(spla.splu((eye + dt * L).tocsc()))
            lu_bw.append(spla.splu((eye + dt * Lt).tocsc()))
        return cls(prob=prob, mats=mats, mats_t=mats_t, lu_fw=lu_fw, lu_bw=lu_bw)


class CylinderProblem:
    """Bundle of all static data for one discrete cylinder problem.

    Holds the geometry specs, grid/mesh, nonlinearity and the cached
    per-level base operators L0_n = b_n W^{-1}A + upwind(-B_n x).
    """

    def __init__(self, deg: DegeneracySpec, gw: GradientWeightSpec,
                 dom: MovingDomainSpec, windows: ControlGeometry,
                 grid: SpatialGrid, mesh: TimeMesh, F: SemilinearF):
        if not np.isfinite(gw.M):
            gw = gw.attach(deg)
        if abs(dom.T - mesh.T) > 1e-14:
            raise ValueError("moving-domain horizon and time mesh disagree on T")
        self.deg, self.gw, self.dom, self.windows = deg, gw, dom, windows
        self.grid, self.mesh, self.F = grid, mesh, F
        self.xi = grid.interior
        b, B, C = dom.coefficients(deg, gw, mesh.times)
        self.b_t = np.atleast_1d(b)
        self.B_t = np.atleast_1d(B)
        self.C_t = np.atleast_1d(C)
        self.beta_i = gw.beta(self.xi)
        self.A = assemble_stiffness(grid, deg)
        self.Dc = central_gradient_matrix(grid)
        self._winv = sp.diags(1.0 / grid.interior_volumes)
        self._base = [None] * (mesh.M + 1)
        self._base_lu = None
        self._lin_ops = None
        self._ind = {}

    @classmethod
    def default(cls, N: int = 64, M: int = 128, alpha: float = 0.5,
                T: float = 1.0, gamma: float = 2.0, b_exp: float = 2.0,
                family: str = "affine", k: float = 0.25,
                windows: ControlGeometry | None = None,
                F: SemilinearF | None = None) -> "CylinderProblem":
        deg = DegeneracySpec(alpha=alpha)
        gw = GradientWeightSpec(b_exp=b_exp).attach(deg)
        dom = MovingDomainSpec(T=T, family=family, k=k)
        dom.validate()
        return cls(
            deg=deg, gw=gw, dom=dom,
            windows=windows or ControlGeometry(),
            grid=SpatialGrid(N=N, gamma=gamma),
            mesh=TimeMesh(M=M, T=T),
            F=F if F is not None else SemilinearF.sinusoidal(),
        )

    # -- static pieces -------------------------------------------------

    def indicator(self, name: str) -> np.ndarray:
        """Window indicator on all N+1 nodes, cached."""
        if name not in self._ind:
            self._ind[name] = self.windows.indicator(name, self.grid.nodes)
        return self._ind[name]

    def indicator_interior(self, name: str) -> np.ndarray:
        return self.indicator(name)[1:-1]

    def grad_weight(self, n: int) -> np.ndarray:
        """g_n = C(t_n) beta(x) at interior nodes."""
        return self.C_t[n] * self.beta_i

    def base_operator(self, n: int) -> sp.csr_matrix:
        """L0_n = b_n W^{-1} A + upwind(-B_n x), cached per level."""
        if self._base[n] is None:
            diff = self.b_t[n] * (self._winv @ self.A)
            drift = assemble_drift(self.grid, -self.B_t[n] * self.xi)
            self._base[n] = (diff + drift).tocsr()
        return self._base[n]

    def base_lu(self):
        """Factorizations of (I + dt L0_n) for the semilinear stepper."""
        if self._base_lu is None:
            dt = self.mesh.dt
            eye = sp.identity(self.grid.N - 1, format="csr")
            self._base_lu = [
                spla.splu((eye + dt * self.base_operator(m)).tocsc())
                for m in range(self.mesh.M + 1)
            ]
        return self._base_lu

    def linearized_ops(self) -> LevelOps:
        """Operators of the system linearized at the zero state."""
        if self._lin_ops is None:
            shape = (self.mesh.M + 1, self.grid.N - 1)
            zero = np.zeros(1)
            d1 = float(self.F.D1(zero, zero)[0])
            d2 = float(self.F.D2(zero, zero)[0])
            reaction = np.full(shape, d1)
            gradc = d2 * (self.C_t[:, None] * self.beta_i[None, :])
            self._lin_ops = LevelOps.build(self, reaction, gradc)
        return self._lin_ops

    def ops_at_state(self, y: TrajectoryField) -> LevelOps:
        """Operators of the equation linearized at the trajectory y."""
        yi = _interior(y.values)
        shape = yi.shape
        reaction = np.empty(shape)
        gradc = np.empty(shape)
        for n in range(shape[0]):
            g = self.grad_weight(n)
            w = g * (self.Dc @ yi[n])
            reaction[n] = self.F.D1(yi[n], w)
            gradc[n] = self.F.D2(yi[n], w) * g
        return LevelOps.build(self, reaction, gradc)

    def new_field(self) -> TrajectoryField:
        return TrajectoryField(self.grid, self.mesh)


# -- forward / backward kernels -----------------------------------------


def _source_array(prob: CylinderProblem, h=None, v1=None, v2=None, extra=None) -> np.ndarray:
    """Combine controls (masked to their windows) and a free source.

    Returns the interior source array of shape (M+1, N-1).
    """
    src = np.zeros((prob.mesh.M + 1, prob.grid.N - 1))
    for f, win in ((h, "O"), (v1, "O1"), (v2, "O2")):
        if f is not None:
            src += _interior(f.values) * prob.indicator_interior(win)[None, :]
    if extra is not None:
        vals = extra.values if hasattr(extra, "values") else np.asarray(extra)
        if vals.shape[1] == prob.grid.N + 1:
            vals = _interior(vals)
        src += vals
    return src


def solve_forward_semilinear(prob: CylinderProblem, y0: np.ndarray,
                             h: TrajectoryField | None = None,
                             v1: TrajectoryField | None = None,
                             v2: TrajectoryField | None = None,
                             source: TrajectoryField | None = None,
                             picard_tol: float = 1e-10,
                             max_inner: int = 25) -> TrajectoryField:
    """Backward-Euler march of the semilinear state equation.

    Each step solves (I + dt L0_n) z = y^{n-1} + dt (f^n - F(z, g_n z_x))
    by Picard around the frozen factorization, to `picard_tol` in the
    weighted L2 norm.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (prob.grid.N + 1,):
        raise ValueError("y0 must be a nodal row of length N+1")
    src = _source_array(prob, h, v1, v2, source)
    lus = prob.base_lu()
    dt = prob.mesh.dt
    out = prob.new_field()
    out.values[0] = y0
    out.zero_boundary()
    y = _interior(out.values[0]).copy()
    for n in range(1, prob.mesh.M + 1):
        g = prob.grad_weight(n)
        z = y.copy()
        converged = False
        d = np.inf
        for _ in range(max_inner):
            w = g * (prob.Dc @ z)
            rhs = y + dt * (src[n] - prob.F.F(z, w))
            z_new = lus[n].solve(rhs)
            d = float(np.sqrt(prob.grid.inner(
                np.pad(z_new - z, 1), np.pad(z_new - z, 1))))
            z = z_new
            if d <= picard_tol * (1.0 + float(np.max(np.abs(z)))):
                converged = True
                break
        if not converged:
            raise StepFailureError(n, d)
        if not np.all(np.isfinite(z)):
            raise StepFailureError(n, float("inf"))
        out.values[n, 1:-1] = z
        y = z
    return out


def solve_forward_linear(ops: LevelOps, y0: np.ndarray,
                         source: np.ndarray) -> TrajectoryField:
    """March y^n = (I + dt L_n)^{-1} (y^{n-1} + dt f^n) with f = source."""
    prob = ops.prob
    dt = prob.mesh.dt
    out = prob.new_field()
    out.values[0] = np.asarray(y0, dtype=float)
    out.zero_boundary()
    y = _interior(out.values[0]).copy()
    for n in range(1, prob.mesh.M + 1):
        y = ops.lu_fw[n].solve(y + dt * source[n])
        out.values[n, 1:-1] = y
    return out


def solve_backward_linear(ops: LevelOps, source: np.ndarray,
                          terminal: np.ndarray | None = None) -> TrajectoryField:
    """Reversed-time march with the weighted-transpose operators.

    With terminal=None the final level is free (p^{M+1}=0 convention),
    which is the exact adjoint of solve_forward_linear.  Passing a
    terminal row imposes p^M = terminal instead.
    """
    prob = ops.prob
    dt = prob.mesh.dt
    out = prob.new_field()
    if terminal is None:
        p = np.zeros(prob.grid.N - 1)
        start = prob.mesh.M
    else:
        out.values[prob.mesh.M] = np.asarray(terminal, dtype=float)
        out.zero_boundary()
        p = _interior(out.values[prob.mesh.M]).copy()
        start = prob.mesh.M - 1
    for m in range(start, -1, -1):
        p = ops.lu_bw[m].solve(p + dt * source[m])
        out.values[m, 1:-1] = p
    return out


def solve_adjoint_follower(prob: CylinderProblem, y: TrajectoryField,
                           target: TrajectoryField, alpha: float,
                           ops: LevelOps | None = None,
                           tweight: np.ndarray | None = None) -> TrajectoryField:
    """Follower adjoint p with terminal p(T)=0 and frozen coefficients from y.

    Source alpha (y - target) on the observation window; `tweight` is an
    optional per-level multiplier (Jacobian weighting of the functional).
    """
    if ops is None:
        ops = prob.ops_at_state(y)
    ind = prob.indicator_interior("Od")
    g = alpha * (_interior(y.values) - _interior(target.values)) * ind[None, :]
    if tweight is not None:
        g = g * np.asarray(tweight, dtype=float)[:, None]
    return solve_backward_linear(ops, g)


@dataclass
class LinearizedSolution:
    y: TrajectoryField
    p1: TrajectoryField
    p2: TrajectoryField
    history: list


def solve_linearized_coupled(prob: CylinderProblem, y0: np.ndarray,
                             h: TrajectoryField | None = None,
                             H: TrajectoryField | None = None,
                             H1: TrajectoryField | None = None,
                             H2: TrajectoryField | None = None,
                             mus: tuple = (1.0, 1.0),
                             alphas: tuple = (1.0, 1.0),
                             tol: float = 1e-10,
                             max_sweeps: int = 200) -> LinearizedSolution:
    """Forward-backward system linearized at zero, by trajectory Picard.

    y_t + L y = h 1_O - p1/mu1 1_O1 - p2/mu2 1_O2 + H,   y(0)=y0,
    -p_i_t + L* p_i = alpha_i y 1_Od + H_i,              p_i(T)=0.
    """
    ops = prob.linearized_ops()
    ind_od = prob.indicator_interior("Od")
    ind = [prob.indicator_interior("O1"), prob.indicator_interior("O2")]
    base_src = _source_array(prob, h=h, extra=H)
    hsrc = [
        _interior(H1.values) if H1 is not None else 0.0,
        _interior(H2.values) if H2 is not None else 0.0,
    ]
    shape = (prob.mesh.M + 1, prob.grid.N - 1)
    p = [np.zeros(shape), np.zeros(shape)]
    history = []
    y_field = p_fields = None
    for _ in range(max_sweeps):
        src = base_src - p[0] * (ind[0] / mus[0]) - p[1] * (ind[1] / mus[1])
        y_field = solve_forward_linear(ops, y0, src)
        yi = _interior(y_field.values)
        p_fields = []
        delta = 0.0
        for i in (0, 1):
            gi = alphas[i] * yi * ind_od[None, :] + hsrc[i]
            pf = solve_backward_linear(ops, gi)
            pi = _interior(pf.values)
            delta = max(delta, float(np.max(np.abs(pi - p[i]))))
            p[i] = pi
            p_fields.append(pf)
        history.append(delta)
        if delta <= tol:
            return LinearizedSolution(y=y_field, p1=p_fields[0], p2=p_fields[1],
                                      history=history)
    raise SweepFailureError(history, "linearized forward-backward coupling")


@dataclass
class AdjointSolution:
    phi: TrajectoryField
    psi1: TrajectoryField | None
    psi2: TrajectoryField | None
    rho: TrajectoryField  # the combined variable alpha1 psi1 + alpha2 psi2
    history: list


def solve_adjoint_coupled(prob: CylinderProblem, phiT: np.ndarray,
                          Fsrc: TrajectoryField | None = None,
                          F1: TrajectoryField | None = None,
                          F2: TrajectoryField | None = None,
                          mus: tuple = (1.0, 1.0),
                          alphas: tuple = (1.0, 1.0),
                          tol: float = 1e-10,
                          max_sweeps: int = 200,
                          reduced: bool = False) -> AdjointSolution:
    """Coupled adjoint system, full (phi, psi1, psi2) or reduced (phi, rho).

    -phi_t + L* phi = Fsrc + (alpha1 psi1 + alpha2 psi2) 1_Od, phi(T)=phiT,
    psi_i_t + L psi_i = F_i - phi/mu_i 1_Oi,                   psi_i(0)=0.

    The reduced form tracks rho = alpha1 psi1 + alpha2 psi2 directly with
    source G = alpha1 F1 + alpha2 F2.
    """
    ops = prob.linearized_ops()
    ind_od = prob.indicator_interior("Od")
    ind = [prob.indicator_interior("O1"), prob.indicator_interior("O2")]
    f0 = _interior(Fsrc.values) if Fsrc is not None else 0.0
    fi = [
        _interior(F1.values) if F1 is not None else 0.0,
        _interior(F2.values) if F2 is not None else 0.0,
    ]
    shape = (prob.mesh.M + 1, prob.grid.N - 1)
    zero0 = np.zeros(prob.grid.N + 1)
    history = []
    if reduced:
        g_src = alphas[0] * fi[0] + alphas[1] * fi[1]
        coupling = (alphas[0] / mus[0]) * ind[0] + (alphas[1] / mus[1]) * ind[1]
        rho_i = np.zeros(shape)
        for _ in range(max_sweeps):
            phi = solve_backward_linear(ops, f0 + rho_i * ind_od[None, :],
                                        terminal=phiT)
            rho_f = solve_forward_linear(
                ops, zero0, g_src - _interior(phi.values) * coupling[None, :])
            delta = float(np.max(np.abs(_interior(rho_f.values) - rho_i)))
            rho_i = _interior(rho_f.values)
            history.append(delta)
            if delta <= tol:
                return AdjointSolution(phi=phi, psi1=None, psi2=None,
                                       rho=rho_f, history=history)
        raise SweepFailureError(history, "reduced adjoint coupling")
    psi = [np.zeros(shape), np.zeros(shape)]
    for _ in range(max_sweeps):
        combined = alphas[0] * psi[0] + alphas[1] * psi[1]
        phi = solve_backward_linear(ops, f0 + combined * ind_od[None, :],
                                    terminal=phiT)
        phi_i = _interior(phi.values)
        psi_fields = []
        delta = 0.0
        for i in (0, 1):
            pf = solve_forward_linear(
                ops, zero0, fi[i] - phi_i * (ind[i] / mus[i])[None, :])
            delta = max(delta, float(np.max(np.abs(_interior(pf.values) - psi[i]))))
            psi[i] = _interior(pf.values)
            psi_fields.append(pf)
        history.append(delta)
        if delta <= tol:
            rho = alphas[0] * psi_fields[0] + alphas[1] * psi_fields[1]
            return AdjointSolution(phi=phi, psi1=psi_fields[0], psi2=psi_fields[1],
                                   rho=rho, history=history)
    raise SweepFailureError(history, "adjoint forward-backward coupling")


# -- energy diagnostics --------------------------------------------------


@dataclass
class EnergyReport:
    """Appendix-style quadratic energy quantities per field."""

    sup_l2: dict
    grad_energy: dict          # int int a |u_x|^2
    time_deriv: dict           # int int |u_t|^2
    flux_divergence: dict      # int int |(a u_x)_x|^2
    rhs_budget: float
    fitted_constant: float
    bound_ok: bool

    def total(self, name: str) -> float:
        return (self.sup_l2[name] ** 2 + self.grad_energy[name]
                + self.time_deriv[name] + self.flux_divergence[name])


def energy_diagnostics(prob: CylinderProblem, fields: dict,
                       rhs_budget: float = float("nan"),
                       budget_constant: float = float("nan")) -> EnergyReport:
    """Compute the four quadratic energy quantities for each field.

    If a finite rhs_budget is given, the fitted constant
    max_field (sup_l2^2 + grad_energy) / budget is reported and compared
    against budget_constant (Gronwall-style bound) when that is finite.
    """
    grid, mesh = prob.grid, prob.mesh
    a_face = prob.deg.a(grid.faces)
    h = grid.spacings
    wv = grid.cell_volumes
    dt = mesh.dt
    sup_l2, grad_e, dtn, fluxdiv = {}, {}, {}, {}
    for name, f in fields.items():
        vals = f.values
        sup_l2[name] = float(np.max([grid.norm(row) for row in vals]))
        dflux = a_face[None, :] * np.diff(vals, axis=1) / h[None, :]
        # dt * sum_{n>=1} sum_faces a_f |du/h|^2 h, the right-endpoint rule
        grad_e[name] = float(dt * np.sum(
            a_face[None, :] * (np.diff(vals[1:], axis=1) / h[None, :]) ** 2
            * h[None, :]))
        ut = np.diff(vals, axis=0) / dt
        dtn[name] = float(dt * np.sum(wv[None, :] * ut ** 2))
        div = np.diff(dflux, axis=1) / wv[None, 1:-1]
        fluxdiv[name] = float(dt * np.sum(wv[None, 1:-1] * div[1:] ** 2))
    fitted = float("nan")
    ok = True
    if np.isfinite(rhs_budget) and rhs_budget > 0:
        fitted = max((sup_l2[k] ** 2 + grad_e[k]) / rhs_budget for k in fields)
        if np.isfinite(budget_constant):
            ok = fitted <= budget_constant
    return EnergyReport(sup_l2=sup_l2, grad_energy=grad_e, time_deriv=dtn,
                        flux_divergence=fluxdiv, rhs_budget=rhs_budget,
                        fitted_constant=fitted, bound_ok=ok)


def dump_trajectory_csv(f: TrajectoryField, path) -> None:
    """One row per time level: t, then the N+1 nodal values."""
    data = np.column_stack([f.mesh.times, f.values])
    header = "t," + ",".join(f"x{j}" for j in range(f.grid.N + 1))
    np.savetxt(path, data, delimiter=",", header=header, comments="")
