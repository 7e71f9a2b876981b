"""Discrete spatial operators for the cylinder equation and implicit stepping.

The second-order term b(t) (a(x) u_x)_x is discretized in conservative flux
form with a evaluated at face midpoints.  Transport terms c(x) u_x use
first-order upwinding keyed to the sign of c.  All operators act on interior
nodal vectors (homogeneous Dirichlet rows eliminated); adjoints are exact
transposes with respect to the cell-volume inner product, which is what makes
the discrete forward/backward duality identities hold to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import DegeneracySpec
from .grids import SpatialGrid

__all__ = [
    "assemble_stiffness",
    "assemble_drift",
    "OperatorBundle",
    "step_implicit",
    "weighted_transpose",
]


def assemble_stiffness(grid: SpatialGrid, deg: DegeneracySpec | None, scale: float = 1.0,
                       a_face: np.ndarray | None = None) -> sp.csr_matrix:
    """Symmetric form matrix A (interior x interior) with u^T A u ~ scale * int a |u_x|^2.

    The operator approximating -scale*(a u_x)_x is W^{-1} A with W the cell
    volumes; A itself is exactly symmetric by construction.  Pass a_face to
    override the face diffusivity (used by the a==1 Laplacian test hook).
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if a_face is None:
        a_face = deg.a(grid.faces)
    h = grid.spacings
    g = scale * a_face / h  # face conductances, length N
    n = grid.N - 1
    diag = g[:-1] + g[1:]
    off = -g[1:-1]
    return sp.diags([off, diag, off], [-1, 0, 1], shape=(n, n), format="csr")


def assemble_drift(grid: SpatialGrid, coeff: np.ndarray) -> sp.csr_matrix:
    """First-order upwind discretization of c(x) u_x on interior nodes.

    `coeff` holds c at the N-1 interior nodes.  Rows with c_j > 0 use the
    backward difference, c_j < 0 the forward one, so the operator is an
    M-matrix contribution and vanishes on constant fields in the interior.
    """
    n = grid.N - 1
    coeff = np.asarray(coeff, dtype=float)
    if coeff.shape != (n,):
        raise ValueError(f"coeff must have shape ({n},)")
    h = grid.spacings  # h[j] = x_{j+1} - x_j
    lower = np.zeros(n - 1)
    diag = np.zeros(n)
    upper = np.zeros(n - 1)
    for j in range(n):
        c = coeff[j]
        if c >= 0:
            # (u_j - u_{j-1}) / h_{j-1/2}; interior node j sits at x_{j+1}
            diag[j] += c / h[j]
            if j > 0:
                lower[j - 1] -= c / h[j]
        else:
            diag[j] -= c / h[j + 1]
            if j < n - 1:
                upper[j] += c / h[j + 1]
    return sp.diags([lower, diag, upper], [-1, 0, 1], shape=(n, n), format="csr")


def weighted_transpose(L: sp.spmatrix, volumes: np.ndarray) -> sp.csr_matrix:
    """Adjoint of L with respect to the cell-volume inner product."""
    w = sp.diags(volumes)
    winv = sp.diags(1.0 / volumes)
    return (winv @ L.T @ w).tocsr()


@dataclass
class OperatorBundle:
    """Spatial operator L at one time level, y_t + L y = f on interior nodes.

    L = b_t * W^{-1} A  (degenerate diffusion, from -b (a u_x)_x)
      + upwind(drift_coeff)  (covers -B(t) x u_x and C D2F beta u_x)
      + diag(reaction)       (D1F terms)
    """

    grid: SpatialGrid
    matrix: sp.csr_matrix  # the full L
    stiffness: sp.csr_matrix  # symmetric form matrix A
    drift: sp.csr_matrix
    reaction: np.ndarray

    @classmethod
    def build(cls, grid: SpatialGrid, deg: DegeneracySpec, b_t: float,
              drift_coeff: np.ndarray, reaction: np.ndarray) -> "OperatorBundle":
        A = assemble_stiffness(grid, deg, scale=1.0)
        D = assemble_drift(grid, drift_coeff)
        winv = sp.diags(1.0 / grid.interior_volumes)
        L = (b_t * (winv @ A) + D + sp.diags(reaction)).tocsr()
        return cls(grid=grid, matrix=L, stiffness=A, drift=D, reaction=reaction)

    def transpose(self) -> sp.csr_matrix:
        return weighted_transpose(self.matrix, self.grid.interior_volumes)


def step_implicit(L: sp.spmatrix, state: np.ndarray, source: np.ndarray, dt: float) -> np.ndarray:
    """One backward-Euler step: solve (I + dt L) u = state + dt * source.

    Backward-in-time problems reuse this kernel on reversed levels with the
    weighted transpose of L (substitution t -> T - t).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = L.shape[0]
    sys = (sp.identity(n, format="csr") + dt * L).tocsc()
    rhs = state + dt * source
    sol = spla.spsolve(sys, rhs)
    if not np.all(np.isfinite(sol)):
        raise FloatingPointError("implicit step produced non-finite values")
    return sol
