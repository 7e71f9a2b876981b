"""Spatial grid, time mesh and space-time trajectory fields.

The grid is graded toward the degeneracy point x = 0 via x_j = (j/N)**gamma.
Discrete L2 inner products use the cell volumes w_j = (x_{j+1} - x_{j-1})/2
(trapezoid weights), so that operator adjoints taken with respect to the
weighted inner product reproduce the continuous integration by parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SpatialGrid", "TimeMesh", "TrajectoryField"]


@dataclass(frozen=True)
class SpatialGrid:
    """Graded grid on [0,1] with N+1 nodes, x_0 = 0 and x_N = 1."""

    N: int = 64
    gamma: float = 2.0
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 4:
            raise ValueError("need N >= 4")
        if self.gamma <= 0:
            raise ValueError("grading exponent must be positive")
        x = (np.arange(self.N + 1) / self.N) ** self.gamma
        x[0], x[-1] = 0.0, 1.0
        if np.any(np.diff(x) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", x)

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]

    @property
    def faces(self) -> np.ndarray:
        """Midpoints x_{j+1/2}, length N."""
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    @property
    def spacings(self) -> np.ndarray:
        """h_{j+1/2} = x_{j+1} - x_j, length N."""
        return np.diff(self.nodes)

    @property
    def cell_volumes(self) -> np.ndarray:
        """Trapezoid weights for all N+1 nodes."""
        h = self.spacings
        w = np.empty(self.N + 1)
        w[0] = h[0] / 2
        w[-1] = h[-1] / 2
        w[1:-1] = (h[:-1] + h[1:]) / 2
        return w

    @property
    def interior_volumes(self) -> np.ndarray:
        return self.cell_volumes[1:-1]

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Discrete L2(0,1) inner product of nodal fields (length N+1)."""
        return float(np.sum(self.cell_volumes * u * v))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Face-centred differences (u_{j+1}-u_j)/h_{j+1/2}, length N."""
        return np.diff(u) / self.spacings


@dataclass(frozen=True)
class TimeMesh:
    """Uniform time mesh on [0,T] with M steps."""

    M: int = 128
    T: float = 1.0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("need M >= 2")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M + 1)


class TrajectoryField:
    """Scalar space-time field on the discrete cylinder, shape (M+1, N+1).

    Row n holds the spatial profile at time t_n.  Homogeneous Dirichlet
    data is assumed for all solver fields; `values` is owned, mutable.
    """

    def __init__(self, grid: SpatialGrid, mesh: TimeMesh, values: np.ndarray | None = None):
        self.grid = grid
        self.mesh = mesh
        shape = (mesh.M + 1, grid.N + 1)
        if values is None:
            self.values = np.zeros(shape)
        else:
            values = np.asarray(values, dtype=float)
            if values.shape != shape:
                raise ValueError(f"expected shape {shape}, got {values.shape}")
            self.values = values.copy()

    @classmethod
    def from_function(cls, grid, mesh, f) -> "TrajectoryField":
        """Sample f(x, t) on the mesh (f must broadcast over x)."""
        out = cls(grid, mesh)
        for n, t in enumerate(mesh.times):
            out.values[n] = f(grid.nodes, t)
        return out

    def copy(self) -> "TrajectoryField":
        return TrajectoryField(self.grid, self.mesh, self.values)

    def zero_boundary(self) -> "TrajectoryField":
        self.values[:, 0] = 0.0
        self.values[:, -1] = 0.0
        return self

    def l2q_norm(self) -> float:
        """Discrete L2(Q) norm."""
        return float(np.sqrt(max(self.l2q_inner(self), 0.0)))

    def l2q_inner(self, other: "TrajectoryField") -> float:
        """Discrete L2(Q) inner product.

        Time quadrature is the right-endpoint rule (weight dt on levels
        1..M, none on level 0), matching the backward-Euler pairing used by
        the duality identities; space uses the cell volumes.
        """
        w = self.grid.cell_volumes
        tw = np.full(self.mesh.M + 1, self.mesh.dt)
        tw[0] = 0.0
        return float(np.einsum("n,j,nj,nj->", tw, w, self.values, other.values))

    def masked(self, indicator_row: np.ndarray) -> "TrajectoryField":
        """Restrict to a spatial window (rowwise multiply by an indicator)."""
        out = self.copy()
        out.values *= indicator_row[None, :]
        return out

    def __add__(self, other):
        return TrajectoryField(self.grid, self.mesh, self.values + other.values)

    def __sub__(self, other):
        return TrajectoryField(self.grid, self.mesh, self.values - other.values)

    def __mul__(self, c: float):
        return TrajectoryField(self.grid, self.mesh, self.values * c)

    __rmul__ = __mul__
