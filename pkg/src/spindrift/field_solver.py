"""Self-consistent Poisson solve and saturated drift velocity."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .materials import MaterialParams, MobilityModel
from .mesh import Grid2D, gradient

DIRECT_LIMIT = 100_000
POISSON_RTOL = 1e-10


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class FieldSolution:
    V: np.ndarray
    gradV: tuple[np.ndarray, np.ndarray]
    v: tuple[np.ndarray, np.ndarray]

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(*self.v)

    @property
    def vmax(self) -> float:
        return float(np.max(self.speed))


@lru_cache(maxsize=16)
def grid_indices(grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """Flat (row-major) indices of interior and boundary nodes."""
    flat = np.arange(grid.size).reshape(grid.shape)
    interior = flat[1:-1, 1:-1].ravel()
    boundary = flat[grid.boundary_mask]
    interior.setflags(write=False)
    boundary.setflags(write=False)
    return interior, boundary


@lru_cache(maxsize=16)
def laplacian_rows(grid: Grid2D) -> sp.csr_matrix:
    """Five-point Laplacian as a matrix from all nodes to interior nodes."""
    nx, ny = grid.shape
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, ny - 1), indexing="ij")
    row = ((ii - 1) * (ny - 2) + (jj - 1)).ravel()
    full = (ii * ny + jj).ravel()
    wx, wy = 1.0 / grid.hx**2, 1.0 / grid.hy**2
    rows = np.concatenate([row] * 5)
    cols = np.concatenate([full, full + ny, full - ny, full + 1, full - 1])
    vals = np.concatenate([
        np.full(row.size, -2 * wx - 2 * wy),
        np.full(row.size, wx), np.full(row.size, wx),
        np.full(row.size, wy), np.full(row.size, wy),
    ])
    return sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_interior, grid.size))


class LinearSolver:
    """Factorise once, solve many; falls back to Jacobi-preconditioned CG on large systems."""

    def __init__(self, matrix: sp.spmatrix, symmetric: bool = True, rtol: float = 1e-12,
                 method: str = "auto"):
        self.matrix = sp.csc_matrix(matrix)
        self.rtol = rtol
        if method == "auto":
            method = "direct" if self.matrix.shape[0] <= DIRECT_LIMIT or not symmetric else "cg"
        self.method = method
        if method == "direct":
            # minimum-degree ordering on A^T + A suits the symmetric stencils here
            self._lu = spla.splu(self.matrix, permc_spec="MMD_AT_PLUS_A" if symmetric else "COLAMD")
        elif method == "cg":
            d = self.matrix.diagonal()
            self._precond = spla.LinearOperator(self.matrix.shape, matvec=lambda x: x / d)
        else:
            raise ValueError(f"unknown linear solver {method!r}")

    def solve(self, rhs: np.ndarray, x0: np.ndarray | None = None) -> tuple[np.ndarray, float]:
        if self.method == "direct":
            x = self._lu.solve(rhs)
        else:
            x, info = spla.cg(self.matrix, rhs, x0=x0, rtol=self.rtol, atol=0.0,
                              M=self._precond, maxiter=20 * self.matrix.shape[0])
            if info != 0:
                raise SolverError("conjugate gradients did not converge", self.residual(x, rhs))
        return x, self.residual(x, rhs)

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> float:
        scale = max(float(np.max(np.abs(rhs))), 1e-300)
        return float(np.max(np.abs(self.matrix @ x - rhs))) / scale


class PoissonSolver:
    """Dirichlet problem ``-lambdaD^2 Lap V = f`` on a fixed grid."""

    def __init__(self, grid: Grid2D, lambdaD: float):
        self.grid = grid
        self.lambdaD = lambdaD
        self.interior, self.boundary = grid_indices(grid)
        L = laplacian_rows(grid)
        self._to_interior = -(lambdaD**2) * L[:, self.interior]
        self._from_boundary = (lambdaD**2) * L[:, self.boundary]
        self.linear = LinearSolver(self._to_interior, rtol=1e-13)

    def solve(self, source: np.ndarray, VD: np.ndarray) -> np.ndarray:
        """Solve with right-hand side ``source`` (full grid) and Dirichlet trace ``VD``."""
        VD_flat = np.asarray(VD, dtype=float).ravel()
        rhs = np.asarray(source, dtype=float).ravel()[self.interior] + self._from_boundary @ VD_flat[self.boundary]
        x, res = self.linear.solve(rhs)
        if not res <= POISSON_RTOL:
            raise SolverError("Poisson solve did not reach tolerance", res)
        V = VD_flat.copy()
        V[self.interior] = x
        return V.reshape(self.grid.shape)


@lru_cache(maxsize=8)
def poisson_solver(grid: Grid2D, lambdaD: float) -> PoissonSolver:
    return PoissonSolver(grid, lambdaD)


def solve_poisson(n0: np.ndarray, params: MaterialParams, VD: np.ndarray) -> np.ndarray:
    """``-lambdaD^2 Lap V = 2 n0 - C`` with ``V = VD`` on the boundary."""
    grid = params.grid
    n0 = grid.check(n0)
    VD = grid.check(VD)
    return poisson_solver(grid, float(params.lambdaD)).solve(2.0 * n0 - params.C, VD)


def drift_velocity(V: np.ndarray, grid: Grid2D, mobility: MobilityModel) -> FieldSolution:
    """``v = -mu(|grad V|) grad V`` at every node."""
    V = grid.check(V)
    gx, gy = gradient(V, grid)
    mu = mobility(np.hypot(gx, gy))
    return FieldSolution(V=V, gradV=(gx, gy), v=(-mu * gx, -mu * gy))


def solve_field(n0: np.ndarray, params: MaterialParams, VD: np.ndarray,
                mobility: MobilityModel) -> FieldSolution:
    return drift_velocity(solve_poisson(n0, params, VD), params.grid, mobility)
