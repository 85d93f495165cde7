"""Uniform node-centred rectangular grids and finite-difference stencils.

Fields are plain numpy arrays indexed ``[i, j]`` with ``x = i*hx`` and
``y = j*hy``.  Vector-valued fields stack their components on a leading
axis, so a 3-vector field has shape ``(3, nx, ny)`` and a spin state has
shape ``(4, nx, ny)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class GridMismatchError(ValueError):
    """Raised when fields that must share a grid do not."""


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("node counts must be integers")
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3x3 nodes, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain edge lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def n_interior(self) -> int:
        return (self.nx - 2) * (self.ny - 2)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.linspace(0.0, self.lx, self.nx)
        y = np.linspace(0.0, self.ly, self.ny)
        return np.meshgrid(x, y, indexing="ij")

    @property
    def x(self) -> np.ndarray:
        return self.coords[0]

    @property
    def y(self) -> np.ndarray:
        return self.coords[1]

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights (sum to lx*ly)."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        w = np.outer(wx, wy)
        w.setflags(write=False)
        return w

    def integrate(self, f: np.ndarray) -> float:
        """Trapezoidal integral of a scalar field (or of each leading component summed)."""
        f = np.asarray(f)
        if f.shape[-2:] != self.shape:
            raise GridMismatchError(f"field shape {f.shape} does not live on grid {self.shape}")
        return float(np.sum(f * self.weights))

    def zeros(self, *lead: int) -> np.ndarray:
        return np.zeros((*lead, self.nx, self.ny))

    def check(self, f: np.ndarray, ncomp: int | None = None) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        expected = self.shape if ncomp is None else (ncomp, *self.shape)
        if f.shape != expected:
            raise GridMismatchError(f"expected field of shape {expected}, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("field contains non-finite values")
        return f


@dataclass(frozen=True)
class Dirichlet:
    """Dirichlet data; ``trace`` is a full-grid field whose boundary values are used."""

    trace: np.ndarray


@dataclass(frozen=True)
class NeumannZero:
    pass


NEUMANN_ZERO = NeumannZero()
BoundaryKind = Dirichlet | NeumannZero


def gradient(f: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """Central differences inside, second-order one-sided stencils on the boundary.

    Leading axes of ``f`` are treated as components.
    """
    f = np.asarray(f, dtype=float)
    if f.shape[-2:] != grid.shape:
        raise GridMismatchError(f"field shape {f.shape} does not live on grid {grid.shape}")
    fx = np.gradient(f, grid.hx, axis=-2, edge_order=2)
    fy = np.gradient(f, grid.hy, axis=-1, edge_order=2)
    return fx, fy


def divergence(w1: np.ndarray, w2: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Discrete divergence; on the interior it is minus the adjoint of :func:`gradient`."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if w1.shape != w2.shape:
        raise GridMismatchError(f"components disagree: {w1.shape} vs {w2.shape}")
    if w1.shape[-2:] != grid.shape:
        raise GridMismatchError(f"field shape {w1.shape} does not live on grid {grid.shape}")
    return (np.gradient(w1, grid.hx, axis=-2, edge_order=2)
            + np.gradient(w2, grid.hy, axis=-1, edge_order=2))


def _second_difference(g: np.ndarray, h: float, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    out = np.empty_like(g)
    out[..., 1:-1] = (g[..., 2:] - 2.0 * g[..., 1:-1] + g[..., :-2]) / h**2
    if g.shape[-1] >= 4:
        out[..., 0] = (2 * g[..., 0] - 5 * g[..., 1] + 4 * g[..., 2] - g[..., 3]) / h**2
        out[..., -1] = (2 * g[..., -1] - 5 * g[..., -2] + 4 * g[..., -3] - g[..., -4]) / h**2
    else:
        out[..., 0] = out[..., 1]
        out[..., -1] = out[..., -2]
    return np.moveaxis(out, -1, axis)


def laplacian(f: np.ndarray, grid: Grid2D, bc: BoundaryKind = NEUMANN_ZERO) -> np.ndarray:
    """Five-point Laplacian.

    With :data:`NEUMANN_ZERO` the boundary rows use mirrored ghost nodes, so a
    zero normal derivative holds to second order.  With :class:`Dirichlet` the
    boundary values are replaced by the trace before the stencil is applied;
    boundary rows then use one-sided second differences along the normal.
    """
    f = np.asarray(f, dtype=float)
    if f.shape[-2:] != grid.shape:
        raise GridMismatchError(f"field shape {f.shape} does not live on grid {grid.shape}")
    hx2, hy2 = grid.hx**2, grid.hy**2
    if isinstance(bc, NeumannZero):
        pad = [(0, 0)] * (f.ndim - 2) + [(1, 1), (1, 1)]
        g = np.pad(f, pad, mode="reflect")
        c = g[..., 1:-1, 1:-1]
        return ((g[..., 2:, 1:-1] - 2 * c + g[..., :-2, 1:-1]) / hx2
                + (g[..., 1:-1, 2:] - 2 * c + g[..., 1:-1, :-2]) / hy2)
    if isinstance(bc, Dirichlet):
        trace = np.asarray(bc.trace, dtype=float)
        if trace.shape != f.shape:
            raise GridMismatchError("Dirichlet trace must have the field's shape")
        g = np.where(grid.boundary_mask, trace, f)
        return _second_difference(g, grid.hx, -2) + _second_difference(g, grid.hy, -1)
    raise TypeError(f"unknown boundary kind {bc!r}")


# --- snapshot files -------------------------------------------------------

def write_snapshot(path: str | Path, grid: Grid2D, values: np.ndarray) -> None:
    """Write ``x y value`` (scalar) or ``x y v1 v2 v3`` (3-vector) columns, row-major."""
    values = np.asarray(values, dtype=float)
    if values.shape == grid.shape:
        cols = [values.ravel()]
        header = "x y value"
    elif values.ndim == 3 and values.shape[1:] == grid.shape:
        cols = [c.ravel() for c in values]
        header = "x y " + " ".join(f"v{k + 1}" for k in range(values.shape[0]))
    else:
        raise GridMismatchError(f"cannot write field of shape {values.shape} on grid {grid.shape}")
    table = np.column_stack([grid.x.ravel(), grid.y.ravel(), *cols])
    np.savetxt(path, table, fmt="%.17g", header=f"nx={grid.nx} ny={grid.ny} lx={grid.lx!r} ly={grid.ly!r}\n{header}")


def read_snapshot(path: str | Path) -> tuple[Grid2D, np.ndarray]:
    """Inverse of :func:`write_snapshot`."""
    path = Path(path)
    with path.open() as fh:
        meta = fh.readline().lstrip("#").split()
    kv = dict(item.split("=", 1) for item in meta)
    grid = Grid2D(int(kv["nx"]), int(kv["ny"]), float(kv["lx"]), float(kv["ly"]))
    table = np.loadtxt(path, ndmin=2)
    data = table[:, 2:]
    if data.shape[1] == 1:
        return grid, data[:, 0].reshape(grid.shape)
    return grid, np.stack([c.reshape(grid.shape) for c in data.T])
