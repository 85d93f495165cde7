"""Implicit Euler time stepping of the charge/spin system with a per-step fixed point.

Each step solves, for the unknown ``u`` and the current iterate ``n``::

    u - h div(A grad u) = n_prev - h div(A n v) + h B n

where ``v`` is the drift velocity of the Poisson potential generated by
``n0``.  Diffusion is implicit; drift and reaction are frozen at the
iterate.  Iteration stops once the relative update drops below ``fp_tol``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import kernels
from .diagnostics import (CALIBRATED_C, DiagnosticsWriter, dissipation, entropy,
                          inequality_slack)
from .field_solver import FieldSolution, LinearSolver, grid_indices, solve_field
from .materials import MaterialParams, MobilityModel
from .mesh import Grid2D, write_snapshot
from .spin_algebra import apply_matrix, assemble_A, assemble_B

LINEAR_RTOL = 1e-11
# Above this many unknowns an operator that is used for a single step is
# solved by CG rather than factorised; reused operators are always factorised.
REBUILD_DIRECT_LIMIT = 10_000

BoundaryData = np.ndarray | Callable[[float], np.ndarray]


class FixedPointError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(f"{message}; residual history {[f'{r:.2e}' for r in history[-5:]]}")
        self.history = history


class TransientError(RuntimeError):
    """A step failed; ``trajectory`` holds everything accepted before the failure."""

    def __init__(self, message: str, trajectory: "Trajectory", cause: Exception):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


@dataclass
class SolverConfig:
    h: float
    fp_tol: float = 1e-9
    fp_max: int = 50
    damping: float = 1.0
    averaging: str = "arithmetic"
    linear_solver: str = "auto"
    max_halvings: int = 4

    def __post_init__(self):
        errors = []
        if not self.h > 0:
            errors.append("time step h > 0 required")
        if not self.fp_tol > 0:
            errors.append("fp_tol > 0 required")
        if not (0 < self.damping <= 1):
            errors.append("damping must lie in (0, 1]")
        if self.fp_max < 1:
            errors.append("fp_max >= 1 required")
        if self.averaging not in ("arithmetic", "harmonic"):
            errors.append("averaging must be 'arithmetic' or 'harmonic'")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class StepReport:
    t: float
    h: float
    fp_iters: int
    fp_residual: float
    linear_residual: float
    entropy_before: float
    entropy_after: float
    dissipation: float
    inequality_slack: float
    min_n0: float
    mass: float
    vmax: float
    halvings: int = 0

    @property
    def dS_dt(self) -> float:
        return (self.entropy_after - self.entropy_before) / self.h


def face_average(A: np.ndarray, mode: str = "arithmetic") -> tuple[np.ndarray, np.ndarray]:
    """Face coefficients from a nodal matrix field ``A`` of shape ``(c, c, nx, ny)``.

    Returns ``ax`` of shape ``(c, c, nx-1, ny)`` and ``ay`` of shape ``(c, c, nx, ny-1)``.
    ``"harmonic"`` uses the matrix harmonic mean ``2 (A_P^-1 + A_Q^-1)^-1``.
    """
    if mode == "arithmetic":
        ax = 0.5 * (A[:, :, 1:, :] + A[:, :, :-1, :])
        ay = 0.5 * (A[:, :, :, 1:] + A[:, :, :, :-1])
    elif mode == "harmonic":
        inv = np.linalg.inv(np.moveaxis(A, (0, 1), (-2, -1)))
        ax = np.moveaxis(2.0 * np.linalg.inv(inv[1:, :] + inv[:-1, :]), (-2, -1), (0, 1))
        ay = np.moveaxis(2.0 * np.linalg.inv(inv[:, 1:] + inv[:, :-1]), (-2, -1), (0, 1))
    else:
        raise ValueError(f"unknown averaging {mode!r}")
    return np.ascontiguousarray(ax), np.ascontiguousarray(ay)


class StepOperator:
    """Face coefficients, stiffness rows and the factorised step matrix ``I + h K``."""

    def __init__(self, grid: Grid2D, A: np.ndarray, h: float, averaging: str = "arithmetic",
                 linear_solver: str = "auto", reuse: bool = False):
        self.grid = grid
        self.h = h
        c = A.shape[0]
        self.ncomp = c
        self.ax, self.ay = face_average(A, averaging)
        rows, cols, vals = kernels.diffusion_triplets(self.ax, self.ay, grid.hx, grid.hy)
        interior, boundary = grid_indices(grid)
        N, Ni, Nb = grid.size, interior.size, boundary.size
        # full-grid column -> (is_interior, position)
        pos = np.full(c * N, -1, dtype=np.int64)
        is_int = np.zeros(c * N, dtype=bool)
        for s in range(c):
            pos[s * N + interior] = s * Ni + np.arange(Ni)
            is_int[s * N + interior] = True
            pos[s * N + boundary] = s * Nb + np.arange(Nb)
        inner = is_int[cols]
        self.K_int = sp.csr_matrix((vals[inner], (rows[inner], pos[cols[inner]])), shape=(c * Ni, c * Ni))
        self.K_bnd = sp.csr_matrix((vals[~inner], (rows[~inner], pos[cols[~inner]])), shape=(c * Ni, c * Nb))
        self.matrix = sp.identity(c * Ni, format="csr") + h * self.K_int
        self.interior, self.boundary = interior, boundary
        if linear_solver == "auto":
            linear_solver = "direct" if reuse or c * Ni <= REBUILD_DIRECT_LIMIT else "cg"
        self._solver_method = linear_solver
        self._solver: LinearSolver | None = None

    @property
    def solver(self) -> LinearSolver:
        if self._solver is None:
            self._solver = LinearSolver(self.matrix, symmetric=True, rtol=LINEAR_RTOL,
                                        method=self._solver_method)
        return self._solver

    def gather(self, f: np.ndarray, which: np.ndarray) -> np.ndarray:
        return f.reshape(self.ncomp, -1)[:, which].ravel()

    def rhs(self, n_prev: np.ndarray, n_iter: np.ndarray, v: tuple[np.ndarray, np.ndarray],
            B: np.ndarray | None, nD: np.ndarray) -> np.ndarray:
        """Right-hand side on interior unknowns, including Dirichlet couplings."""
        g = self.grid
        src = n_prev - self.h * kernels.drift_divergence(self.ax, self.ay, n_iter, v[0], v[1], g.hx, g.hy)
        if B is not None:
            src = src + self.h * apply_matrix(B, n_iter)
        return self.gather(src, self.interior) - self.h * (self.K_bnd @ self.gather(nD, self.boundary))

    def scatter(self, x: np.ndarray, nD: np.ndarray) -> np.ndarray:
        out = np.array(nD, dtype=float, copy=True).reshape(self.ncomp, -1)
        out[:, self.interior] = x.reshape(self.ncomp, -1)
        return out.reshape(nD.shape)


def assemble_step_system(n_prev: np.ndarray, n_iter: np.ndarray, v: tuple[np.ndarray, np.ndarray],
                         A: np.ndarray, B: np.ndarray | None, h: float, nD: np.ndarray,
                         grid: Grid2D, averaging: str = "arithmetic") -> tuple[sp.csr_matrix, np.ndarray]:
    """Matrix and right-hand side of one linearised step on interior unknowns.

    Unknowns are ordered component-major: all interior nodes of ``n0``, then
    ``n1``, and so on.
    """
    op = StepOperator(grid, A, h, averaging)
    return op.matrix, op.rhs(n_prev, n_iter, v, B, nD)


def _resolve(data: BoundaryData, t: float) -> np.ndarray:
    return np.asarray(data(t) if callable(data) else data, dtype=float)


@dataclass
class _Coefficients:
    m: np.ndarray
    A: np.ndarray
    B: np.ndarray


def coefficients(m: np.ndarray, params: MaterialParams) -> _Coefficients:
    return _Coefficients(m=m, A=assemble_A(params.D, params.p, m),
                         B=assemble_B(params.gamma, params.tau, m))


def _fixed_point(n_prev, nD, VD, op: StepOperator, B, cfg: SolverConfig, params, mobility):
    n = np.array(n_prev, dtype=float, copy=True)
    n[:, params.grid.boundary_mask] = nD[:, params.grid.boundary_mask]
    history = []
    lin_res = 0.0
    for it in range(1, cfg.fp_max + 1):
        fs = solve_field(n[0], params, VD, mobility)
        x, lin_res = op.solver.solve(op.rhs(n_prev, n, fs.v, B, nD), x0=op.gather(n, op.interior))
        u = op.scatter(x, nD)
        new = u if cfg.damping == 1.0 else (1.0 - cfg.damping) * n + cfg.damping * u
        scale = max(float(np.max(np.abs(new))), 1e-300)
        res = float(np.max(np.abs(new - n))) / scale
        history.append(res)
        n = new
        if not np.all(np.isfinite(n)):
            raise FixedPointError("non-finite iterate", history)
        if res <= cfg.fp_tol:
            return n, it, res, lin_res
    raise FixedPointError(f"fixed point did not converge in {cfg.fp_max} iterations", history)


def _report(t, h, n_prev, n, nD, fs: FieldSolution, iters, res, lin_res, params, audit, halvings=0):
    grid = params.grid
    c0, c = audit
    S0 = entropy(n_prev, nD, grid)
    S1 = entropy(n, nD, grid)
    diss = dissipation(n, grid)
    return StepReport(
        t=t, h=h, fp_iters=iters, fp_residual=res, linear_residual=lin_res,
        entropy_before=S0, entropy_after=S1, dissipation=diss,
        inequality_slack=inequality_slack(S0, S1, h, diss, c0, c),
        min_n0=float(np.min(n[0])), mass=grid.integrate(n[0]), vmax=fs.vmax,
        halvings=halvings,
    )


def default_audit(params: MaterialParams) -> tuple[float, float]:
    return params.c0, CALIBRATED_C


def fixed_point_step(n_prev: np.ndarray, m: np.ndarray, cfg: SolverConfig, params: MaterialParams,
                     mobility: MobilityModel, nD: np.ndarray, VD: np.ndarray, t: float = 0.0,
                     audit: tuple[float, float] | None = None,
                     operator: StepOperator | None = None) -> tuple[np.ndarray, FieldSolution, StepReport]:
    """Advance ``n_prev`` by one implicit Euler step of size ``cfg.h`` with coefficients at ``m``.

    ``t`` is the time at the end of the step (used only for the report).
    Raises :class:`FixedPointError` when the iteration does not converge.
    """
    grid = params.grid
    n_prev = grid.check(n_prev, ncomp=4)
    nD = grid.check(nD, ncomp=4)
    VD = grid.check(VD)
    coef = coefficients(m, params)
    op = operator or StepOperator(grid, coef.A, cfg.h, cfg.averaging, cfg.linear_solver)
    n, iters, res, lin_res = _fixed_point(n_prev, nD, VD, op, coef.B, cfg, params, mobility)
    fs = solve_field(n[0], params, VD, mobility)
    report = _report(t, cfg.h, n_prev, n, nD, fs, iters, res, lin_res, params, audit or default_audit(params))
    return n, fs, report


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    fields: list[FieldSolution | None] = field(default_factory=list)
    magnetizations: list[np.ndarray] = field(default_factory=list)
    reports: list[StepReport] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def record(self, t, n, fs, m):
        self.times.append(t)
        self.states.append(n)
        self.fields.append(fs)
        self.magnetizations.append(m)


class SnapshotWriter:
    """Writes state and magnetization snapshots into ``directory``."""

    def __init__(self, directory, grid: Grid2D, every: int):
        self.dir = Path(directory)
        self.grid = grid
        self.every = every
        self.dir.mkdir(parents=True, exist_ok=True)

    def __call__(self, k: int, n: np.ndarray, m: np.ndarray, fs: FieldSolution | None):
        if self.every <= 0 or k % self.every:
            return
        write_snapshot(self.dir / f"n0_{k:06d}.txt", self.grid, n[0])
        write_snapshot(self.dir / f"spin_{k:06d}.txt", self.grid, n[1:])
        write_snapshot(self.dir / f"m_{k:06d}.txt", self.grid, m)
        if fs is not None:
            write_snapshot(self.dir / f"V_{k:06d}.txt", self.grid, fs.V)


def run_transient(initial: np.ndarray, m_path, T: float, cfg: SolverConfig, params: MaterialParams,
                  mobility: MobilityModel, nD: BoundaryData, VD: BoundaryData,
                  record_every: int = 1, audit: tuple[float, float] | None = None,
                  diagnostics: DiagnosticsWriter | None = None,
                  snapshots: SnapshotWriter | None = None) -> Trajectory:
    """Advance ``initial`` to time ``T`` with steps of ``cfg.h``.

    ``m_path`` is an :class:`~spindrift.llg.LLGStepper` or a
    :class:`~spindrift.llg.FrozenMagnetization`; it is advanced over each step
    before the transport solve so the step sees the magnetization at the end
    of its interval.  ``nD`` and ``VD`` may be arrays or callables of time.
    A step whose fixed point fails is retried as two half steps, recursively,
    up to ``cfg.max_halvings`` levels.
    """
    if not T > 0:
        raise ValueError("horizon T > 0 required")
    grid = params.grid
    audit = audit or default_audit(params)
    nsteps = max(1, round(T / cfg.h))
    if abs(nsteps * cfg.h - T) > 1e-9 * T:
        raise ValueError(f"horizon {T} is not a whole number of steps of {cfg.h}")
    n = grid.check(initial, ncomp=4).copy()
    traj = Trajectory()
    traj.record(0.0, n, None, m_path.m.copy())
    if snapshots is not None:
        snapshots(0, n, m_path.m, None)
    frozen_op: dict[float, StepOperator] = {}

    def operator(m, h):
        if m_path.frozen and h in frozen_op:
            return frozen_op[h]
        op = StepOperator(grid, assemble_A(params.D, params.p, m), h, cfg.averaging, cfg.linear_solver,
                          reuse=m_path.frozen)
        if m_path.frozen:
            frozen_op[h] = op
        return op

    def advance(n_prev, m, t0, H, level):
        sub = SolverConfig(h=H, fp_tol=cfg.fp_tol, fp_max=cfg.fp_max, damping=cfg.damping,
                           averaging=cfg.averaging, linear_solver=cfg.linear_solver)
        t1 = t0 + H
        try:
            nk, fs, rep = fixed_point_step(n_prev, m, sub, params, mobility, _resolve(nD, t1),
                                           _resolve(VD, t1), t=t1, audit=audit, operator=operator(m, H))
            return nk, fs, rep.fp_iters, rep.fp_residual, rep.linear_residual, 0
        except FixedPointError:
            if level >= cfg.max_halvings:
                raise
        n_half, _, i1, _, _, h1 = advance(n_prev, m, t0, H / 2, level + 1)
        nk, fs, i2, res, lin, h2 = advance(n_half, m, t0 + H / 2, H / 2, level + 1)
        return nk, fs, i1 + i2, res, lin, 1 + max(h1, h2)

    for k in range(1, nsteps + 1):
        t0, t1 = (k - 1) * cfg.h, k * cfg.h
        try:
            m = m_path.advance(cfg.h)
            nk, fs, iters, res, lin, halvings = advance(n, m, t0, cfg.h, 0)
        except Exception as exc:
            raise TransientError(f"step {k} (t={t1:.6g}) failed: {exc}", traj, exc) from exc
        rep = _report(t1, cfg.h, n, nk, _resolve(nD, t1), fs, iters, res, lin, params, audit, halvings)
        traj.reports.append(rep)
        if diagnostics is not None:
            diagnostics.write(rep)
        if k % record_every == 0 or k == nsteps:
            traj.record(t1, nk, fs, m.copy())
        if snapshots is not None:
            snapshots(k, nk, m, fs)
        n = nk
    return traj


def homogeneous_spin_solution(s0: np.ndarray, m: np.ndarray, gamma: float, tau: float, t: float) -> np.ndarray:
    """Closed-form solution of ``ds/dt = 2 gamma s x m - s/tau`` for constant unit ``m``.

    The component along ``m`` decays; the perpendicular part rotates about
    ``m`` at angular rate ``2 gamma`` (clockwise) while decaying.
    """
    s0 = np.asarray(s0, dtype=float)
    m = np.asarray(m, dtype=float)
    decay = 0.0 if math.isinf(tau) else t / tau
    par = np.dot(s0, m) * m
    perp = s0 - par
    ang = 2.0 * gamma * t
    rotated = perp * math.cos(ang) + np.cross(perp, m) * math.sin(ang)
    return math.exp(-decay) * (par + rotated)
