"""Spin-up/spin-down/perpendicular formulation.

For a constant magnetization the variables ``n+ = n0 + m.n``,
``n- = n0 - m.n`` and ``nperp = n - (n.m) m`` obey scalar parabolic
equations without cross diffusion.  :func:`solve_decoupled_constant_m`
integrates them with its own scalar assembly, which makes it an independent
check on :mod:`spindrift.transport`.  For a varying magnetization the
diagonalised equations acquire source terms; :func:`diag_residual` evaluates
them on a primal solution and :func:`source_bound_check` verifies their
pointwise domination.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field_solver import FieldSolution, grid_indices, solve_field
from .materials import MaterialParams, MobilityModel
from .mesh import NEUMANN_ZERO, Grid2D, divergence, gradient, laplacian
from .spin_algebra import from_diag, to_diag
from .transport import FixedPointError, SolverConfig


class DecoupledPreconditionError(ValueError):
    pass


@dataclass
class DiagState:
    n_plus: np.ndarray
    n_minus: np.ndarray
    n_perp: np.ndarray

    @classmethod
    def from_primal(cls, n: np.ndarray, m: np.ndarray) -> "DiagState":
        m = _field_m(m, np.asarray(n).shape[1:])
        return cls(*to_diag(n, m))

    def to_primal(self, m: np.ndarray) -> np.ndarray:
        return from_diag(self.n_plus, self.n_minus, self.n_perp, _field_m(m, self.n_plus.shape))

    def stack(self) -> np.ndarray:
        return np.concatenate([self.n_plus[None], self.n_minus[None], self.n_perp])

    @classmethod
    def unstack(cls, a: np.ndarray) -> "DiagState":
        return cls(a[0], a[1], a[2:5])


def _field_m(m, shape) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape == (3,):
        return np.broadcast_to(m[:, None, None], (3, *shape))
    return m


def _constant_direction(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim == 3:
        ref = m[:, 0, 0]
        if np.max(np.abs(m - ref[:, None, None])) > 1e-14:
            raise DecoupledPreconditionError("the decoupled solver requires a spatially constant magnetization")
        m = ref
    if m.shape != (3,) or abs(np.linalg.norm(m) - 1.0) > 1e-10:
        raise DecoupledPreconditionError("magnetization must be a unit 3-vector")
    return m


# --- scalar assembly -------------------------------------------------------

def _faces(c: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    if mode == "harmonic":
        return (2 * c[1:] * c[:-1] / (c[1:] + c[:-1]),
                2 * c[:, 1:] * c[:, :-1] / (c[:, 1:] + c[:, :-1]))
    return 0.5 * (c[1:] + c[:-1]), 0.5 * (c[:, 1:] + c[:, :-1])


class ScalarStep:
    """``I + h K`` for ``K u = -div(c grad u)`` on interior nodes, with its factorisation."""

    def __init__(self, grid: Grid2D, coef: np.ndarray, h: float, averaging: str = "arithmetic"):
        self.grid = grid
        self.h = h
        self.cx, self.cy = _faces(np.asarray(coef, dtype=float), averaging)
        nx, ny = grid.shape
        wx, wy = 1.0 / grid.hx**2, 1.0 / grid.hy**2
        idx = np.full(grid.shape, -1, dtype=np.int64)
        idx[1:-1, 1:-1] = np.arange(grid.n_interior).reshape(nx - 2, ny - 2)
        self.idx = idx
        cE = self.cx[1:, 1:-1] * wx
        cW = self.cx[:-1, 1:-1] * wx
        cN = self.cy[1:-1, 1:] * wy
        cS = self.cy[1:-1, :-1] * wy
        centre = idx[1:-1, 1:-1]
        rows, cols, vals = [centre.ravel()], [centre.ravel()], [(1.0 + h * (cE + cW + cN + cS)).ravel()]
        # neighbour couplings; boundary neighbours are moved to the right-hand side
        self._bnd = []
        for coeff, sl in ((cE, (slice(2, None), slice(1, -1))), (cW, (slice(0, -2), slice(1, -1))),
                          (cN, (slice(1, -1), slice(2, None))), (cS, (slice(1, -1), slice(0, -2)))):
            nb = idx[sl]
            inner = nb >= 0
            rows.append(centre[inner])
            cols.append(nb[inner])
            vals.append(-h * coeff[inner])
            self._bnd.append((centre[~inner], sl, ~inner, h * coeff[~inner]))
        self.matrix = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                    shape=(grid.n_interior, grid.n_interior))
        self._lu = spla.splu(self.matrix)

    def dirichlet_rhs(self, bval: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.n_interior)
        for rows, sl, mask, w in self._bnd:
            np.add.at(out, rows, w * bval[sl][mask])
        return out

    def drift_div(self, n: np.ndarray, v: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        """``div(c <n v>)`` at interior nodes (flattened), face-averaged like the primal scheme."""
        g = self.grid
        fx = n * v[0]
        fy = n * v[1]
        gx = self.cx * 0.5 * (fx[1:] + fx[:-1])
        gy = self.cy * 0.5 * (fy[:, 1:] + fy[:, :-1])
        d = (gx[1:, 1:-1] - gx[:-1, 1:-1]) / g.hx + (gy[1:-1, 1:] - gy[1:-1, :-1]) / g.hy
        return d.ravel()

    def solve(self, n_prev: np.ndarray, n_iter: np.ndarray, v, source: np.ndarray, bval: np.ndarray) -> np.ndarray:
        rhs = (n_prev[1:-1, 1:-1].ravel() - self.h * self.drift_div(n_iter, v)
               + self.h * source[1:-1, 1:-1].ravel() + self.dirichlet_rhs(bval))
        x = self._lu.solve(rhs)
        out = np.array(bval, dtype=float, copy=True)
        out[1:-1, 1:-1] = x.reshape(self.grid.nx - 2, self.grid.ny - 2)
        return out


@dataclass
class DecoupledTrajectory:
    m: np.ndarray
    times: list[float] = field(default_factory=list)
    states: list[DiagState] = field(default_factory=list)
    fields: list[FieldSolution | None] = field(default_factory=list)
    fp_iters: list[int] = field(default_factory=list)

    def primal(self) -> list[np.ndarray]:
        return [s.to_primal(self.m) for s in self.states]


def _reaction(s: DiagState, m: np.ndarray, gamma: float, tau: float):
    inv_tau = 0.0 if math.isinf(tau) else 1.0 / tau
    flip = 0.5 * inv_tau * (s.n_plus - s.n_minus)
    prec = 2.0 * gamma * np.cross(s.n_perp, m[:, None, None], axis=0) - inv_tau * s.n_perp
    return -flip, flip, prec


def solve_decoupled_constant_m(initial: DiagState, m, T: float, cfg: SolverConfig, params: MaterialParams,
                               mobility: MobilityModel,
                               nD: DiagState | Callable[[float], DiagState],
                               VD: np.ndarray | Callable[[float], np.ndarray],
                               record_every: int = 1) -> DecoupledTrajectory:
    """Integrate the decoupled equations for a constant magnetization ``m``.

    Uses the same implicit Euler step and fixed-point structure as the primal
    solver, but five scalar solves (three distinct matrices) per iteration.
    """
    m = _constant_direction(m)
    grid = params.grid
    eta = params.eta
    steps = {
        "plus": ScalarStep(grid, params.D / (1.0 + params.p), cfg.h, cfg.averaging),
        "minus": ScalarStep(grid, params.D / (1.0 - params.p), cfg.h, cfg.averaging),
        "perp": ScalarStep(grid, params.D / eta, cfg.h, cfg.averaging),
    }
    nsteps = max(1, round(T / cfg.h))

    def at(data, t):
        return data(t) if callable(data) else data

    state = DiagState(np.array(initial.n_plus, float), np.array(initial.n_minus, float),
                      np.array(initial.n_perp, float))
    traj = DecoupledTrajectory(m=m)
    traj.times.append(0.0)
    traj.states.append(state)
    traj.fields.append(None)
    for k in range(1, nsteps + 1):
        t1 = k * cfg.h
        bd = at(nD, t1)
        Vb = np.asarray(at(VD, t1), dtype=float)
        prev = state
        it_state = DiagState(prev.n_plus.copy(), prev.n_minus.copy(), prev.n_perp.copy())
        mask = grid.boundary_mask
        it_state.n_plus[mask] = bd.n_plus[mask]
        it_state.n_minus[mask] = bd.n_minus[mask]
        it_state.n_perp[:, mask] = bd.n_perp[:, mask]
        history = []
        for it in range(1, cfg.fp_max + 1):
            fs = solve_field(0.5 * (it_state.n_plus + it_state.n_minus), params, Vb, mobility)
            src_p, src_m, src_perp = _reaction(it_state, m, params.gamma, params.tau)
            new = DiagState(
                steps["plus"].solve(prev.n_plus, it_state.n_plus, fs.v, src_p, bd.n_plus),
                steps["minus"].solve(prev.n_minus, it_state.n_minus, fs.v, src_m, bd.n_minus),
                np.stack([steps["perp"].solve(prev.n_perp[c], it_state.n_perp[c], fs.v, src_perp[c], bd.n_perp[c])
                          for c in range(3)]),
            )
            if cfg.damping != 1.0:
                new = DiagState.unstack((1 - cfg.damping) * it_state.stack() + cfg.damping * new.stack())
            a, b = new.stack(), it_state.stack()
            res = float(np.max(np.abs(a - b))) / max(float(np.max(np.abs(a))), 1e-300)
            history.append(res)
            it_state = new
            if res <= cfg.fp_tol:
                break
        else:
            raise FixedPointError(f"decoupled fixed point did not converge in {cfg.fp_max} iterations", history)
        state = it_state
        if k % record_every == 0 or k == nsteps:
            traj.times.append(t1)
            traj.states.append(state)
            traj.fields.append(solve_field(0.5 * (state.n_plus + state.n_minus), params, Vb, mobility))
            traj.fp_iters.append(it)
    return traj


# --- residuals of the diagonalised equations --------------------------------

@dataclass
class DiagResidual:
    r_plus: np.ndarray
    r_minus: np.ndarray
    r_perp: np.ndarray
    f_plus: np.ndarray
    f_minus: np.ndarray
    f_perp: np.ndarray
    dtm_missing: bool = False

    def interior_l2(self, grid: Grid2D, margin: int = 1) -> float:
        """Discrete L2 norm of all residual components over nodes at least ``margin`` from the boundary."""
        sl = (slice(margin, -margin), slice(margin, -margin))
        w = grid.hx * grid.hy
        tot = (np.sum(self.r_plus[sl] ** 2) + np.sum(self.r_minus[sl] ** 2)
               + np.sum(self.r_perp[(slice(None), *sl)] ** 2))
        return math.sqrt(w * tot)


def _dot_grad(a_grad, b_grad):
    """``sum_i sum_s d_i a_s d_i b_s`` for stacked gradients of shape ``(2, c, nx, ny)``."""
    return np.sum(a_grad[0] * b_grad[0] + a_grad[1] * b_grad[1], axis=0)


def _terms(n, m, dtm, v, params: MaterialParams):
    grid = params.grid
    D, p = params.D, params.p
    eta = params.eta
    inv_tau = 0.0 if math.isinf(params.tau) else 1.0 / params.tau
    gn = np.stack(gradient(n, grid))          # (2, 4, nx, ny)
    gm = np.stack(gradient(m, grid))          # (2, 3, nx, ny)
    lap_m = laplacian(m, grid, NEUMANN_ZERO)  # (3, nx, ny)
    vv = np.stack(v)                          # (2, nx, ny)
    ns = n[1:]
    n_dot_gm = np.sum(ns[None] * gm, axis=1)  # (2, nx, ny): sum_s n_s d_i m_s
    gm_gn = _dot_grad(gm, gn[:, 1:])          # sum_i d_i m . d_i n
    v_n_gm = np.sum(vv * n_dot_gm, axis=0)    # v_i n . d_i m
    n_dot_m = np.sum(ns * m, axis=0)
    n_dot_dtm = np.sum(ns * dtm, axis=0)
    n_dot_lapm = np.sum(ns * lap_m, axis=0)
    k_perp = D / eta

    f_pm = {}
    for sign, coef in ((1.0, D / (1.0 + p)), (-1.0, D / (1.0 - p))):
        gc = np.stack(gradient(coef, grid))
        div_term = np.sum(gc * n_dot_gm, axis=0) + coef * (gm_gn + n_dot_lapm)
        f_pm[sign] = sign * (n_dot_dtm - div_term - k_perp * (gm_gn - v_n_gm) - inv_tau * n_dot_m)

    # perpendicular equation
    gk = np.stack(gradient(k_perp, grid))
    # d_i(m_k m_s): (2, 3, 3, nx, ny) indexed [i, k, s]
    d_mm = gm[:, None, :] * m[None, :, None] + gm[:, :, None] * m[None, None, :]
    lap_mm = (m[:, None] * lap_m[None, :] + m[None, :] * lap_m[:, None]
              + 2.0 * np.sum(gm[:, :, None] * gm[:, None, :], axis=0))
    t1 = (np.sum(gk[:, None, None] * ns[None, None] * d_mm, axis=(0, 2))
          + k_perp * np.sum(gn[:, None, 1:] * d_mm, axis=(0, 2))
          + k_perp * np.sum(ns[None] * lap_mm, axis=1))
    J = gn - vv[:, None] * n[None]             # (2, 4, nx, ny): J_s^i
    mJ = np.sum(m[None] * J[:, 1:], axis=1)    # (2, nx, ny): m . J^i
    y = D / eta**2 * (-p * J[:, 0] + mJ)        # (2, nx, ny)
    t2 = np.sum(y[:, None] * gm, axis=0)
    t2 = t2 + k_perp * m * np.sum(J[:, 1:] * gm, axis=(0, 1))
    t3 = -n_dot_m * dtm - m * n_dot_dtm
    t4 = 2.0 * params.gamma * np.cross(ns, m, axis=0)
    f_perp = t1 + t2 + t3 + t4
    return f_pm[1.0], f_pm[-1.0], f_perp, gn, gm, lap_m


def diag_residual(n_prev: np.ndarray, n: np.ndarray, m_prev: np.ndarray | None, m: np.ndarray,
                  v: tuple[np.ndarray, np.ndarray], params: MaterialParams, h: float) -> DiagResidual:
    """Residuals of the diagonalised equations at time level ``k`` from levels ``k-1`` and ``k``.

    Time derivatives are backward differences; ``m_prev=None`` means the
    magnetization is frozen, in which case its time derivative is taken as
    zero and the result is flagged.
    """
    grid = params.grid
    m = _field_m(m, grid.shape)
    missing = m_prev is None
    m_prev = m if missing else _field_m(m_prev, grid.shape)
    dtm = (m - m_prev) / h
    f_plus, f_minus, f_perp, *_ = _terms(n, m, dtm, v, params)
    p_now, mi_now, perp_now = to_diag(n, m)
    p_old, mi_old, perp_old = to_diag(n_prev, m_prev)
    inv_tau = 0.0 if math.isinf(params.tau) else 1.0 / params.tau
    D, p = params.D, params.p

    def transport(u, coef):
        gx, gy = gradient(u, grid)
        return divergence(coef * (gx - v[0] * u), coef * (gy - v[1] * u), grid)

    r_plus = (p_now - p_old) / h - transport(p_now, D / (1.0 + p)) - f_plus
    r_minus = (mi_now - mi_old) / h - transport(mi_now, D / (1.0 - p)) - f_minus
    k_perp = D / params.eta
    r_perp = ((perp_now - perp_old) / h - transport(perp_now, k_perp) + inv_tau * perp_now - f_perp)
    return DiagResidual(r_plus, r_minus, r_perp, f_plus, f_minus, f_perp, dtm_missing=missing)


@dataclass
class SourceBoundReport:
    c: float
    bound: np.ndarray
    ratio_plus: float
    ratio_minus: float
    ratio_perp: float

    @property
    def ok(self) -> bool:
        return max(self.ratio_plus, self.ratio_minus, self.ratio_perp) <= 1.0


def source_bound_check(n_prev: np.ndarray, n: np.ndarray, m_prev: np.ndarray | None, m: np.ndarray,
                       v: tuple[np.ndarray, np.ndarray], params: MaterialParams, h: float) -> SourceBoundReport:
    """Compare the diagonalised source terms with ``c|n|(|dt m| + |Lap m| + |grad m|^2 + 1) + c|grad n||grad m|``.

    ``c`` is assembled from the largest coefficient magnitudes; ratios are
    the worst ``|f|/bound`` over all nodes (1.0 or less means dominated).
    """
    grid = params.grid
    m = _field_m(m, grid.shape)
    m_prev = m if m_prev is None else _field_m(m_prev, grid.shape)
    dtm = (m - m_prev) / h
    f_plus, f_minus, f_perp, gn, gm, lap_m = _terms(n, m, dtm, v, params)
    D, p, eta = params.D, params.p, params.eta
    kmax = float(np.max(np.maximum(D / (1.0 - np.abs(p)), D / eta**2)))
    gmax = 0.0
    for coef in (D / (1.0 + p), D / (1.0 - p), D / eta):
        gx, gy = gradient(coef, grid)
        gmax = max(gmax, float(np.max(np.hypot(gx, gy))))
    vmax = float(np.max(np.hypot(*v)))
    inv_tau = 0.0 if math.isinf(params.tau) else 1.0 / params.tau
    c = 4.0 * kmax * (1.0 + vmax) + gmax + inv_tau + 2.0 * params.gamma + 2.0
    abs_n = np.sqrt(np.sum(n * n, axis=0))
    abs_gn = np.sqrt(np.sum(gn * gn, axis=(0, 1)))
    abs_gm = np.sqrt(np.sum(gm * gm, axis=(0, 1)))
    abs_dtm = np.sqrt(np.sum(dtm * dtm, axis=0))
    abs_lap = np.sqrt(np.sum(lap_m * lap_m, axis=0))
    bound = c * abs_n * (abs_dtm + abs_lap + abs_gm**2 + 1.0) + c * abs_gn * abs_gm

    def worst(f):
        mag = np.abs(f) if f.ndim == 2 else np.sqrt(np.sum(f * f, axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(bound > 0, mag / bound, np.where(mag > 0, np.inf, 0.0))
        return float(np.max(r))

    return SourceBoundReport(c=c, bound=bound, ratio_plus=worst(f_plus),
                             ratio_minus=worst(f_minus), ratio_perp=worst(f_perp))
