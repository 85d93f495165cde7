"""Thermal equilibrium of the charge/potential pair and decay of transients toward it.

At equilibrium the spin density vanishes and the charge flux is zero,
``grad n0 + n0 mu(|grad V|) grad V = 0``, coupled to the Poisson equation.
:func:`solve_equilibrium` finds it by a Gummel alternation between the
continuity part (linear in ``n0`` for a frozen potential) and a semilinear
Poisson problem solved by Newton's method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field_solver import FieldSolution, SolverError, drift_velocity, grid_indices, laplacian_rows
from .materials import MaterialParams, MobilityModel
from .mesh import Grid2D, gradient
from .spin_algebra import assemble_A
from .transport import face_average

GUMMEL_TOL = 1e-10
GUMMEL_MAX = 200
NEWTON_TOL = 1e-13


class EquilibriumError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(f"{message}; last updates {[f'{r:.2e}' for r in history[-5:]]}")
        self.history = history


@dataclass
class Equilibrium:
    n0_eq: np.ndarray
    V_eq: np.ndarray
    u_eq: np.ndarray
    curl_residual: np.ndarray
    curl_norm: float
    flux_residual: float
    smallness: float
    sweeps: int
    form: str
    history: list[float] = field(default_factory=list)

    def state(self) -> np.ndarray:
        """Four-component equilibrium state (spin density zero)."""
        n = np.zeros((4, *self.n0_eq.shape))
        n[0] = self.n0_eq
        return n


def _boundary_n0(nD, grid: Grid2D) -> np.ndarray:
    nD = np.asarray(nD, dtype=float)
    n0 = nD[0] if nD.ndim == 3 else np.broadcast_to(nD, grid.shape)
    b = n0[grid.boundary_mask]
    if not np.all(b > 0):
        raise ValueError("equilibrium needs n0 > 0 on the boundary (its logarithm is taken there)")
    return np.array(n0, dtype=float)


def _split(M: sp.spmatrix, grid: Grid2D):
    interior, boundary = grid_indices(grid)
    M = sp.csr_matrix(M)
    return sp.csc_matrix(M[:, interior]), sp.csr_matrix(M[:, boundary]), interior, boundary


def flux_operator(grid: Grid2D, ax: np.ndarray, ay: np.ndarray, v: tuple[np.ndarray, np.ndarray]) -> sp.csr_matrix:
    """Rows (interior nodes) of ``n -> div_h(a (grad_h n - <n v>))`` over all nodes.

    Face fluxes are ``a_f [(n_Q - n_P)/h - (n_Q v_Q + n_P v_P)/2]``, the same
    discrete flux the transport step uses for the charge component.
    """
    nx, ny = grid.shape
    hx, hy = grid.hx, grid.hy
    vx, vy = v
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, ny - 1), indexing="ij")
    row = ((ii - 1) * (ny - 2) + (jj - 1)).ravel()
    P = (ii * ny + jj).ravel()
    I, J = ii.ravel(), jj.ravel()
    ae, aw = ax[I, J], ax[I - 1, J]
    an, as_ = ay[I, J], ay[I, J - 1]
    vxP, vyP = vx[I, J], vy[I, J]
    entries = [
        (P + ny, ae * (1 / hx - vx[I + 1, J] / 2) / hx),
        (P - ny, aw * (1 / hx + vx[I - 1, J] / 2) / hx),
        (P + 1, an * (1 / hy - vy[I, J + 1] / 2) / hy),
        (P - 1, as_ * (1 / hy + vy[I, J - 1] / 2) / hy),
        (P, (ae * (-1 / hx - vxP / 2) + aw * (-1 / hx + vxP / 2)) / hx
            + (an * (-1 / hy - vyP / 2) + as_ * (-1 / hy + vyP / 2)) / hy),
    ]
    cols = np.concatenate([c for c, _ in entries])
    vals = np.concatenate([w for _, w in entries])
    rows = np.concatenate([row] * len(entries))
    return sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_interior, grid.size))


def _continuity_flux(V, grid, mobility, ax, ay, n0_bnd):
    fs = drift_velocity(V, grid, mobility)
    Mi, Mb, interior, boundary = _split(flux_operator(grid, ax, ay, fs.v), grid)
    flat_b = n0_bnd.ravel()
    x = spla.spsolve(Mi, -(Mb @ flat_b[boundary]))
    n0 = flat_b.copy()
    n0[interior] = x
    n0 = n0.reshape(grid.shape)
    if not np.all(n0 > 0):
        raise SolverError("continuity solve produced non-positive n0", float(np.min(n0)))
    return n0


def _face_mobility(V, grid, mobility):
    """Mobility times compact gradient on x- and y-faces."""
    gx = np.diff(V, axis=0) / grid.hx
    gy = np.diff(V, axis=1) / grid.hy
    # transverse component from the nodal gradient averaged to the face
    ngx, ngy = gradient(V, grid)
    sx = np.hypot(gx, 0.5 * (ngy[1:] + ngy[:-1]))
    sy = np.hypot(0.5 * (ngx[:, 1:] + ngx[:, :-1]), gy)
    return mobility(sx) * gx, mobility(sy) * gy


def _continuity_log(V, grid, mobility, n0_bnd):
    """``Lap_h u = -div_h(mu grad V)`` with ``u = log n0D`` on the boundary."""
    wx, wy = _face_mobility(V, grid, mobility)
    div = np.zeros(grid.shape)
    div[1:-1, 1:-1] = (wx[1:, 1:-1] - wx[:-1, 1:-1]) / grid.hx + (wy[1:-1, 1:] - wy[1:-1, :-1]) / grid.hy
    L = laplacian_rows(grid)
    interior, boundary = grid_indices(grid)
    u_b = np.log(n0_bnd).ravel()
    Li = sp.csc_matrix(L[:, interior])
    x = spla.spsolve(Li, -div[1:-1, 1:-1].ravel() - L[:, boundary] @ u_b[boundary])
    u = u_b.copy()
    u[interior] = x
    return np.exp(u.reshape(grid.shape))


def _poisson_newton(n0_k, V_k, params: MaterialParams, mobility: MobilityModel, VD, max_iter: int = 50):
    """Solve ``-lambdaD^2 Lap V = 2 n0_k exp(-mu_k (V - V_k)) - C`` by Newton's method."""
    grid = params.grid
    mu_k = mobility(np.hypot(*gradient(V_k, grid)))
    L = laplacian_rows(grid)
    interior, boundary = grid_indices(grid)
    lam2 = params.lambdaD**2
    Li = -lam2 * sp.csc_matrix(L[:, interior])
    V = np.array(V_k, dtype=float).ravel()
    V[boundary] = np.asarray(VD, dtype=float).ravel()[boundary]
    n0f, muf, Vkf, Cf = n0_k.ravel(), mu_k.ravel(), V_k.ravel(), params.C.ravel()
    bnd_term = -lam2 * (L[:, boundary] @ V[boundary])
    for _ in range(max_iter):
        e = n0f[interior] * np.exp(-muf[interior] * (V[interior] - Vkf[interior]))
        F = Li @ V[interior] + bnd_term - 2.0 * e + Cf[interior]
        J = Li + sp.diags(2.0 * muf[interior] * e)
        dV = spla.spsolve(sp.csc_matrix(J), -F)
        V[interior] += dV
        if np.max(np.abs(dV)) <= NEWTON_TOL * max(1.0, float(np.max(np.abs(V)))):
            break
    else:
        raise SolverError("Newton iteration for the Poisson problem did not converge", float(np.max(np.abs(F))))
    V = V.reshape(grid.shape)
    n0 = n0_k * np.exp(-mu_k * (V - V_k))
    return V, n0


def smallness_quantity(mobility: MobilityModel, lambdaD: float, n_eq: np.ndarray) -> float:
    """``vsat^2 + L^2 lambdaD^-4 ||n_eq||_inf^2``."""
    return mobility.vsat**2 + mobility.L**2 * lambdaD**-4 * float(np.max(np.abs(n_eq))) ** 2


def curl_constraint_residual(V: np.ndarray, grid: Grid2D, mobility: MobilityModel) -> tuple[np.ndarray, float]:
    """``d1 w2 - d2 w1`` for ``w = mu(|grad V|) grad V``, with its L2 norm."""
    gx, gy = gradient(V, grid)
    mu = mobility(np.hypot(gx, gy))
    w1, w2 = mu * gx, mu * gy
    curl = gradient(w2, grid)[0] - gradient(w1, grid)[1]
    return curl, math.sqrt(grid.integrate(curl * curl))


def zero_flux_residual(n0: np.ndarray, V: np.ndarray, grid: Grid2D, mobility: MobilityModel) -> float:
    """Max-norm of ``grad n0 + n0 mu grad V`` at interior nodes."""
    fs = drift_velocity(V, grid, mobility)
    gx, gy = gradient(n0, grid)
    r = np.hypot(gx - n0 * fs.v[0], gy - n0 * fs.v[1])
    return float(np.max(r[1:-1, 1:-1]))


def solve_equilibrium(params: MaterialParams, mobility: MobilityModel, nD, VD, form: str = "flux",
                      m: np.ndarray | None = None, averaging: str = "arithmetic",
                      tol: float = GUMMEL_TOL, max_sweeps: int = GUMMEL_MAX,
                      damping: float = 1.0) -> Equilibrium:
    """Gummel iteration for the equilibrium ``(n0, V)``.

    ``form="flux"`` solves the continuity step in the discrete flux form used
    by the transport solver, so the result is an exact stationary point of
    :func:`spindrift.transport.run_transient` (for constant ``p`` and ``m``).
    ``form="log"`` solves ``Lap u = -div(mu grad V)`` for ``u = log n0``.
    ``m`` (default ``e3``) only enters the diffusion coefficient.  Each sweep
    is followed by a Newton solve of the Poisson equation with the
    Boltzmann-type predictor ``n0 exp(-mu (V - V_k))``; the iteration stops
    when the joint relative update is below ``tol``.
    """
    if form not in ("flux", "log"):
        raise ValueError(f"unknown equilibrium form {form!r}")
    grid = params.grid
    n0_bnd = _boundary_n0(nD, grid)
    VD = np.broadcast_to(np.asarray(VD, dtype=float), grid.shape)
    if m is None:
        m = np.zeros((3, *grid.shape))
        m[2] = 1.0
    ax, ay = face_average(assemble_A(params.D, params.p, m), averaging)
    ax, ay = ax[0, 0], ay[0, 0]

    # start from the boundary mean inside and the linear Poisson potential
    n0 = np.array(n0_bnd)
    n0[1:-1, 1:-1] = float(np.mean(n0_bnd[grid.boundary_mask]))
    V = np.array(VD, dtype=float)
    V, n0 = _poisson_newton(n0, V, params, mobility, VD)
    history = []
    for sweep in range(1, max_sweeps + 1):
        if form == "flux":
            n0_new = _continuity_flux(V, grid, mobility, ax, ay, n0_bnd)
        else:
            n0_new = _continuity_log(V, grid, mobility, n0_bnd)
        V_new, _ = _poisson_newton(n0_new, V, params, mobility, VD)
        if damping != 1.0:
            V_new = (1 - damping) * V + damping * V_new
        upd = max(float(np.max(np.abs(V_new - V))) / max(1.0, float(np.max(np.abs(V_new)))),
                  float(np.max(np.abs(n0_new - n0))) / float(np.max(np.abs(n0_new))))
        history.append(upd)
        n0, V = n0_new, V_new
        if upd <= tol:
            break
    else:
        raise EquilibriumError(f"Gummel iteration stagnated after {max_sweeps} sweeps", history)
    # final continuity solve so that n0 is exactly consistent with the returned V
    n0 = _continuity_flux(V, grid, mobility, ax, ay, n0_bnd) if form == "flux" else \
        _continuity_log(V, grid, mobility, n0_bnd)
    curl, curl_norm = curl_constraint_residual(V, grid, mobility)
    u = np.log(n0)
    return Equilibrium(
        n0_eq=np.exp(u), V_eq=V, u_eq=u, curl_residual=curl, curl_norm=curl_norm,
        flux_residual=zero_flux_residual(n0, V, grid, mobility),
        smallness=smallness_quantity(mobility, params.lambdaD, n0),
        sweeps=sweep, form=form, history=history,
    )


def equilibrium_field(eq: Equilibrium, grid: Grid2D, mobility: MobilityModel) -> FieldSolution:
    return drift_velocity(eq.V_eq, grid, mobility)


# --- decay toward equilibrium ---------------------------------------------

@dataclass
class DecayReport:
    k1: float
    k2: float
    r2: float
    smallness: float
    monotone: bool
    reliable: bool
    skipped: bool
    n_points: int
    distances: np.ndarray
    times: np.ndarray
    threshold_estimate: float | None = None

    def summary(self) -> dict:
        out = {"k1": self.k1, "k2": self.k2, "r2": self.r2, "smallness": self.smallness,
               "monotone": self.monotone, "fit_reliable": self.reliable}
        if self.threshold_estimate is not None:
            out["threshold_estimate"] = self.threshold_estimate
        return out


def decay_analysis(times: Sequence[float], states: Sequence[np.ndarray], eq: Equilibrium, grid: Grid2D,
                   smallness: float | None = None, window: float = 0.05, floor: float = 1e-8,
                   rel_floor: float = 1e-9, mono_rtol: float = 1e-10) -> DecayReport:
    """Fit ``||n(t) - n_eq|| ~ k1 exp(-k2 t)`` on the post-transient window.

    Times before ``t0 + window*(T - t0)`` are excluded; so are points where the
    distance has fallen below ``rel_floor`` times its initial value (rounding
    plateau).  When the distance never exceeds ``floor`` the fit is skipped.
    ``monotone`` reports whether ``S = 1/2 |n - n_eq|^2`` is non-increasing on
    the window; a non-monotone or poorly fitting history is flagged as not
    reliable rather than raising.
    """
    t = np.asarray(times, dtype=float)
    ref = eq.state()
    d = np.array([math.sqrt(grid.integrate(np.sum((np.asarray(s) - ref) ** 2, axis=0))) for s in states])
    small = eq.smallness if smallness is None else smallness
    if np.max(d) <= floor:
        return DecayReport(math.nan, math.nan, math.nan, small, True, False, True, 0, d, t)
    start = t[0] + window * (t[-1] - t[0])
    sel = (t >= start - 1e-12) & (d > rel_floor * d[0])
    S = 0.5 * d[sel] ** 2
    monotone = bool(np.all(np.diff(S) <= mono_rtol * S[:-1] + 1e-300))
    if sel.sum() < 3:
        return DecayReport(math.nan, math.nan, math.nan, small, monotone, False, False, int(sel.sum()), d, t)
    y = np.log(d[sel])
    slope, intercept = np.polyfit(t[sel], y, 1)
    fit = slope * t[sel] + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayReport(k1=math.exp(intercept), k2=-slope, r2=r2, smallness=small, monotone=monotone,
                       reliable=monotone and r2 >= 0.99, skipped=False, n_points=int(sel.sum()),
                       distances=d, times=t)


def threshold_bisection(decays: Callable[[float], bool], lo: float, hi: float, iters: int = 8) -> float:
    """Largest ``x`` in ``[lo, hi]`` with ``decays(x)`` true, assuming one switch from true to false.

    Used with ``x = vsat`` to estimate the empirical smallness threshold.
    Returns ``hi`` when ``decays(hi)`` already holds and ``lo`` when even
    ``decays(lo)`` fails.
    """
    if decays(hi):
        return hi
    if not decays(lo):
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if decays(mid):
            lo = mid
        else:
            hi = mid
    return lo
