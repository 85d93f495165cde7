"""Vectorised numpy implementations of the hot kernels.

Same signatures and results as the compiled ``_kernels`` module; this one is
used when the extension is not built or ``SPINDRIFT_PURE_PYTHON`` is set.
"""
import numpy as np


def _neumann_laplacian(m, hx, hy):
    g = np.pad(m, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    c = g[:, 1:-1, 1:-1]
    return ((g[:, 2:, 1:-1] - 2.0 * c + g[:, :-2, 1:-1]) / (hx * hx)
            + (g[:, 1:-1, 2:] - 2.0 * c + g[:, 1:-1, :-2]) / (hy * hy))


def _cross(a, b):
    return np.stack([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def llg_rhs(m, hx, hy):
    """``m x Lm - m x (m x Lm)`` with the mirrored-ghost Laplacian ``L``."""
    m = np.ascontiguousarray(m, dtype=np.float64)
    lap = _neumann_laplacian(m, hx, hy)
    prec = _cross(m, lap)
    return prec - _cross(m, prec)


def heun_step(m, dt, hx, hy):
    """Explicit Heun step of :func:`llg_rhs` followed by pointwise renormalisation."""
    m = np.ascontiguousarray(m, dtype=np.float64)
    k1 = llg_rhs(m, hx, hy)
    k2 = llg_rhs(m + dt * k1, hx, hy)
    out = m + 0.5 * dt * (k1 + k2)
    return out / np.sqrt(np.sum(out * out, axis=0))


def diffusion_triplets(ax, ay, hx, hy):
    """COO triplets of ``-div(a grad u)`` on interior rows.

    ``ax[r, s, i, j]`` is the coefficient on the face between nodes
    ``(i, j)`` and ``(i+1, j)``; ``ay`` likewise in ``y``.  Rows run over
    ``(component, interior node)`` component-major; columns over
    ``(component, node)`` of the full grid, also component-major.
    """
    c = ax.shape[0]
    nx, ny = ax.shape[2] + 1, ax.shape[3]
    N = nx * ny
    Ni = (nx - 2) * (ny - 2)
    wx, wy = 1.0 / (hx * hx), 1.0 / (hy * hy)
    aE = ax[:, :, 1:, 1:-1] * wx
    aW = ax[:, :, :-1, 1:-1] * wx
    aN = ay[:, :, 1:-1, 1:] * wy
    aS = ay[:, :, 1:-1, :-1] * wy
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, ny - 1), indexing="ij")
    node = (ii - 1) * (ny - 2) + (jj - 1)
    full = ii * ny + jj
    r = np.arange(c)[:, None, None, None]
    s = np.arange(c)[None, :, None, None]
    row = np.broadcast_to(r * Ni + node, (c, c, nx - 2, ny - 2))
    blocks = [
        (s * N + full, aE + aW + aN + aS),
        (s * N + full + ny, -aE),
        (s * N + full - ny, -aW),
        (s * N + full + 1, -aN),
        (s * N + full - 1, -aS),
    ]
    rows = np.concatenate([row.ravel()] * len(blocks))
    cols = np.concatenate([np.broadcast_to(col, row.shape).ravel() for col, _ in blocks])
    vals = np.concatenate([v.ravel() for _, v in blocks])
    return rows.astype(np.int64), cols.astype(np.int64), vals


def drift_divergence(ax, ay, n, v1, v2, hx, hy):
    """``div(a <n v>)`` at interior nodes with face-averaged fluxes ``<n v>``.

    Boundary entries of the result are zero.
    """
    n = np.asarray(n, dtype=np.float64)
    fx = n * v1
    fy = n * v2
    gx = np.einsum("rsij,sij->rij", ax, 0.5 * (fx[:, 1:, :] + fx[:, :-1, :]))
    gy = np.einsum("rsij,sij->rij", ay, 0.5 * (fy[:, :, 1:] + fy[:, :, :-1]))
    out = np.zeros_like(n)
    out[:, 1:-1, 1:-1] = ((gx[:, 1:, 1:-1] - gx[:, :-1, 1:-1]) / hx
                          + (gy[:, 1:-1, 1:] - gy[:, 1:-1, :-1]) / hy)
    return out
