"""Pointwise 4x4 algebra of the charge/spin system.

Every function accepts either a single node (``m`` of shape ``(3,)``) or a
whole field (``m`` of shape ``(3, nx, ny)``); matrices come back with the
two matrix axes first, i.e. ``(4, 4)`` or ``(4, 4, nx, ny)``.
"""
from __future__ import annotations

import numpy as np

UNIT_TOL = 1e-10


class SpinAlgebraError(ValueError):
    pass


def _check_unit(m: np.ndarray, tol: float = UNIT_TOL) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape[0] != 3:
        raise SpinAlgebraError(f"magnetization must have 3 components, got shape {m.shape}")
    dev = np.max(np.abs(np.sqrt(np.sum(m * m, axis=0)) - 1.0))
    if not dev <= tol:
        raise SpinAlgebraError(f"magnetization is not unit length (max deviation {dev:.3g})")
    return m


def _outer(m: np.ndarray) -> np.ndarray:
    return m[:, None] * m[None, :]


def assemble_A(D, p, m) -> np.ndarray:
    """Diffusion matrix ``D/eta^2 [[1, -p m^T], [-p m, eta I + (1-eta) m m^T]]``."""
    m = _check_unit(m)
    D = np.asarray(D, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(np.abs(p) >= 1):
        raise SpinAlgebraError("|p| < 1 required")
    eta = np.sqrt((1.0 - p) * (1.0 + p))
    tail = m.shape[1:]
    A = np.zeros((4, 4, *tail))
    scale = D / eta**2
    A[0, 0] = scale
    A[0, 1:] = -scale * p * m
    A[1:, 0] = -scale * p * m
    A[1:, 1:] = scale * ((1.0 - eta) * _outer(m) + eta * np.eye(3).reshape((3, 3) + (1,) * len(tail)))
    return A


def projectors(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spectral projectors ``(P+, P-, Pperp)`` of the diffusion matrix."""
    m = _check_unit(m)
    tail = m.shape[1:]
    e = np.zeros((4, *tail))
    e[0] = 1.0
    up = e.copy()
    up[1:] = m
    down = e.copy()
    down[1:] = -m
    p_plus = 0.5 * _outer(up)
    p_minus = 0.5 * _outer(down)
    p_perp = np.zeros((4, 4, *tail))
    p_perp[1:, 1:] = np.eye(3).reshape((3, 3) + (1,) * len(tail)) - _outer(m)
    return p_plus, p_minus, p_perp


def eigenvalues(D, p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(D/(1+p), D/(1-p), D/eta)``; the last has multiplicity two."""
    D = np.asarray(D, dtype=float)
    p = np.asarray(p, dtype=float)
    return D / (1.0 + p), D / (1.0 - p), D / np.sqrt((1.0 - p) * (1.0 + p))


def assemble_B(gamma: float, tau: float, m) -> np.ndarray:
    """Reaction matrix: zero charge row/column, spin block ``2 gamma eps_ijk m_k - delta_ij/tau``.

    With this block, ``(B n)_spin = 2 gamma (n x m) - n/tau``.
    """
    if not tau > 0:
        raise SpinAlgebraError("tau > 0 required")
    m = _check_unit(m)
    tail = m.shape[1:]
    B = np.zeros((4, 4, *tail))
    g2 = 2.0 * gamma
    m1, m2, m3 = m
    B[1, 2], B[1, 3] = g2 * m3, -g2 * m2
    B[2, 1], B[2, 3] = -g2 * m3, g2 * m1
    B[3, 1], B[3, 2] = g2 * m2, -g2 * m1
    inv_tau = 0.0 if np.isinf(tau) else 1.0 / tau
    for k in range(1, 4):
        B[k, k] = -inv_tau
    return B


def apply_matrix(M: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Nodewise product of a matrix field with a vector field."""
    return np.einsum("ij...,j...->i...", M, n)


def to_diag(n, m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(n+, n-, nperp)`` with ``n+- = n0 +- m.n`` and ``nperp = n - (n.m) m``."""
    m = _check_unit(m)
    n = np.asarray(n, dtype=float)
    proj = np.sum(n[1:] * m, axis=0)
    return n[0] + proj, n[0] - proj, n[1:] - proj * m


def from_diag(n_plus, n_minus, n_perp, m) -> np.ndarray:
    """Inverse of :func:`to_diag`; any component of ``n_perp`` along ``m`` is dropped."""
    m = _check_unit(m)
    n_perp = np.asarray(n_perp, dtype=float)
    n_perp = n_perp - np.sum(n_perp * m, axis=0) * m
    n_plus = np.asarray(n_plus, dtype=float)
    n_minus = np.asarray(n_minus, dtype=float)
    out = np.empty((4, *m.shape[1:]))
    out[0] = 0.5 * (n_plus + n_minus)
    out[1:] = 0.5 * (n_plus - n_minus) * m + n_perp
    return out
