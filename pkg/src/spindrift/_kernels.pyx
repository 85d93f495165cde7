# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; see ``_kernels_py`` for the contract."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline void _rhs_at(const double[:, :, ::1] m, Py_ssize_t i, Py_ssize_t j,
                         Py_ssize_t nx, Py_ssize_t ny, double wx, double wy,
                         double* out) noexcept nogil:
    cdef Py_ssize_t ip = i + 1 if i < nx - 1 else nx - 2
    cdef Py_ssize_t im = i - 1 if i > 0 else 1
    cdef Py_ssize_t jp = j + 1 if j < ny - 1 else ny - 2
    cdef Py_ssize_t jm = j - 1 if j > 0 else 1
    cdef double l[3]
    cdef double a[3]
    cdef double b[3]
    cdef int k
    for k in range(3):
        l[k] = (m[k, ip, j] - 2.0 * m[k, i, j] + m[k, im, j]) * wx \
             + (m[k, i, jp] - 2.0 * m[k, i, j] + m[k, i, jm]) * wy
        a[k] = m[k, i, j]
    # b = m x L
    b[0] = a[1] * l[2] - a[2] * l[1]
    b[1] = a[2] * l[0] - a[0] * l[2]
    b[2] = a[0] * l[1] - a[1] * l[0]
    # out = b - m x b
    out[0] = b[0] - (a[1] * b[2] - a[2] * b[1])
    out[1] = b[1] - (a[2] * b[0] - a[0] * b[2])
    out[2] = b[2] - (a[0] * b[1] - a[1] * b[0])


cdef void _rhs(const double[:, :, ::1] m, double[:, :, ::1] out, double hx, double hy) noexcept nogil:
    cdef Py_ssize_t nx = m.shape[1], ny = m.shape[2], i, j
    cdef double wx = 1.0 / (hx * hx), wy = 1.0 / (hy * hy)
    cdef double r[3]
    for i in range(nx):
        for j in range(ny):
            _rhs_at(m, i, j, nx, ny, wx, wy, r)
            out[0, i, j] = r[0]
            out[1, i, j] = r[1]
            out[2, i, j] = r[2]


def llg_rhs(m, double hx, double hy):
    cdef double[:, :, ::1] mv = np.ascontiguousarray(m, dtype=np.float64)
    out = np.empty((3, mv.shape[1], mv.shape[2]))
    cdef double[:, :, ::1] ov = out
    with nogil:
        _rhs(mv, ov, hx, hy)
    return out


def heun_step(m, double dt, double hx, double hy):
    cdef double[:, :, ::1] mv = np.ascontiguousarray(m, dtype=np.float64)
    cdef Py_ssize_t nx = mv.shape[1], ny = mv.shape[2], i, j, k
    k1 = np.empty((3, nx, ny))
    mt = np.empty((3, nx, ny))
    k2 = np.empty((3, nx, ny))
    out = np.empty((3, nx, ny))
    cdef double[:, :, ::1] k1v = k1, mtv = mt, k2v = k2, ov = out
    cdef double norm
    with nogil:
        _rhs(mv, k1v, hx, hy)
        for k in range(3):
            for i in range(nx):
                for j in range(ny):
                    mtv[k, i, j] = mv[k, i, j] + dt * k1v[k, i, j]
        _rhs(mtv, k2v, hx, hy)
        for i in range(nx):
            for j in range(ny):
                for k in range(3):
                    ov[k, i, j] = mv[k, i, j] + 0.5 * dt * (k1v[k, i, j] + k2v[k, i, j])
                norm = sqrt(ov[0, i, j] * ov[0, i, j] + ov[1, i, j] * ov[1, i, j]
                            + ov[2, i, j] * ov[2, i, j])
                for k in range(3):
                    ov[k, i, j] = ov[k, i, j] / norm
    return out


def diffusion_triplets(ax, ay, double hx, double hy):
    cdef const double[:, :, :, ::1] axv = np.ascontiguousarray(ax, dtype=np.float64)
    cdef const double[:, :, :, ::1] ayv = np.ascontiguousarray(ay, dtype=np.float64)
    cdef Py_ssize_t c = axv.shape[0]
    cdef Py_ssize_t nx = axv.shape[2] + 1, ny = axv.shape[3]
    cdef Py_ssize_t N = nx * ny, Ni = (nx - 2) * (ny - 2)
    cdef Py_ssize_t nnz = 5 * c * c * Ni
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    cdef long long[::1] rv = rows, cv = cols
    cdef double[::1] vv = vals
    cdef double wx = 1.0 / (hx * hx), wy = 1.0 / (hy * hy)
    cdef double aE, aW, aN, aS
    cdef Py_ssize_t r, s, i, j, row, base, q = 0
    with nogil:
        for r in range(c):
            for i in range(1, nx - 1):
                for j in range(1, ny - 1):
                    row = r * Ni + (i - 1) * (ny - 2) + (j - 1)
                    for s in range(c):
                        aE = axv[r, s, i, j] * wx
                        aW = axv[r, s, i - 1, j] * wx
                        aN = ayv[r, s, i, j] * wy
                        aS = ayv[r, s, i, j - 1] * wy
                        base = s * N + i * ny + j
                        rv[q] = row; cv[q] = base; vv[q] = aE + aW + aN + aS; q += 1
                        rv[q] = row; cv[q] = base + ny; vv[q] = -aE; q += 1
                        rv[q] = row; cv[q] = base - ny; vv[q] = -aW; q += 1
                        rv[q] = row; cv[q] = base + 1; vv[q] = -aN; q += 1
                        rv[q] = row; cv[q] = base - 1; vv[q] = -aS; q += 1
    return rows, cols, vals


def drift_divergence(ax, ay, n, v1, v2, double hx, double hy):
    cdef const double[:, :, :, ::1] axv = np.ascontiguousarray(ax, dtype=np.float64)
    cdef const double[:, :, :, ::1] ayv = np.ascontiguousarray(ay, dtype=np.float64)
    cdef const double[:, :, ::1] nv = np.ascontiguousarray(n, dtype=np.float64)
    cdef const double[:, ::1] u = np.ascontiguousarray(v1, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(v2, dtype=np.float64)
    cdef Py_ssize_t c = nv.shape[0], nx = nv.shape[1], ny = nv.shape[2]
    out = np.zeros((c, nx, ny))
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t r, s, i, j
    cdef double acc, fe, fw, fn, fs
    cdef double ihx = 1.0 / hx, ihy = 1.0 / hy
    with nogil:
        for r in range(c):
            for i in range(1, nx - 1):
                for j in range(1, ny - 1):
                    acc = 0.0
                    for s in range(c):
                        fe = 0.5 * (nv[s, i, j] * u[i, j] + nv[s, i + 1, j] * u[i + 1, j])
                        fw = 0.5 * (nv[s, i - 1, j] * u[i - 1, j] + nv[s, i, j] * u[i, j])
                        fn = 0.5 * (nv[s, i, j] * w[i, j] + nv[s, i, j + 1] * w[i, j + 1])
                        fs = 0.5 * (nv[s, i, j - 1] * w[i, j - 1] + nv[s, i, j] * w[i, j])
                        acc = acc + (axv[r, s, i, j] * fe - axv[r, s, i - 1, j] * fw) * ihx \
                                  + (ayv[r, s, i, j] * fn - ayv[r, s, i, j - 1] * fs) * ihy
                    ov[r, i, j] = acc
    return out
