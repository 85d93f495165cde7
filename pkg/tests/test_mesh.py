import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spindrift.mesh import (NEUMANN_ZERO, Dirichlet, Grid2D, GridMismatchError, divergence, gradient,
                            laplacian, read_snapshot, write_snapshot)


def observed_order(errors):
    return math.log2(errors[-2] / errors[-1])


def test_grid_geometry():
    g = Grid2D(5, 9, 2.0, 4.0)
    assert g.hx == 0.5 and g.hy == 0.5
    assert g.shape == (5, 9)
    assert g.x[3, 0] == pytest.approx(1.5)
    assert g.y[0, 8] == pytest.approx(4.0)
    assert g.boundary_mask.sum() == 2 * 5 + 2 * 9 - 4
    assert g.n_interior == 3 * 7


@pytest.mark.parametrize("args", [(2, 5), (5, 2), (4.5, 5), (5, 5, 0.0, 1.0), (5, 5, 1.0, -1.0)])
def test_grid_rejects_bad_sizes(args):
    with pytest.raises(ValueError):
        Grid2D(*args)


@given(st.integers(3, 40), st.integers(3, 40), st.floats(0.1, 10), st.floats(0.1, 10))
def test_weights_sum_to_area(nx, ny, lx, ly):
    g = Grid2D(nx, ny, lx, ly)
    assert g.weights.sum() == pytest.approx(lx * ly, rel=1e-13)


def test_check_rejects_wrong_shape_and_nan():
    g = Grid2D(5, 5)
    with pytest.raises(GridMismatchError):
        g.check(np.zeros((4, 5)))
    bad = np.zeros((5, 5))
    bad[2, 2] = np.nan
    with pytest.raises(ValueError):
        g.check(bad)


def test_gradient_of_constant_is_zero():
    g = Grid2D(17, 13)
    gx, gy = gradient(np.full(g.shape, 7.0), g)
    assert np.all(gx == 0) and np.all(gy == 0)


def test_gradient_linear_exact():
    g = Grid2D(33, 33)
    gx, gy = gradient(g.x, g)
    assert np.max(np.abs(gx - 1)) <= 1e-12
    assert np.max(np.abs(gy)) <= 1e-12


def test_gradient_quadratic_exact_including_boundary():
    g = Grid2D(9, 11, 1.5, 2.0)
    f = 3 * g.x**2 - g.x * g.y + 0.5 * g.y**2
    gx, gy = gradient(f, g)
    assert np.allclose(gx, 6 * g.x - g.y, atol=1e-12)
    assert np.allclose(gy, -g.x + g.y, atol=1e-12)


def test_gradient_second_order():
    errs = []
    for N in (17, 33, 65):
        g = Grid2D(N, N)
        f = np.sin(np.pi * g.x) * np.sin(np.pi * g.y)
        gx, gy = gradient(f, g)
        ex = np.pi * np.cos(np.pi * g.x) * np.sin(np.pi * g.y)
        ey = np.pi * np.sin(np.pi * g.x) * np.cos(np.pi * g.y)
        errs.append(max(np.max(np.abs(gx - ex)), np.max(np.abs(gy - ey))))
    assert abs(observed_order(errs) - 2.0) <= 0.15


def test_divergence_examples():
    g = Grid2D(21, 21)
    one = np.ones(g.shape)
    assert np.all(divergence(3 * one, -2 * one, g)[1:-1, 1:-1] == 0)
    d = divergence(g.x, g.y, g)
    assert np.max(np.abs(d[1:-1, 1:-1] - 2)) <= 1e-12


def test_divergence_grid_mismatch():
    g = Grid2D(5, 5)
    with pytest.raises(GridMismatchError):
        divergence(np.zeros((5, 5)), np.zeros((5, 6)), g)
    with pytest.raises(GridMismatchError):
        divergence(np.zeros((6, 6)), np.zeros((6, 6)), g)


@given(st.integers(0, 2**32 - 1), st.integers(8, 30), st.integers(8, 30))
def test_summation_by_parts(seed, nx, ny):
    rng = np.random.default_rng(seed)
    g = Grid2D(nx, ny, 1.0, 1.3)
    inner = np.zeros(g.shape, dtype=bool)
    inner[2:-2, 2:-2] = True
    f = np.where(inner, rng.normal(size=g.shape), 0.0)
    w1 = np.where(inner, rng.normal(size=g.shape), 0.0)
    w2 = np.where(inner, rng.normal(size=g.shape), 0.0)
    gx, gy = gradient(f, g)
    pairing = np.sum(gx * w1 + gy * w2) + np.sum(f * divergence(w1, w2, g))
    assert abs(pairing * g.hx * g.hy) <= 1e-10


def test_laplacian_neumann_examples():
    g = Grid2D(17, 17)
    assert np.max(np.abs(laplacian(np.full(g.shape, 4.2), g, NEUMANN_ZERO))) == 0
    lap = laplacian(g.x, g, NEUMANN_ZERO)
    assert np.max(np.abs(lap[1:-1, :])) <= 1e-12


def test_laplacian_neumann_reflection_of_cosine():
    # cos(pi x) cos(pi y) has zero normal derivative, so the mirrored stencil is second order everywhere
    errs = []
    for N in (17, 33, 65):
        g = Grid2D(N, N)
        f = np.cos(np.pi * g.x) * np.cos(np.pi * g.y)
        errs.append(np.max(np.abs(laplacian(f, g) + 2 * np.pi**2 * f)))
    assert abs(observed_order(errs) - 2.0) <= 0.15


def test_laplacian_dirichlet_order():
    errs = []
    for N in (17, 33, 65):
        g = Grid2D(N, N)
        f = np.sin(np.pi * g.x) * np.sin(np.pi * g.y)
        lap = laplacian(f, g, Dirichlet(np.zeros(g.shape)))
        errs.append(np.max(np.abs(lap + 2 * np.pi**2 * f)[1:-1, 1:-1]))
    assert abs(observed_order(errs) - 2.0) <= 0.15


def test_laplacian_uses_dirichlet_trace():
    g = Grid2D(9, 9)
    trace = g.x**2
    f = np.where(g.boundary_mask, 123.0, g.x**2)
    lap = laplacian(f, g, Dirichlet(trace))
    assert np.allclose(lap, 2.0, atol=1e-9)


def test_laplacian_unknown_boundary_kind():
    g = Grid2D(5, 5)
    with pytest.raises(TypeError):
        laplacian(np.zeros(g.shape), g, "periodic")


@pytest.mark.parametrize("ncomp", [None, 3])
def test_snapshot_roundtrip(tmp_path, rng, ncomp):
    g = Grid2D(7, 5, 1.3, 0.7)
    vals = rng.normal(size=g.shape if ncomp is None else (ncomp, *g.shape))
    path = tmp_path / "snap.txt"
    write_snapshot(path, g, vals)
    g2, back = read_snapshot(path)
    assert g2 == g
    assert np.array_equal(back, vals)
    table = np.loadtxt(path)
    assert table.shape == (g.size, 2 + (1 if ncomp is None else ncomp))
    assert np.array_equal(table[:, 0], g.x.ravel())


def test_snapshot_shape_error(tmp_path):
    with pytest.raises(GridMismatchError):
        write_snapshot(tmp_path / "x.txt", Grid2D(5, 5), np.zeros((4, 4)))
