import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spindrift.decoupled import (DecoupledPreconditionError, DiagState, diag_residual,
                                 solve_decoupled_constant_m, source_bound_check)
from spindrift.field_solver import drift_velocity
from spindrift.llg import FrozenMagnetization, LLGStepper, constant_profile, tilt_profile
from spindrift.materials import MaterialParams, caughey_thomas
from spindrift.mesh import Grid2D
from spindrift.spin_algebra import to_diag
from spindrift.transport import SolverConfig, run_transient


def bump(g, amp=0.2):
    return amp * np.sin(np.pi * g.x / g.lx) * np.sin(np.pi * g.y / g.ly)


def primal_setup(g, p=0.35):
    params = MaterialParams(g, D=1.0 + 0.3 * g.x, p=p, C=2.0 + bump(g), tau=1.5, gamma=0.8, lambdaD=0.6)
    n = np.zeros((4, *g.shape))
    n[0] = 1.0 + bump(g)
    n[1] = 0.1 * np.sin(np.pi * g.x) * g.y
    n[2] = -0.05 * np.cos(np.pi * g.y)
    nD = np.zeros_like(n)
    nD[0] = 1.0
    nD[2] = -0.05 * np.cos(np.pi * g.y)
    return params, n, nD, 0.4 * g.x - 0.1 * g.y


def test_state_roundtrip(rng):
    m = np.array([0.36, 0.48, 0.8])
    n = rng.normal(size=(4, 5, 6))
    s = DiagState.from_primal(n, m)
    assert np.allclose(s.to_primal(m), n, atol=1e-14)
    assert np.array_equal(DiagState.unstack(s.stack()).n_perp, s.n_perp)


@pytest.mark.parametrize("m", [
    lambda g: tilt_profile(g, 0.3),
    lambda g: 1.01 * constant_profile(g),
    lambda g: np.array([1.0, 1.0, 0.0]),
])
def test_precondition_error(m):
    g = Grid2D(7, 7)
    params, n, nD, VD = primal_setup(g)
    with pytest.raises(DecoupledPreconditionError):
        solve_decoupled_constant_m(DiagState.from_primal(n, [0, 0, 1]), m(g), 0.1, SolverConfig(h=0.05),
                                   params, caughey_thomas(), DiagState.from_primal(nD, [0, 0, 1]), VD)


def test_unpolarized_symmetry():
    g = Grid2D(17, 17)
    params = MaterialParams(g, D=1.0 + 0.3 * g.y, p=0.0, C=2.0 + bump(g), tau=1.0, gamma=1.0)
    n = np.zeros((4, *g.shape))
    n[0] = 1.0 + bump(g, 0.3)
    m = np.array([0.0, 0.6, 0.8])
    nD = np.zeros_like(n)
    nD[0] = 1.0
    tr = solve_decoupled_constant_m(DiagState.from_primal(n, m), m, 0.2, SolverConfig(h=0.01), params,
                                    caughey_thomas(), DiagState.from_primal(nD, m), 0.2 * g.x)
    for s in tr.states:
        assert np.max(np.abs(s.n_plus - s.n_minus)) <= 1e-12
        assert np.max(np.abs(s.n_perp)) == 0


@pytest.mark.parametrize("averaging", ["arithmetic", "harmonic"])
def test_dual_path_agreement(averaging):
    g = Grid2D(17, 17)
    params, n, nD, VD = primal_setup(g)
    m = constant_profile(g, 0.9, 0.4)
    md = m[:, 0, 0]
    cfg = SolverConfig(h=5e-3, averaging=averaging)
    mob = caughey_thomas(1.0, 0.8)
    prim = run_transient(n, FrozenMagnetization(m, g), 0.1, cfg, params, mob, nD, VD, record_every=2)
    dec = solve_decoupled_constant_m(DiagState.from_primal(n, md), md, 0.1, cfg, params, mob,
                                     DiagState.from_primal(nD, md), VD, record_every=2)
    assert dec.times == pytest.approx(prim.times)
    for a, b in zip(prim.states, dec.primal()):
        assert math.sqrt(g.integrate(np.sum((a - b) ** 2, axis=0))) <= 1e-6
    for s in dec.states:
        assert np.max(np.abs(np.sum(s.n_perp * md[:, None, None], axis=0))) <= 1e-12


def test_homogeneous_perpendicular_ode():
    g = Grid2D(9, 9, 40.0, 40.0)
    gamma, tau = 1.2, 2.0
    m = np.array([0.0, 0.0, 1.0])
    params = MaterialParams(g, D=1.0, p=0.3, C=2.0, tau=tau, gamma=gamma)
    perp0 = np.array([0.4, -0.1, 0.0])

    def exact(t):
        r = math.exp(-t / tau)
        ang = -2 * gamma * t
        c, s = math.cos(ang), math.sin(ang)
        v = r * np.array([c * perp0[0] - s * perp0[1], s * perp0[0] + c * perp0[1], 0.0])
        return DiagState(np.ones(g.shape), np.ones(g.shape), np.broadcast_to(v[:, None, None], (3, *g.shape)).copy())

    errs = []
    for h in (0.02, 0.01):
        tr = solve_decoupled_constant_m(exact(0), m, 1.0, SolverConfig(h=h), params, caughey_thomas(), exact,
                                        np.zeros(g.shape))
        mod_err = ang_err = 0.0
        for t, s in zip(tr.times, tr.states):
            v = s.n_perp[:, 4, 4]
            mod_err = max(mod_err, abs(np.linalg.norm(v) - np.linalg.norm(perp0) * math.exp(-t / tau)))
            ang = math.atan2(v[1], v[0]) - math.atan2(perp0[1], perp0[0])
            ang_err = max(ang_err, abs((ang + 2 * gamma * t + np.pi) % (2 * np.pi) - np.pi))
            assert np.max(np.abs(s.n_plus - 1)) <= 1e-12
        errs.append((mod_err, ang_err))
    # first order: errors roughly halve
    for k in range(2):
        assert errs[1][k] <= 0.6 * errs[0][k]
        assert errs[0][k] <= 3 * 0.02


def test_pure_heat_flows_are_identical():
    g = Grid2D(17, 17)
    params = MaterialParams(g, D=1.0, p=0.0, C=2.0)
    m = np.array([1.0, 0.0, 0.0])
    nD = DiagState(np.ones(g.shape), np.ones(g.shape), np.zeros((3, *g.shape)))
    # n0 stays 1 = C/2, so the potential and the drift vanish identically
    b = bump(g, 0.3)
    s0 = DiagState(1.0 + b, 1.0 - b, np.zeros((3, *g.shape)))
    tr = solve_decoupled_constant_m(s0, m, 0.1, SolverConfig(h=0.01), params, caughey_thomas(), nD,
                                    np.zeros(g.shape))
    for s in tr.states:
        assert np.max(np.abs(s.n_plus - 1 - (1 - s.n_minus))) <= 1e-13
    assert np.max(np.abs(tr.fields[-1].v)) <= 1e-14
    diff = [g.integrate((s.n_plus - s.n_minus) ** 2) for s in tr.states]
    assert all(b < a for a, b in zip(diff, diff[1:]))


def test_zero_state_zero_residual():
    g = Grid2D(11, 11)
    params, *_ = primal_setup(g)
    z = np.zeros((4, *g.shape))
    m1, m0 = tilt_profile(g, 0.5), tilt_profile(g, 0.4)
    v = drift_velocity(0.3 * g.x, g, caughey_thomas()).v
    r = diag_residual(z, z, m0, m1, v, params, 0.01)
    for f in (r.r_plus, r.r_minus, r.r_perp, r.f_plus, r.f_minus, r.f_perp):
        assert np.all(f == 0)
    assert not r.dtm_missing
    rep = source_bound_check(z, z, m0, m1, v, params, 0.01)
    assert rep.ok and max(rep.ratio_plus, rep.ratio_minus, rep.ratio_perp) == 0


def test_constant_m_sources(rng):
    g = Grid2D(11, 11)
    params, n, *_ = primal_setup(g)
    m = np.array([0.6, 0.0, 0.8])
    v = drift_velocity(0.3 * g.x, g, caughey_thomas()).v
    r = diag_residual(n, n, None, m, v, params, 0.01)
    assert r.dtm_missing
    ndm = np.sum(n[1:] * m[:, None, None], axis=0)
    assert np.allclose(r.f_plus, -ndm / params.tau, atol=1e-14)
    assert np.allclose(r.f_minus, ndm / params.tau, atol=1e-14)
    rep = source_bound_check(n, n, None, m, v, params, 0.01)
    assert rep.c >= 1 / params.tau and rep.ok


def test_constant_m_residual_is_truncation_sized():
    out = []
    for N, h in ((17, 4e-3), (33, 1e-3)):
        g = Grid2D(N, N)
        params, n, nD, VD = primal_setup(g)
        m = constant_profile(g, 0.7, 0.2)
        tr = run_transient(n, FrozenMagnetization(m, g), 0.02, SolverConfig(h=h), params, caughey_thomas(),
                           nD, VD)
        r = diag_residual(tr.states[-2], tr.states[-1], None, m, tr.fields[-1].v, params, h)
        scale = math.sqrt(g.integrate(np.sum(tr.states[-1] ** 2, axis=0)))
        res = r.interior_l2(g, margin=2)
        assert res <= 5 * (h + g.hx**2) * scale
        out.append(res)
    # quartering h and hx^2 should shrink the residual by about four
    assert out[0] / out[1] >= 3.0


@given(st.integers(0, 2**32 - 1))
def test_source_domination_on_random_smooth_states(seed):
    rng = np.random.default_rng(seed)
    g = Grid2D(13, 13)
    a = rng.normal(size=(4, 3))
    n = np.stack([a[k, 0] + a[k, 1] * np.sin(np.pi * g.x) + a[k, 2] * np.cos(2 * g.y) * g.x for k in range(4)])
    n_prev = n * (1 + 0.01 * rng.normal())
    b = rng.normal(size=4) * 0.5
    th1 = b[0] + b[1] * np.cos(np.pi * g.x) * np.cos(np.pi * g.y)
    ph1 = b[2] * g.x + b[3] * g.y
    m = np.stack([np.sin(th1) * np.cos(ph1), np.sin(th1) * np.sin(ph1), np.cos(th1)])
    th0 = th1 + 0.01 * rng.normal() * g.x
    m_prev = np.stack([np.sin(th0) * np.cos(ph1), np.sin(th0) * np.sin(ph1), np.cos(th0)])
    params = MaterialParams(g, D=1 + 0.5 * rng.random() * g.x, p=rng.uniform(-0.8, 0.8) + 0.1 * g.y,
                            C=2.0, tau=rng.uniform(0.2, 5), gamma=rng.uniform(0, 3))
    v = drift_velocity(rng.normal() * g.x * g.y, g, caughey_thomas(1.0, rng.uniform(0.1, 2))).v
    rep = source_bound_check(n_prev, n, m_prev, m, v, params, 0.01)
    assert rep.ok, (rep.ratio_plus, rep.ratio_minus, rep.ratio_perp)


@pytest.fixture(scope="module")
def manufactured():
    sy = pytest.importorskip("sympy")
    x, y, t = sy.symbols("x y t")
    th = 0.3 + 0.4 * x * y + 0.2 * t * sy.cos(y)
    ph = 0.5 * x + 0.3 * y * t
    m = sy.Matrix([sy.sin(th) * sy.cos(ph), sy.sin(th) * sy.sin(ph), sy.cos(th)])
    n = sy.Matrix([1 + 0.2 * sy.sin(sy.pi * x) * sy.cos(sy.pi * y) * sy.exp(-t),
                   0.1 * sy.cos(x + 2 * y) + 0.05 * t,
                   0.1 * sy.sin(2 * x - y) * sy.exp(-t),
                   0.05 * x * y + 0.02 * t])
    V = 0.3 * x + 0.2 * sy.sin(sy.pi * y) * sy.exp(-t) + 0.1 * x * y
    D, p = 1 + 0.2 * x, 0.3 + 0.1 * y
    tau, gam, mu0, vsat = 2.0, 0.7, 1.0, 0.5
    eta = sy.sqrt(1 - p**2)
    gV = [sy.diff(V, x), sy.diff(V, y)]
    mu = mu0 / (1 + mu0 * sy.sqrt(gV[0] ** 2 + gV[1] ** 2) / vsat)
    v = [-mu * gV[0], -mu * gV[1]]
    A = sy.zeros(4, 4)
    A[0, 0] = 1
    for j in range(3):
        A[0, j + 1] = A[j + 1, 0] = -p * m[j]
        for k in range(3):
            A[j + 1, k + 1] = eta * (1 if j == k else 0) + (1 - eta) * m[j] * m[k]
    A = D / eta**2 * A
    cross = n[1:, 0].cross(m)
    Bn = [0] + [2 * gam * cross[j] - n[j + 1] / tau for j in range(3)]
    R = []
    for a in range(4):
        flux = [sum(A[a, b] * (sy.diff(n[b], X) - vv * n[b]) for b in range(4)) for X, vv in ((x, v[0]), (y, v[1]))]
        R.append(sy.diff(n[a], t) - sy.diff(flux[0], x) - sy.diff(flux[1], y) - Bn[a])
    mR = sum(m[i] * R[i + 1] for i in range(3))
    # residual of the primal system, rotated into the diagonal variables
    targets = [R[0] + mR, R[0] - mR] + [R[i + 1] - mR * m[i] for i in range(3)]
    lam = {k: sy.lambdify((x, y, t), e, "numpy") for k, e in
           dict(n=list(n), m=list(m), v=v, target=targets).items()}
    return lam, dict(tau=tau, gamma=gam, mu0=mu0, vsat=vsat)


def _ev(f, X, Y, T):
    return np.stack([np.broadcast_to(np.asarray(a, dtype=float), X.shape) for a in f(X, Y, T)])


def test_manufactured_residual_converges(manufactured):
    lam, c = manufactured
    tk = 0.3
    errs = []
    for N, h in ((17, 4e-3), (33, 1e-3), (65, 2.5e-4)):
        g = Grid2D(N, N)
        X, Y = g.x, g.y
        params = MaterialParams(g, D=1 + 0.2 * X, p=0.3 + 0.1 * Y, C=2.0, tau=c["tau"], gamma=c["gamma"])
        r = diag_residual(_ev(lam["n"], X, Y, tk - h), _ev(lam["n"], X, Y, tk), _ev(lam["m"], X, Y, tk - h),
                          _ev(lam["m"], X, Y, tk), tuple(_ev(lam["v"], X, Y, tk)), params, h)
        T = _ev(lam["target"], X, Y, tk)
        sl = (slice(2, -2), slice(2, -2))
        errs.append(max(np.abs(r.r_plus - T[0])[sl].max(), np.abs(r.r_minus - T[1])[sl].max(),
                        np.abs(r.r_perp - T[2:])[(slice(None), *sl)].max()))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 1.8, (errs, orders)
