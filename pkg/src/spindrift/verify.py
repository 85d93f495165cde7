"""Quick invariant checks behind ``spindrift verify`` (a few seconds in total)."""
from __future__ import annotations

import math

import numpy as np

from .decoupled import DiagState, solve_decoupled_constant_m
from .diagnostics import CALIBRATED_C, entropy_inequality_monitor
from .field_solver import solve_poisson
from .llg import FrozenMagnetization, LLGStepper, constant_profile, exchange_energy, modulus_deviation, tilt_profile
from .materials import MaterialParams, caughey_thomas, certify_mobility, constant_saturated
from .mesh import Grid2D
from .spin_algebra import assemble_A, eigenvalues, projectors
from .steady_state import solve_equilibrium
from .transport import SolverConfig, run_transient


def check_spectral(n: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        D = rng.uniform(0.1, 10)
        p = rng.uniform(-0.99, 0.99)
        m = rng.normal(size=3)
        m /= np.linalg.norm(m)
        A = assemble_A(D, p, m)
        ev = np.sort(np.linalg.eigvalsh(A))
        lp, lm, lt = eigenvalues(D, p)
        expected = np.sort([lp, lm, lt, lt])
        worst = max(worst, float(np.max(np.abs(ev - expected)) / ev.max()))
        Pp, Pm, Pt = projectors(m)
        worst = max(worst, float(np.max(np.abs(Pp + Pm + Pt - np.eye(4)))))
    return worst <= 1e-12, f"max eigen/projector defect {worst:.2e} over {n} samples"


def check_mobility():
    worst = []
    for model in (caughey_thomas(1.0, 1.0), constant_saturated(2.0, 0.5)):
        cert = certify_mobility(model)
        worst.append(cert.sup_velocity / model.vsat)
    return True, f"certified; sup s*mu/vsat = {max(worst):.6f}"


def check_poisson():
    errs = []
    for N in (17, 33, 65):
        g = Grid2D(N, N)
        exact = np.sin(np.pi * g.x) * np.sin(np.pi * g.y) + g.x * g.y
        lam = 0.7
        f = lam**2 * 2 * np.pi**2 * np.sin(np.pi * g.x) * np.sin(np.pi * g.y)
        params = MaterialParams(g, D=1.0, p=0.0, C=2.0 - f, lambdaD=lam)
        V = solve_poisson(np.ones(g.shape), params, exact)
        errs.append(float(np.max(np.abs(V - exact))))
    order = math.log2(errs[-2] / errs[-1])
    return abs(order - 2) <= 0.15, f"order {order:.3f}"


def check_llg():
    g = Grid2D(17, 17)
    st = LLGStepper(tilt_profile(g, 0.8), g)
    e = [exchange_energy(st.m, g)]
    for _ in range(20):
        st.advance(1e-3)
        e.append(exchange_energy(st.m, g))
    mono = all(b <= a + 1e-12 for a, b in zip(e, e[1:]))
    dev = modulus_deviation(st.m)
    return mono and dev <= 1e-12, f"| |m|-1 | = {dev:.1e}, energy {e[0]:.4f} -> {e[-1]:.4f}"


def _small_setup(N=9):
    g = Grid2D(N, N)
    params = MaterialParams(g, D=1.0, p=0.4, C=2.0, tau=2.0, gamma=1.0, lambdaD=0.5)
    n = np.zeros((4, *g.shape))
    n[0] = 1.0 + 0.2 * np.sin(np.pi * g.x) * np.sin(np.pi * g.y)
    n[1] = 0.1 * np.sin(np.pi * g.x)
    nD = np.zeros_like(n)
    nD[0] = 1.0
    return g, params, n, nD, 0.2 * g.x


def check_dual_path():
    g, params, n, nD, VD = _small_setup()
    mob = caughey_thomas(1.0, 1.0)
    m = constant_profile(g, 0.5, 0.3)
    cfg = SolverConfig(h=5e-3)
    tr = run_transient(n, FrozenMagnetization(m, g), 0.1, cfg, params, mob, nD, VD, record_every=5)
    md = m[:, 0, 0]
    dec = solve_decoupled_constant_m(DiagState.from_primal(n, md), md, 0.1, cfg, params, mob,
                                     DiagState.from_primal(nD, md), VD, record_every=5)
    d = max(math.sqrt(g.integrate(np.sum((a - b) ** 2, axis=0))) for a, b in zip(tr.states, dec.primal()))
    return d <= 1e-6, f"L2 discrepancy {d:.2e}"


def check_entropy():
    g, params, n, nD, VD = _small_setup()
    tr = run_transient(n, LLGStepper(tilt_profile(g), g), 0.1, SolverConfig(h=5e-3), params,
                       caughey_thomas(1.0, 1.0), nD, VD)
    audit = entropy_inequality_monitor(tr.reports, params.c0, CALIBRATED_C)
    return audit.ok, f"{len(audit.violations)} violations, {len(audit.envelope_crossings)} envelope crossings"


def check_equilibrium():
    g = Grid2D(17, 17)
    params = MaterialParams(g, D=1.0, p=0.3, C=2.0 * (1 + 0.2 * np.sin(np.pi * g.x) * np.sin(np.pi * g.y)),
                            tau=1.0, lambdaD=0.5)
    mob = caughey_thomas(1.0, 0.5)
    eq = solve_equilibrium(params, mob, 1.0, 0.0)
    n = eq.state()
    tr = run_transient(n, FrozenMagnetization(constant_profile(g), g), 0.2, SolverConfig(h=0.02), params,
                       mob, n, eq.V_eq)
    d = max(math.sqrt(g.integrate(np.sum((s - n) ** 2, axis=0))) for s in tr.states)
    return d <= 1e-8, f"{eq.sweeps} Gummel sweeps, drift under transient {d:.1e}"


CHECKS = [
    ("spectral_algebra", check_spectral),
    ("mobility_axioms", check_mobility),
    ("poisson_order", check_poisson),
    ("llg_invariants", check_llg),
    ("dual_path_oracle", check_dual_path),
    ("entropy_inequality", check_entropy),
    ("equilibrium_stationary", check_equilibrium),
]


def run_all():
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
