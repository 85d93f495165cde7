import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import trapezoid

from spindrift import diagnostics as dg
from spindrift.llg import FrozenMagnetization, constant_profile
from spindrift.materials import MaterialParams, caughey_thomas
from spindrift.mesh import Grid2D
from spindrift.transport import SolverConfig, run_transient


def report(t, h, S0, S1, diss):
    return SimpleNamespace(t=t, h=h, entropy_before=S0, entropy_after=S1, dissipation=diss,
                           inequality_slack=0.0, fp_iters=1, min_n0=1.0, mass=1.0, vmax=0.0)


def test_entropy_examples():
    g = Grid2D(9, 7)
    n = np.random.default_rng(0).normal(size=(4, *g.shape))
    assert dg.entropy(n, n, g) == 0
    d = np.zeros_like(n)
    d[0] = 1.0
    assert abs(dg.entropy(n + d, n, g) - 0.5) <= 1e-12


@given(st.integers(0, 2**32 - 1), st.integers(3, 30), st.integers(3, 30))
def test_entropy_matches_independent_quadrature(seed, nx, ny):
    rng = np.random.default_rng(seed)
    g = Grid2D(nx, ny, 1.7, 0.6)
    n, ref = rng.normal(size=(2, 4, nx, ny))
    sq = np.sum((n - ref) ** 2, axis=0)
    oracle = 0.5 * trapezoid(trapezoid(sq, dx=g.hy, axis=1), dx=g.hx)
    assert dg.entropy(n, ref, g) == pytest.approx(oracle, rel=1e-10)


def test_entropy_of_smooth_field_converges_to_integral():
    # int_0^1 int_0^1 sin^2(pi x) y^2 = 1/6
    g = Grid2D(257, 257)
    f = np.sin(np.pi * g.x) * g.y
    assert dg.entropy(f, np.zeros(g.shape), g) == pytest.approx(1 / 12, rel=1e-4)


@given(st.integers(0, 2**32 - 1), st.permutations(range(4)))
def test_entropy_relabeling_invariance(seed, perm):
    rng = np.random.default_rng(seed)
    g = Grid2D(6, 5)
    n, ref = rng.normal(size=(2, 4, 6, 5))
    assert dg.entropy(n[list(perm)], ref[list(perm)], g) == pytest.approx(dg.entropy(n, ref, g), rel=1e-14)


def test_entropy_shape_mismatch():
    with pytest.raises(ValueError):
        dg.entropy(np.zeros((4, 5, 5)), np.zeros((4, 5, 5)), Grid2D(6, 5))


def test_norms():
    g = Grid2D(129, 129)
    z = dg.norms(np.zeros(g.shape), g)
    assert (z.l2, z.linf, z.h1_semi) == (0, 0, 0)
    g2 = Grid2D(9, 9, 2.0, 0.5)
    c = dg.norms(np.full(g2.shape, 3.0), g2)
    assert c.l2 == pytest.approx(3.0) and c.linf == 3.0 and c.h1_semi == 0
    s = dg.norms(np.sin(np.pi * g.x) * np.sin(np.pi * g.y), g)
    assert s.l2 == pytest.approx(0.5, rel=1e-6)
    assert s.h1_semi == pytest.approx(np.pi / math.sqrt(2), rel=1e-3)
    assert s.linf == pytest.approx(1.0)


def test_vector_norms_sum_components():
    g = Grid2D(17, 17)
    f = np.stack([np.full(g.shape, 3.0), np.full(g.shape, 4.0)])
    assert dg.norms(f, g).l2 == pytest.approx(5.0)
    assert dg.l2_distance(f, np.zeros_like(f), g) == pytest.approx(5.0)


@given(st.integers(0, 2**32 - 1))
def test_discrete_poincare(seed):
    rng = np.random.default_rng(seed)
    g = Grid2D(65, 65)
    coef = rng.normal(size=(5, 5)) / (1 + np.arange(5)[:, None] + np.arange(5)[None, :])
    f = sum(coef[k, l] * np.sin((k + 1) * np.pi * g.x) * np.sin((l + 1) * np.pi * g.y)
            for k in range(5) for l in range(5))
    l2sq = g.integrate(f * f)
    assert l2sq <= 1.05 / (2 * np.pi**2) * dg.dissipation(f, g)


def test_fabricated_report_flagged():
    good = [report(0.1 * k, 0.1, 1.0, 0.99, 0.1) for k in range(1, 4)]
    assert dg.entropy_inequality_monitor(good, 0.5, 0.3).ok
    bad = good + [report(0.4, 0.1, 0.99, 50.0, 0.0)]
    audit = dg.entropy_inequality_monitor(bad, 0.5, 0.3)
    assert [k for k, _ in audit.violations] == [3]
    assert audit.envelope_crossings and not audit.ok


def test_envelope_crossing_without_step_violation():
    # a jump between steps (inconsistent before/after entropies) passes the per-step test
    # but not the integrated bound
    reps = [report(0.1 * k, 0.1, 0.0, 0.02, 0.0) for k in range(1, 30)]
    reps[-1] = report(2.9, 0.1, 3.0, 3.0, 0.0)
    audit = dg.entropy_inequality_monitor(reps, 0.0, 0.3)
    assert not audit.violations and audit.envelope_crossings


def test_gronwall_envelope():
    t = np.array([0.0, 0.5, 1.0])
    env = dg.gronwall_envelope(2.0, t, 0.3, 0.01)
    assert env[0] == pytest.approx(2.0)
    assert env[-1] == pytest.approx(3.0 * math.exp(-math.log(1 - 0.003) / 0.01) - 1)
    assert np.all(np.isinf(dg.gronwall_envelope(1.0, t, 10.0, 0.1)))
    assert np.allclose(dg.gronwall_envelope(1.0, t, 0.0, 0.1), 1.0)


def test_envelope_implied_by_per_step_inequality():
    h, c = 0.05, 0.8
    S = [0.4]
    for _ in range(40):  # worst case allowed by the inequality with zero dissipation
        S.append((S[-1] + h * c) / (1 - h * c))
    t = h * np.arange(len(S))
    env = dg.gronwall_envelope(S[0], t, c, h)
    assert np.allclose(S, env, rtol=1e-12)


def test_pure_diffusion_has_no_violations():
    g = Grid2D(33, 33)
    params = MaterialParams(g, D=0.7, p=0.0, C=2.0)
    n = np.zeros((4, *g.shape))
    n[0] = 1.0
    n[2] = np.sin(np.pi * g.x) * np.sin(2 * np.pi * g.y)
    nD = np.zeros_like(n)
    nD[0] = 1.0
    tr = run_transient(n, FrozenMagnetization(constant_profile(g), g), 0.05, SolverConfig(h=1e-3), params,
                       caughey_thomas(), nD, np.zeros(g.shape))
    for c in (0.0, 0.1, 5.0):
        assert dg.entropy_inequality_monitor(tr.reports, params.c0, c).ok


def test_calibrate_c_is_tight():
    reps = [report(0.1, 0.1, 1.0, 1.1, 0.2), report(0.2, 0.1, 1.1, 1.15, 0.0)]
    c = dg.calibrate_c(reps, 0.5)
    assert dg.entropy_inequality_monitor(reps, 0.5, c).violations == []
    assert dg.entropy_inequality_monitor(reps, 0.5, 0.99 * c).violations


def test_relative_growth_rates():
    t = np.array([0.0, 1.0, 2.0])
    r = dg.relative_growth_rates(np.array([1.0, 2.0, 0.0]), np.array([0.0, 1.0, 1.0]), t)
    assert r[0] == pytest.approx(0.25) and r[1] == 0


def test_csv_roundtrip(tmp_path):
    reps = [report(0.1 * k, 0.1, 1.0 / k, 1.0 / (k + 1), 0.1 * k) for k in range(1, 6)]
    path = tmp_path / "d.csv"
    dg.write_diagnostics_csv(path, reps)
    back = dg.read_diagnostics_csv(path)
    assert list(back) == list(dg.CSV_COLUMNS)
    assert np.array_equal(back["S"], [r.entropy_after for r in reps])
    assert np.array_equal(back["dS_dt_discrete"], [(r.entropy_after - r.entropy_before) / r.h for r in reps])
    assert path.read_text().splitlines()[0] == ",".join(dg.CSV_COLUMNS)
