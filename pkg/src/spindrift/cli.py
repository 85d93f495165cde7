"""Command line entry point and scenario runner.

    spindrift run <config> [--override section.key=value ...]
    spindrift sweep <config> --vary section.key=a,b,c [--vary ...] [--jobs N]
    spindrift verify
"""
from __future__ import annotations

import argparse
import itertools
import math
import os
import re
import subprocess
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, dump_config, load_config, parse_overrides
from .decoupled import DiagState, diag_residual, solve_decoupled_constant_m, source_bound_check
from .diagnostics import (CALIBRATED_C, DiagnosticsWriter, calibrate_c, entropy_inequality_monitor, norms)
from .llg import FrozenMagnetization, LLGStepper, exchange_energy, initial_magnetization
from .materials import MobilityModel
from .mesh import Grid2D, write_snapshot
from .steady_state import decay_analysis, solve_equilibrium, threshold_bisection
from .transport import SnapshotWriter, SolverConfig, TransientError, run_transient

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_FAILURE = 2
EXIT_CONFIG = 3


@dataclass
class RunOutcome:
    status: int
    summary: dict
    outdir: Path


# --- summary files --------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value).replace("\n", " ")


def write_summary(path: Path, summary: dict) -> None:
    with Path(path).open("w") as fh:
        for k, v in summary.items():
            fh.write(f"{k}={_fmt(v)}\n")


def read_summary(path) -> dict:
    """Parse a key=value summary; numbers and booleans are converted back."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or "=" not in line:
            continue
        k, v = line.split("=", 1)
        if v in ("true", "false"):
            out[k] = v == "true"
            continue
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


# --- scenario setup -------------------------------------------------------

def _solver_config(cfg: ScenarioConfig, h: float | None = None) -> SolverConfig:
    s = cfg.section("solver")
    return SolverConfig(h=h or cfg["time.h"], fp_tol=s["fp_tol"], fp_max=s["fp_max"], damping=s["damping"],
                        averaging=s["averaging"], linear_solver=s["linear_solver"],
                        max_halvings=s["max_halvings"])


def _magnetization(cfg: ScenarioConfig, grid: Grid2D):
    llg = cfg.section("llg")
    if llg["profile"] == "constant":
        m0 = initial_magnetization("constant", grid, theta=llg["theta"], phi=llg["phi"])
    else:
        m0 = initial_magnetization("tilt", grid, amplitude=llg["amplitude"], phi=llg["phi"])
    if llg["frozen"]:
        return FrozenMagnetization(m0, grid)
    return LLGStepper(m0, grid, cap_factor=llg["cap_factor"])


def _audit(cfg: ScenarioConfig, params) -> tuple[float, float]:
    c0 = cfg["audit.c0"]
    c = cfg["audit.c"]
    return (params.c0 if c0 is None else c0, CALIBRATED_C if c is None else c)


def _with_vsat(mobility: MobilityModel, vsat: float) -> MobilityModel:
    return MobilityModel(mobility.kind, mobility.mu0, vsat)


def _snapshots(cfg: ScenarioConfig, outdir: Path, grid: Grid2D):
    every = cfg["time.snapshot_every"]
    return SnapshotWriter(outdir / "snapshots", grid, every) if every > 0 else None


def _trace_preserved(traj, nD: np.ndarray, grid: Grid2D) -> bool:
    mask = grid.boundary_mask
    return all(np.array_equal(n[:, mask], nD[:, mask]) for n in traj.states[1:])


def _transient_summary(traj, audit, c0, c, grid: Grid2D, m_path) -> dict:
    reps = traj.reports
    final = norms(traj.final, grid)
    out = {
        "steps": len(reps),
        "t_final": reps[-1].t,
        "S_initial": reps[0].entropy_before,
        "S_final": reps[-1].entropy_after,
        "S_max": max(r.entropy_after for r in reps),
        "min_inequality_slack": min(r.inequality_slack for r in reps),
        "entropy_violations": len(audit.violations),
        "envelope_crossings": len(audit.envelope_crossings),
        "c0": c0,
        "c": c,
        "c_fit": calibrate_c(reps, c0),
        "min_n0": min(r.min_n0 for r in reps),
        "mass_final": reps[-1].mass,
        "vmax": max(r.vmax for r in reps),
        "fp_iters_max": max(r.fp_iters for r in reps),
        "halvings": sum(r.halvings for r in reps),
        "final_l2": final.l2,
        "final_linf": final.linf,
        "final_h1_semi": final.h1_semi,
        "modulus_deviation": m_path.max_modulus_deviation,
    }
    if not m_path.frozen:
        energies = [exchange_energy(m, grid) for m in traj.magnetizations]
        out["exchange_energy_initial"] = energies[0]
        out["exchange_energy_final"] = energies[-1]
    return out


def _run_transient_mode(cfg, outdir, summary, invariants, *, initial=None, nD=None, VD=None, params=None,
                        mobility=None, grid=None, diagnostics_name="diagnostics.csv"):
    grid = grid or cfg.grid
    params = params or cfg.material(grid)
    mobility = mobility or cfg.mobility()
    nD = cfg.field4("boundary", grid) if nD is None else nD
    VD = cfg["boundary.V"].evaluate(grid) if VD is None else VD
    initial = cfg.field4("initial", grid) if initial is None else initial
    m_path = _magnetization(cfg, grid)
    c0, c = _audit(cfg, params)
    with DiagnosticsWriter(outdir / diagnostics_name) as diag:
        traj = run_transient(initial, m_path, cfg["time.T"], _solver_config(cfg), params, mobility, nD, VD,
                             record_every=cfg["time.record_every"], audit=(c0, c), diagnostics=diag,
                             snapshots=_snapshots(cfg, outdir, grid))
    audit = entropy_inequality_monitor(traj.reports, c0, c)
    summary.update(_transient_summary(traj, audit, c0, c, grid, m_path))
    invariants["entropy_inequality"] = audit.ok
    invariants["dirichlet_trace"] = _trace_preserved(traj, nD, grid)
    invariants["finite"] = all(np.all(np.isfinite(n)) for n in traj.states)
    invariants["unit_modulus"] = m_path.max_modulus_deviation <= 1e-12
    return traj, m_path


def _equilibrium(cfg, grid, params, mobility):
    nD = cfg.field4("boundary", grid)
    VD = cfg["boundary.V"].evaluate(grid)
    return solve_equilibrium(params, mobility, nD, VD, form=cfg["run.equilibrium_form"],
                             averaging=cfg["solver.averaging"])


def _equilibrium_report(cfg, outdir, summary, invariants, grid, params, mobility):
    eq = _equilibrium(cfg, grid, params, mobility)
    write_snapshot(outdir / "equilibrium_n0.txt", grid, eq.n0_eq)
    write_snapshot(outdir / "equilibrium_V.txt", grid, eq.V_eq)
    write_snapshot(outdir / "equilibrium_curl.txt", grid, eq.curl_residual)
    summary.update({
        "form": eq.form, "sweeps": eq.sweeps, "flux_residual": eq.flux_residual,
        "curl_norm": eq.curl_norm, "smallness": eq.smallness,
        "n0_min": float(eq.n0_eq.min()), "n0_max": float(eq.n0_eq.max()),
        "V_min": float(eq.V_eq.min()), "V_max": float(eq.V_eq.max()),
    })
    consistency = float(np.max(np.abs(np.exp(eq.u_eq) - eq.n0_eq) / eq.n0_eq))
    summary["log_consistency"] = consistency
    invariants["positive_density"] = bool(np.all(eq.n0_eq > 0))
    invariants["log_consistency"] = consistency <= 1e-12
    return eq


def _mode_equilibrium(cfg, outdir, summary, invariants):
    grid = cfg.grid
    params = cfg.material(grid)
    mobility = cfg.mobility()
    eq = _equilibrium_report(cfg, outdir, summary, invariants, grid, params, mobility)
    if cfg["equilibrium.check_stationary"]:
        ref = eq.state()
        traj, _ = _run_transient_mode(cfg, outdir, summary, invariants, initial=ref, nD=ref, VD=eq.V_eq,
                                      params=params, mobility=mobility, grid=grid)
        drift = max(math.sqrt(grid.integrate(np.sum((n - ref) ** 2, axis=0))) for n in traj.states)
        summary["stationary_drift"] = drift
        invariants["stationary"] = drift <= cfg["equilibrium.stationary_tol"]


def _mode_decay(cfg, outdir, summary, invariants):
    grid = cfg.grid
    params = cfg.material(grid)
    mobility = cfg.mobility()
    eq = _equilibrium_report(cfg, outdir, summary, invariants, grid, params, mobility)
    ref = eq.state()
    initial = ref + cfg.field4("initial", grid)
    initial[:, grid.boundary_mask] = ref[:, grid.boundary_mask]
    traj, _ = _run_transient_mode(cfg, outdir, summary, invariants, initial=initial, nD=ref, VD=eq.V_eq,
                                  params=params, mobility=mobility, grid=grid)
    window = cfg["decay.window"]
    rep = decay_analysis(traj.times, traj.states, eq, grid, window=window)
    if cfg["decay.threshold_bisect"]:
        def decays(vsat):
            mob = _with_vsat(mobility, vsat)
            try:
                e = solve_equilibrium(params, mob, cfg.field4("boundary", grid), cfg["boundary.V"].evaluate(grid),
                                      form=cfg["run.equilibrium_form"])
                r0 = e.state()
                init = r0 + cfg.field4("initial", grid)
                init[:, grid.boundary_mask] = r0[:, grid.boundary_mask]
                tr = run_transient(init, _magnetization(cfg, grid), cfg["time.T"], _solver_config(cfg), params,
                                   mob, r0, e.V_eq, record_every=cfg["time.record_every"])
            except Exception:
                return False
            d = decay_analysis(tr.times, tr.states, e, grid, window=window)
            return d.reliable and d.k2 > 0
        rep.threshold_estimate = threshold_bisection(decays, cfg["decay.vsat_lo"], cfg["decay.vsat_hi"],
                                                     cfg["decay.bisect_iters"])
    summary.update(rep.summary())
    summary["fit_points"] = rep.n_points
    if cfg["decay.require_fit"]:
        invariants["decay_fit"] = bool(rep.reliable and rep.k2 > 0)


def _mode_oracle(cfg, outdir, summary, invariants):
    grid = cfg.grid
    params = cfg.material(grid)
    mobility = cfg.mobility()
    nD = cfg.field4("boundary", grid)
    VD = cfg["boundary.V"].evaluate(grid)
    traj, m_path = _run_transient_mode(cfg, outdir, summary, invariants, nD=nD, VD=VD, params=params,
                                       mobility=mobility, grid=grid)
    m = m_path.m[:, 0, 0]
    dec = solve_decoupled_constant_m(DiagState.from_primal(cfg.field4("initial", grid), m), m, cfg["time.T"],
                                     _solver_config(cfg), params, mobility, DiagState.from_primal(nD, m), VD,
                                     record_every=cfg["time.record_every"])
    if len(dec.times) != len(traj.times) or not np.allclose(dec.times, traj.times, rtol=0, atol=1e-12):
        raise RuntimeError("primal and decoupled output times differ")
    disc = [math.sqrt(grid.integrate(np.sum((a - b) ** 2, axis=0))) for a, b in zip(traj.states, dec.primal())]
    perp = max(float(np.max(np.abs(np.sum(s.n_perp * m[:, None, None], axis=0)))) for s in dec.states)
    summary["oracle_l2_discrepancy"] = max(disc)
    summary["oracle_times"] = len(disc) - 1
    summary["oracle_perp_orthogonality"] = perp
    invariants["oracle_agreement"] = max(disc) <= cfg["oracle.tolerance"]


def _mode_residual(cfg, outdir, summary, invariants):
    grids = cfg["residual.grids"]
    lx, ly = cfg["grid.lx"], cfg["grid.ly"]
    margin = cfg["residual.margin"]
    T = cfg["time.T"]
    h0 = cfg["time.h"]
    hx0 = lx / (grids[0] - 1)
    residuals, steps, worst_ratio, missing = [], [], 0.0, False
    audits_ok, c_fit = True, 0.0
    violations = crossings = 0
    for N in grids:
        grid = Grid2D(N, N, lx, ly)
        params = cfg.material(grid)
        mobility = cfg.mobility()
        h = h0 * (grid.hx / hx0) ** 2
        nsteps = round(T / h)
        h = T / nsteps
        if nsteps < 2:
            raise ValueError("residual audit needs at least two steps on every grid")
        m_path = _magnetization(cfg, grid)
        nD = cfg.field4("boundary", grid)
        VD = cfg["boundary.V"].evaluate(grid)
        scfg = _solver_config(cfg, h)
        tr = run_transient(cfg.field4("initial", grid), m_path, T, scfg, params, mobility, nD, VD)
        c0, c = _audit(cfg, params)
        audit = entropy_inequality_monitor(tr.reports, c0, c)
        audits_ok = audits_ok and audit.ok
        violations += len(audit.violations)
        crossings += len(audit.envelope_crossings)
        c_fit = max(c_fit, calibrate_c(tr.reports, c0))
        m_prev = None if m_path.frozen else tr.magnetizations[-2]
        args = (tr.states[-2], tr.final, m_prev, tr.magnetizations[-1], tr.fields[-1].v, params, h)
        res = diag_residual(*args)
        bound = source_bound_check(*args)
        missing = missing or res.dtm_missing
        r = res.interior_l2(grid, margin)
        residuals.append(r)
        steps.append(h)
        worst_ratio = max(worst_ratio, bound.ratio_plus, bound.ratio_minus, bound.ratio_perp)
        summary[f"residual_N{N}"] = r
        summary[f"h_N{N}"] = h
        summary[f"bound_ratio_N{N}"] = max(bound.ratio_plus, bound.ratio_minus, bound.ratio_perp)
    orders = [math.log(residuals[k] / residuals[k + 1]) / math.log(steps[k] / steps[k + 1])
              for k in range(len(grids) - 1)]
    for k, o in enumerate(orders):
        summary[f"order_h_{grids[k]}_{grids[k + 1]}"] = o
    summary["observed_order_h"] = min(orders)
    summary["observed_order_hx"] = 2 * min(orders)
    summary["bound_ratio_max"] = worst_ratio
    summary["dtm_missing"] = missing
    summary["c_fit"] = c_fit
    summary["entropy_violations"] = violations
    summary["envelope_crossings"] = crossings
    invariants["entropy_inequality"] = audits_ok
    invariants["residual_order"] = min(orders) >= cfg["residual.min_order"]
    invariants["source_domination"] = worst_ratio <= 1.0


MODE_RUNNERS = {
    "transient": lambda cfg, out, s, inv: _run_transient_mode(cfg, out, s, inv),
    "equilibrium": _mode_equilibrium,
    "decay_study": _mode_decay,
    "oracle_compare": _mode_oracle,
    "residual_audit": _mode_residual,
}


def run_scenario(cfg: ScenarioConfig, outdir: str | Path | None = None) -> RunOutcome:
    """Run the configured mode and write its artifacts.

    Always writes ``config.ini`` (the fully expanded configuration) and
    ``summary.txt``; on an exception also ``failure.txt``.  The status is 0
    when every hard invariant held, 1 when one failed, 2 when the run raised.
    """
    outdir = Path(outdir or cfg["output.dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.ini").write_text(dump_config(cfg))
    summary: dict = {"mode": cfg.mode}
    invariants: dict[str, bool] = {}
    try:
        MODE_RUNNERS[cfg.mode](cfg, outdir, summary, invariants)
    except Exception as exc:
        record = {"status": "failed", "mode": cfg.mode, "error_type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, TransientError):
            record["failed_step"] = len(exc.trajectory.reports) + 1
            record["accepted_steps"] = len(exc.trajectory.reports)
            record["cause"] = type(exc.cause).__name__
        record["traceback"] = traceback.format_exc().strip().splitlines()[-1]
        write_summary(outdir / "failure.txt", record)
        summary.update({"status": "failed", "exit_status": EXIT_FAILURE})
        write_summary(outdir / "summary.txt", summary)
        return RunOutcome(EXIT_FAILURE, summary, outdir)
    failed = [k for k, ok in invariants.items() if not ok]
    for k, ok in invariants.items():
        summary[f"invariant_{k}"] = ok
    status = EXIT_OK if not failed else EXIT_INVARIANT
    summary["status"] = "ok" if not failed else "invariant_violated"
    summary["exit_status"] = status
    if failed:
        write_summary(outdir / "failure.txt", {"status": "invariant_violated", "mode": cfg.mode,
                                               "failed_invariants": ",".join(failed)})
    write_summary(outdir / "summary.txt", summary)
    return RunOutcome(status, summary, outdir)


# --- shipped scenarios ----------------------------------------------------

def shipped_scenarios() -> dict[str, Path]:
    root = resources.files("spindrift") / "scenarios"
    return {p.name[:-4]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".ini")}


def resolve_config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    shipped = shipped_scenarios()
    key = name[:-4] if name.endswith(".ini") else name
    if key in shipped:
        return shipped[key]
    raise FileNotFoundError(f"no config file {name!r} and no shipped scenario of that name "
                            f"(shipped: {', '.join(sorted(shipped))})")


# --- commands -------------------------------------------------------------

def _cmd_run(args) -> int:
    try:
        cfg = load_config(resolve_config_path(args.config), parse_overrides(args.override))
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    out = run_scenario(cfg)
    print(f"{cfg.mode}: {out.summary['status']} -> {out.outdir}")
    return out.status


def _slug(overrides: dict[str, str]) -> str:
    return "_".join(re.sub(r"[^A-Za-z0-9.+-]", "-", f"{k}={v}") for k, v in overrides.items())


def _cmd_sweep(args) -> int:
    try:
        path = resolve_config_path(args.config)
        base = parse_overrides(args.override)
        cfg = load_config(path, base)
    except (ConfigError, FileNotFoundError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    axes = []
    for spec in args.vary:
        if "=" not in spec:
            print(f"--vary {spec!r} must look like section.key=a,b,c", file=sys.stderr)
            return EXIT_CONFIG
        key, vals = spec.split("=", 1)
        axes.append([(key.strip(), v.strip()) for v in vals.split(",") if v.strip()])
    root = Path(cfg["output.dir"])
    root.mkdir(parents=True, exist_ok=True)
    jobs = []
    for combo in itertools.product(*axes):
        ov = dict(combo)
        outdir = root / _slug(ov)
        cmd = [sys.executable, "-m", "spindrift", "run", str(path)]
        for k, v in {**base, **ov, "output.dir": str(outdir)}.items():
            cmd += ["--override", f"{k}={v}"]
        jobs.append((ov, outdir, cmd))

    def launch(job):
        ov, outdir, cmd = job
        proc = subprocess.run(cmd, capture_output=True, text=True)
        return ov, outdir, proc.returncode

    with ThreadPoolExecutor(max_workers=args.jobs or os.cpu_count() or 1) as pool:
        results = list(pool.map(launch, jobs))
    lines = []
    for ov, outdir, code in results:
        lines.append(" ".join(f"{k}={v}" for k, v in ov.items()) + f" exit_status={code} dir={outdir}")
    (root / "sweep.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if all(code == 0 for *_, code in results) else EXIT_INVARIANT


def _cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spindrift", description="Spin-polarized drift-diffusion simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config", help="config file or shipped scenario name")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    r.set_defaults(func=_cmd_run)
    s = sub.add_parser("sweep", help="run a parameter sweep, one process per point")
    s.add_argument("config")
    s.add_argument("--vary", action="append", required=True, metavar="KEY=A,B,C")
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--jobs", type=int, default=None)
    s.set_defaults(func=_cmd_sweep)
    v = sub.add_parser("verify", help="run the quick invariant suite")
    v.set_defaults(func=_cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("SPINDRIFT_THREADS")
    if threads:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=int(threads)):
            return args.func(args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
