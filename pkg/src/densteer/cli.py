"""Command line entry point and run orchestration.

    densteer solve CONFIG [--out DIR]
    densteer sweep CONFIG --param lambda --values 1,5,20,100 [--out DIR]
    densteer validate CONFIG
    densteer mc CONFIG [--paths N] [--seed S] [--out DIR]

Exit status: 0 on success, 2 when the config is invalid, 3 when the solver
stops without converging (artifacts are still written) or fails outright
(report.json then carries ``"partial": true``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import model
from .config import ConfigError, ExperimentConfig, load_config, with_override
from .montecarlo import ks_distance, simulate_paths
from .numerics import integrate
from .optimizer import SolveReport, optimize

log = logging.getLogger(__name__)

SCHEMA = "# densteer-schema v1"
EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path: Path, columns: dict):
    """Write equal-length columns with the schema header; floats as shortest round-trip repr."""
    names = list(columns)
    data = [np.asarray(columns[n]).ravel() for n in names]
    lines = [SCHEMA, ",".join(names)]
    for row in zip(*data):
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _has_p(cfg):
    return isinstance(cfg.cost, model.QuadraticShift)


def _has_q(cfg):
    return isinstance(cfg.cost, model.CashInputPiecewise)


def write_artifacts(cfg: ExperimentConfig, report: SolveReport, out: Path, mc_summary=None):
    out.mkdir(parents=True, exist_ok=True)
    grid = report.grid
    x = grid.x
    (out / "config_echo.json").write_text(json.dumps(cfg.materialized, indent=2, sort_keys=True) + "\n")

    cols = {"x": x, "rho1": report.rho1, "target": report.target}
    if _has_p(cfg):
        cols["p1"] = report.p_trajectory.terminal
    if _has_q(cfg):
        cols["q1"] = report.q_trajectory.terminal
    write_csv(out / "terminal_densities.csv", cols)

    snap = out / "density_snapshots"
    snap.mkdir(exist_ok=True)
    for t in cfg.snapshot_times:
        n = int(round(t * grid.N))
        cols = {"t": np.full(grid.M, n * grid.dt), "x": x, "rho": report.rho_trajectory.values[n]}
        if _has_p(cfg):
            cols["p"] = report.p_trajectory.values[n]
        if _has_q(cfg):
            cols["q"] = report.q_trajectory.values[n]
        write_csv(snap / f"t_{n * grid.dt:.4f}.csv", cols)

    t = np.repeat(grid.t[:-1], grid.M)
    write_csv(
        out / "controls.csv",
        {"t": t, "x": np.tile(x, grid.N), "B_star": report.controls.B, "A_star": report.controls.A},
    )
    rows = report.iterations
    write_csv(
        out / "convergence.csv",
        {k: [r[k] for r in rows] for k in ("iter", "V_tilde", "grad_inf_norm", "step")},
    )
    summary = report_summary(report)
    if mc_summary is not None:
        summary["montecarlo"] = mc_summary
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def report_summary(report: SolveReport) -> dict:
    return {
        "dual_value": report.dual_value,
        "V_tilde": report.V_tilde,
        "primal_cost": report.primal_cost,
        "duality_gap": report.duality_gap,
        "penalty_value": report.penalty_value if np.isfinite(report.penalty_value) else None,
        "l2_distance": report.l2_distance,
        "expected_saving": report.cash.expected_saving,
        "expected_input": report.cash.expected_input,
        "termination_reason": report.termination_reason,
        "outer_iterations": len(report.iterations),
        "diagnostics": report.diagnostics,
    }


def run_montecarlo(cfg: ExperimentConfig, report: SolveReport, n_paths=None, seed=None) -> dict:
    n_paths = cfg.montecarlo.n_paths if n_paths is None else n_paths
    seed = cfg.montecarlo.seed if seed is None else seed
    ens = simulate_paths(report.controls, cfg.x0, n_paths, seed, cfg.grid, cfg.market)
    c_mean, c_se = ens.mean_saving()
    i_mean, i_se = ens.mean_input()
    return {
        "n_paths": n_paths,
        "seed": seed,
        "ks_distance": ks_distance(ens.terminal_wealth, report.rho1, cfg.grid),
        "mean_saving": c_mean,
        "mean_saving_se": c_se,
        "mean_input": i_mean,
        "mean_input_se": i_se,
        "clamp_fraction": ens.clamp_fraction,
    }


def _out_dir(cfg, override):
    if override is not None:
        return Path(override)
    return Path(cfg.output_dir) if cfg.output_dir else Path("runs") / cfg.name


def run_experiment(cfg: ExperimentConfig, out_dir=None, montecarlo=None) -> SolveReport:
    """Solve, optionally simulate, and write every artifact; returns the report."""
    report = optimize(cfg.problem())
    mc_on = cfg.montecarlo.enabled if montecarlo is None else montecarlo
    mc = run_montecarlo(cfg, report) if mc_on else None
    out = _out_dir(cfg, out_dir)
    write_artifacts(cfg, report, out, mc)
    log.info(
        "%s: %s after %d iterations, L2 distance %.3e", cfg.name, report.termination_reason,
        len(report.iterations), report.l2_distance,
    )
    return report


def sweep(cfg: ExperimentConfig, param: str, values, out_dir=None) -> list:
    """One run per value; writes sweep_summary.csv and per-value run directories."""
    out = _out_dir(cfg, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        try:
            sub = with_override(cfg, param, v)
            rep = run_experiment(sub, out / f"{param}_{v:g}", montecarlo=False)
            rows.append(
                {
                    "value": v,
                    "l2_distance": rep.l2_distance,
                    "dual_value": rep.dual_value,
                    "expected_input": rep.cash.expected_input,
                    "expected_saving": rep.cash.expected_saving,
                    "converged": 1.0 if rep.termination_reason == "converged" else 0.0,
                }
            )
        except (ConfigError, ArithmeticError, RuntimeError, ValueError) as exc:
            log.error("%s = %g failed: %s", param, v, exc)
            rows.append({"value": v, "l2_distance": np.nan, "dual_value": np.nan,
                         "expected_input": np.nan, "expected_saving": np.nan, "converged": 0.0})
    keys = ("value", "l2_distance", "dual_value", "expected_input", "expected_saving", "converged")
    write_csv(out / "sweep_summary.csv", {k: [r[k] for r in rows] for k in keys})
    return rows


def _values(text):
    if not text.strip():
        return []
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}") from exc


def build_parser():
    p = argparse.ArgumentParser(prog="densteer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve one config and write artifacts")
    s.add_argument("config")
    s.add_argument("--out")
    s = sub.add_parser("sweep", help="solve once per parameter value")
    s.add_argument("config")
    s.add_argument("--param", required=True, choices=("lambda", "K"))
    s.add_argument("--values", required=True)
    s.add_argument("--out")
    s = sub.add_parser("validate", help="check a config and print it with defaults")
    s.add_argument("config")
    s = sub.add_parser("mc", help="solve, then cross-check by path simulation")
    s.add_argument("config")
    s.add_argument("--paths", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(json.dumps(cfg.materialized, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "sweep":
            rows = sweep(cfg, args.param, _values(args.values), args.out)
            for r in rows:
                print(f"{args.param}={r['value']:g}  L2={r['l2_distance']:.4e}  input={r['expected_input']:.4e}")
            return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NONCONVERGED
        if args.command == "mc":
            report = optimize(cfg.problem())
            mc = run_montecarlo(cfg, report, args.paths, args.seed)
            write_artifacts(cfg, report, _out_dir(cfg, args.out), mc)
            print(json.dumps(mc, indent=2, sort_keys=True))
        else:
            report = run_experiment(cfg, args.out)
        print(f"{cfg.name}: {report.termination_reason}, L2 distance {report.l2_distance:.4e}, "
              f"gap {report.duality_gap:.3e}")
        return EXIT_OK if report.termination_reason == "converged" else EXIT_NONCONVERGED
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        out = _out_dir(cfg, getattr(args, "out", None))
        flag_failure(out, exc)
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


def flag_failure(out: Path, exc):
    """Mark a run directory whose artifacts are missing or partial."""
    out.mkdir(parents=True, exist_ok=True)
    info = {"termination_reason": "error", "error": f"{type(exc).__name__}: {exc}", "partial": True}
    (out / "report.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
