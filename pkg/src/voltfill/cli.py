"""Command-line interface.

Subcommands:
  pf        solve the power flow and export the operating point
  lin       export the linearized-model accuracy report
  estimate  run one seeded estimation described by a scenario config
  bench     reproduce the benchmark protocols (fig2 | fig3 | fig4)
  ts        run the time-series / data-loss protocol

Every command writes delimited output (and, for the benchmark and
time-series paths, rendered figures) under --out, and appends a JSON
line with the fully resolved configuration and its content hash to
run_log.jsonl there.  Exit codes: 0 success, 1 input error, 2 completion
not converged (only with --strict).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, cases, config, dmatrix, linear, report, wls
from .network import CaseError, build_admittance
from .powerflow import PowerFlowError, solve_power_flow


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", default="case33",
                        help="bundled case name (case33, case33-raw) or a "
                             "case file path (default: case33)")
    common.add_argument("--out", default="out",
                        help="output directory (default: ./out)")
    common.add_argument("--strict", action="store_true",
                        help="exit with code 2 when the completion solver "
                             "reports non-convergence")

    top = argparse.ArgumentParser(
        prog="voltfill",
        description="Distribution feeder voltage estimation from partial "
                    "sensor data via structured matrix completion.")
    sub = top.add_subparsers(dest="command", required=True)

    sub.add_parser("pf", parents=[common],
                   help="solve and export the operating point")
    sub.add_parser("lin", parents=[common],
                   help="export the linearization accuracy report")

    est = sub.add_parser("estimate", parents=[common],
                         help="one seeded estimation run")
    est.add_argument("--scenario", required=True,
                     help="scenario config file (key = value lines)")
    est.add_argument("--solver", help="solver config file")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--estimator", choices=("mc", "wls"), default="mc")

    bn = sub.add_parser("bench", parents=[common],
                        help="benchmark protocol sweeps")
    bn.add_argument("figure", choices=("fig2", "fig3", "fig4"))
    bn.add_argument("--runs", type=int, default=50)
    bn.add_argument("--seed", type=int, default=None,
                    help="base seed (defaults: fig2 1000, fig3 2000, "
                         "fig4 3000)")
    bn.add_argument("--solver", help="solver config file overriding the "
                                     "benchmark defaults")

    ts = sub.add_parser("ts", parents=[common],
                        help="time-series / data-loss protocol")
    ts.add_argument("--availability", type=float, default=0.5)
    ts.add_argument("--loss", type=float, default=0.2)
    ts.add_argument("--steps", type=int, default=120)
    ts.add_argument("--seed", type=int, default=0)
    ts.add_argument("--solver", help="solver config file")
    return top


def _solver_cfg(args, resolved):
    """Resolve the completion config: explicit file > benchmark defaults."""
    if getattr(args, "solver", None):
        text = Path(args.solver).read_text()
        cfg = config.solver_from_config(text)
    else:
        cfg = bench.bench_solver_config()
    resolved["solver"] = {
        "delta": "auto" if cfg.delta is None else cfg.delta,
        "weights": cfg.weights or {},
        "residual_norm": cfg.residual_norm, "rho": cfg.rho,
        "max_iter": cfg.max_iter, "tol_primal": cfg.tol_primal,
        "tol_dual": cfg.tol_dual, "standardize": cfg.standardize}
    return cfg


def _log(args, resolved, outputs):
    body = json.dumps(resolved, sort_keys=True, default=str)
    digest = config.config_digest([body])
    path = Path(args.out) / "run_log.jsonl"
    config.append_run_log(path, command=" ".join(sys.argv[1:]),
                          digest=digest, outputs=outputs,
                          extra={"resolved": resolved})


def _finish(paths):
    for p in paths:
        print(f"wrote {p}")


def _cmd_pf(args):
    net = cases.load_case(args.case)
    sol = solve_power_flow(net)
    out = report.write_csv(Path(args.out) / "pf_state.csv",
                           report.solved_state_rows(net, sol))
    vm = sol.vmag
    print(f"{net.name}: {net.n_bus} buses, {len(net.branches)} branches; "
          f"|v| in [{vm.min():.4f}, {vm.max():.4f}] p.u., "
          f"{sol.iterations} iterations, mismatch {sol.mismatch:.2e}")
    _log(args, {"case": args.case}, [out])
    _finish([out])
    return 0


def _cmd_lin(args):
    net = cases.load_case(args.case)
    sol = solve_power_flow(net)
    model = linear.build_linear_model(build_admittance(net),
                                      net.slack_voltage)
    s_inj = np.array([b.generation - b.load for b in net.buses[1:]])
    predicted, _ = linear.predict_voltages(model, s_inj)
    rows = report.linearization_rows(net, sol, model, predicted)
    out = report.write_csv(Path(args.out) / "lin_report.csv", rows)
    worst = max(r["vmag_err_pct"] for r in rows)
    print(f"linearized |v| max error {worst:.4f}% over {len(rows)} buses")
    _log(args, {"case": args.case}, [out])
    _finish([out])
    return 0


def _cmd_estimate(args):
    net = cases.load_case(args.case)
    scenario_text = Path(args.scenario).read_text()
    scenario = config.scenario_from_config(scenario_text)
    resolved = {"case": args.case, "seed": args.seed,
                "estimator": args.estimator,
                "scenario": scenario_text.strip().splitlines()}
    cfg = _solver_cfg(args, resolved)
    ctx = bench.FeederContext.build(net)
    record = bench.estimate_once(ctx, scenario, args.seed, cfg=cfg,
                                 estimator=args.estimator)
    if record.failed:
        print(f"estimation failed: {record.error}", file=sys.stderr)
        _log(args, resolved, [])
        return 1
    out = report.write_csv(Path(args.out) / "estimate_state.csv",
                           report.estimate_rows(record))
    summary = report.write_csv(Path(args.out) / "estimate_summary.csv",
                               [record.row()])
    print(f"{record.scenario} seed {record.seed}: magnitude MAPE "
          f"{record.magnitude_mape:.4f}%, angle MAE "
          f"{record.angle_mae:.4f} deg "
          f"({'converged' if record.diagnostics.get('converged') else 'not converged'})")
    _log(args, resolved, [out, summary])
    _finish([out, summary])
    if args.strict and not record.diagnostics.get("converged", True):
        return 2
    return 0


def _strict_cells(args, cells):
    bad = sum(1 for c in cells for r in c.runs
              if not r.failed and not r.diagnostics.get("converged", True))
    if bad and args.strict:
        print(f"{bad} runs did not converge", file=sys.stderr)
        return 2
    return 0


def _cmd_bench(args):
    net = cases.load_case(args.case)
    ctx = bench.FeederContext.build(net)
    out_dir = Path(args.out)
    resolved = {"case": args.case, "figure": args.figure, "runs": args.runs}
    cfg = _solver_cfg(args, resolved)

    if args.figure == "fig2":
        seed0 = 1000 if args.seed is None else args.seed
        resolved["seed0"] = seed0
        sweep = bench.availability_sweep(ctx, runs=args.runs, seed0=seed0,
                                         cfg=cfg)
        outputs = [
            report.write_csv(out_dir / "fig2.csv", sweep.rows()),
            report.write_csv(out_dir / "fig2_runs.csv", sweep.run_rows()),
            report.render_availability_figure(sweep, out_dir / "fig2.png"),
        ]
        code = _strict_cells(args, sweep.cells)
    elif args.figure == "fig3":
        seed0 = 2000 if args.seed is None else args.seed
        resolved["seed0"] = seed0
        sweep = bench.scenario_sweep(ctx, runs=args.runs, seed0=seed0,
                                     cfg=cfg)
        outputs = [
            report.write_csv(out_dir / "fig3.csv", sweep.rows()),
            report.write_csv(out_dir / "fig3_runs.csv", sweep.run_rows()),
            report.render_scenario_figure(sweep, out_dir / "fig3.png"),
        ]
        code = _strict_cells(args, sweep.cells)
    else:
        seed0 = 3000 if args.seed is None else args.seed
        resolved["seed0"] = seed0
        rows = bench.augmentation_comparison(ctx, runs=args.runs,
                                             seed0=seed0, cfg=cfg)
        outputs = [
            report.write_csv(out_dir / "fig4.csv", rows),
            report.render_augmentation_figure(rows, out_dir / "fig4.png"),
        ]
        code = 0
    for cell_row in (sweep.rows() if args.figure in ("fig2", "fig3")
                     else rows[:0]):
        print({k: (round(v, 4) if isinstance(v, float) else v)
               for k, v in cell_row.items()})
    _log(args, resolved, outputs)
    _finish(outputs)
    return code


def _cmd_ts(args):
    net = cases.load_case(args.case)
    ctx = bench.FeederContext.build(net)
    resolved = {"case": args.case, "availability": args.availability,
                "loss": args.loss, "steps": args.steps, "seed": args.seed}
    cfg = _solver_cfg(args, resolved)
    records = bench.run_timeseries(
        ctx, availability=args.availability, loss=args.loss,
        steps=args.steps, cfg=cfg, seed=args.seed)
    out_dir = Path(args.out)
    outputs = [
        report.write_csv(out_dir / "ts.csv", [r.row() for r in records]),
        report.render_timeseries_figure(records, out_dir / "ts.png"),
    ]
    deltas = [r.magnitude_mape - r.ref_magnitude_mape for r in records]
    within = sum(1 for d in deltas if d <= 1.0)
    print(f"{len(records)} steps; paired MAPE delta median "
          f"{np.median(deltas):+.3f} pt, within +1.0 pt at "
          f"{within}/{len(records)} steps")
    _log(args, resolved, outputs)
    _finish(outputs)
    return 0


_COMMANDS = {"pf": _cmd_pf, "lin": _cmd_lin, "estimate": _cmd_estimate,
             "bench": _cmd_bench, "ts": _cmd_ts}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CaseError, config.ConfigError, PowerFlowError,
            wls.UnobservableError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
