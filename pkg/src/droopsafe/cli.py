"""Command-line entry point.

Exit codes: 0 success, 1 verification/synthesis failure, 2 config or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, ProjectConfig, example_path, load_config
from .barrier import PolicyHypothesisError
from .grid import NetworkError, PowerFlowError
from .sim import integrate, monte_carlo
from .sos import NotFound

log = logging.getLogger("droopsafe")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class CommandFailed(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="project config (default: the shipped example)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--inverter", type=int, default=None,
                        help="inverter index (0 is the reference inverter)")
    common.add_argument("--beta", type=float, default=None, help="override beta_max")
    common.add_argument("--gamma", type=float, default=None, help="override gamma")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="droopsafe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("powerflow", parents=[common], help="solve the equilibrium")
    sub.add_parser("synth", parents=[common], help="synthesize and verify certificates")
    sub.add_parser("bounds", parents=[common], help="export input-bound fields")
    sp = sub.add_parser("simulate", parents=[common], help="run one scenario")
    sp.add_argument("scenario", nargs="?", default=None)
    sp.add_argument("--filter", choices=("on", "off"), default=None)
    sw = sub.add_parser("sweep", parents=[common], help="paired Monte-Carlo runs, filter on/off")
    sw.add_argument("--runs", type=int, default=None)
    sub.add_parser("export-plots", parents=[common], help="write gnuplot scripts")
    return p


def _load(args) -> tuple[ProjectConfig, Path]:
    cfg = load_config(args.config if args.config is not None else example_path())
    cfg = cfg.with_overrides(args.seed, args.beta, args.gamma)
    return cfg, pipeline.outdir(cfg, args.out)


def _inverters(args, n: int) -> list[int]:
    if args.inverter is None:
        return list(range(n))
    if not 0 <= args.inverter < n:
        raise ConfigError(f"--inverter must lie in [0, {n - 1}]")
    return [args.inverter]


def _ensure_equilibrium(cfg, out) -> None:
    if not (out / "equilibrium.json").is_file():
        cmd_powerflow(cfg, out)


def cmd_powerflow(cfg: ProjectConfig, out: Path) -> int:
    eq, red = pipeline.run_powerflow(cfg)
    path = pipeline.write_json(out / "equilibrium.json", cfg, pipeline.equilibrium_json(eq, red))
    print(f"power flow converged in {eq.iterations} iterations, residual {eq.residual:.3e}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_synth(cfg: ProjectConfig, out: Path) -> int:
    _ensure_equilibrium(cfg, out)
    dec = pipeline.decomposition(cfg, out)
    try:
        res = pipeline.synthesize(cfg, dec)
    except NotFound as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        for entry in exc.log:
            print(f"  round {entry.round} {entry.step}: {entry.status} margin {entry.margin:.3g}",
                  file=sys.stderr)
        return EXIT_FAIL
    for p in pipeline.write_synthesis(cfg, out, res):
        print(f"wrote {p}")
    for row in res.verification["inverters"]:
        state = "pass" if row["passed"] and row["unsafe_passed"] else "FAIL"
        print(f"inverter {row['inverter']}: {state} (level-set margin {row['margin']:.4g}, "
              f"max B on unsafe samples {row['unsafe_max_B']:.4g})")
    if not res.passed:
        print("verification failed", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _load_filters(cfg, out):
    dec = pipeline.decomposition(cfg, out)
    certs, pols = pipeline.load_synthesis(cfg, out, dec.n)
    return dec, certs, pipeline.build_filters(cfg, dec, certs, pols)


def bounds_csv(cfg: ProjectConfig, filt, combos) -> str:
    b = cfg.bounds
    ws = np.linspace(b.w_range[0], b.w_range[1], b.points[0])
    vs = np.linspace(b.v_range[0], b.v_range[1], b.points[1])
    W, V = np.meshgrid(ws, vs, indexing="ij")
    grid = np.column_stack([W.ravel(), V.ravel()])
    buf = io.StringIO()
    buf.write(pipeline.csv_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", "gamma", "w", "v", "B", "in_domain", "ua_p", "ut_p", "ua_q", "ut_q",
                "zero_safe_p", "zero_safe_q"])
    Bv = filt.cert.value(grid)
    for beta, gamma in combos:
        filt.beta_max, filt.gamma = beta, gamma
        bd = filt.bounds(grid)
        for k, (x, y) in enumerate(grid):
            ua, ut = bd.u_alpha[k], bd.u_theta[k]
            w.writerow([repr(beta), repr(gamma), repr(float(x)), repr(float(y)), repr(float(Bv[k])),
                        int(Bv[k] >= filt.cert.c), repr(float(ua[0])), repr(float(ut[0])),
                        repr(float(ua[1])), repr(float(ut[1])), int(ua[0] <= 0 <= ut[0]),
                        int(ua[1] <= 0 <= ut[1])])
    return buf.getvalue()


def cmd_bounds(cfg: ProjectConfig, out: Path, args) -> int:
    dec, certs, filters = _load_filters(cfg, out)
    if args.beta is not None or args.gamma is not None:
        combos = [(cfg.filter.beta_max, cfg.filter.gamma)]
    else:
        combos = [(float(bt), 0.0) for bt in cfg.bounds.betas]
        combos += [(1.0, float(g)) for g in cfg.bounds.gammas if (1.0, float(g)) not in combos]
    logging.getLogger("droopsafe.safety_filter").setLevel(logging.ERROR)
    for i in _inverters(args, dec.n):
        path = out / "bounds" / f"inverter_{i}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(bounds_csv(cfg, filters[i], combos))
        print(f"wrote {path}")
    return EXIT_OK


def _scenario(cfg, name, filter_flag):
    if not cfg.scenarios:
        raise ConfigError("config defines no scenarios")
    name = name or next(iter(cfg.scenarios))
    if name not in cfg.scenarios:
        raise ConfigError(f"unknown scenario {name!r}; known: {sorted(cfg.scenarios)}")
    sc = replace(cfg.scenarios[name], seed=cfg.seed)
    if filter_flag is not None:
        sc.filter_on = filter_flag == "on"
    return sc


def cmd_simulate(cfg: ProjectConfig, out: Path, args) -> int:
    dec, certs, filters = _load_filters(cfg, out)
    sc = _scenario(cfg, args.scenario, args.filter)
    tr = integrate(dec, certs, filters, sc)
    tag = f"{sc.name}_{'on' if sc.filter_on else 'off'}"
    path = out / "sim" / f"{tag}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(tr.to_csv(pipeline.csv_header(cfg)))
    summary = {"scenario": sc.name, "filter_on": sc.filter_on, "steps": sc.steps,
               "step": sc.step, "min_B": tr.min_B.tolist(),
               "unsafe_steps": tr.violations.tolist(), "active_steps": tr.active_steps.tolist(),
               "no_guarantee_steps": tr.no_guarantee_steps.tolist(), "blown_step": tr.blown_step,
               "trace_sha256": tr.digest()}
    spath = pipeline.write_json(out / "sim" / f"{tag}.summary.json", cfg, summary)
    print(f"wrote {path}\nwrote {spath}")
    print(f"unsafe steps per inverter {tr.violations.tolist()}, "
          f"min B {np.round(tr.min_B, 4).tolist()}")
    if sc.filter_on and (tr.violated or tr.blown_step >= 0):
        print("safety violation with the filter on", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_sweep(cfg: ProjectConfig, out: Path, args) -> int:
    dec, certs, filters = _load_filters(cfg, out)
    runs = args.runs if args.runs is not None else cfg.sweep.runs
    if runs < 1:
        raise ConfigError("--runs must be >= 1")
    summary = {"scenario": cfg.sweep.scenario, "runs": runs}
    status = EXIT_OK
    for flag in ("off", "on"):
        sc = _scenario(cfg, cfg.sweep.scenario, flag)
        res = monte_carlo(dec, certs, filters, sc, runs, seed=cfg.seed)
        path = out / "sweep" / f"{sc.name}_{flag}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(res.to_csv(pipeline.csv_header(cfg)))
        summary[flag] = {"violation_runs": res.violation_runs,
                         "min_B": res.min_B.min(axis=0).tolist(),
                         "mean_duty": res.duty.mean(axis=0).tolist(),
                         "blown_runs": int(np.sum(res.blown >= 0))}
        print(f"filter {flag}: {res.violation_runs}/{runs} runs with violations, "
              f"min B {np.round(res.min_B.min(axis=0), 4).tolist()}")
        if flag == "on" and (res.violation_runs or np.any(res.blown >= 0)):
            status = EXIT_FAIL
    print(f"wrote {pipeline.write_json(out / 'sweep' / 'summary.json', cfg, summary)}")
    return status


GNUPLOT_BOUNDS = """# input bounds for inverter {i}; data: {data}
set datafile separator ","
set terminal pngcairo size 1200,400
set output "{png}"
set multiplot layout 1,3
set xlabel "v"; set ylabel "w"
set title "u_q width, gamma = 0 (beta sweep)"
plot for [b in "{betas}"] "{data}" using ($1==b+0 && $2==0 ? $4 : 1/0):($1==b+0 && $2==0 ? $10-$9 : 1/0) with lines title "beta=".b
set title "u_q width, beta = 1 (gamma sweep)"
plot for [g in "{gammas}"] "{data}" using ($1==1 && $2==g+0 ? $4 : 1/0):($1==1 && $2==g+0 ? $10-$9 : 1/0) with lines title "gamma=".g
set title "u_q = 0 admissible"
plot for [g in "{gammas}"] "{data}" using ($1==1 && $2==g+0 && $12==1 ? $4 : 1/0):3 with points title "gamma=".g
unset multiplot
"""

GNUPLOT_SIM = """# voltage trajectories; data: {data}
set datafile separator ","
set terminal pngcairo size 900,600
set output "{png}"
set xlabel "t [s]"; set ylabel "v [p.u. deviation]"
set arrow from graph 0, first {lo} to graph 1, first {lo} nohead dt 2
set arrow from graph 0, first {hi} to graph 1, first {hi} nohead dt 2
plot for [i=0:{last}] "{data}" using ($2==i ? $1 : 1/0):5 with lines title "inverter ".i
"""


def cmd_export_plots(cfg: ProjectConfig, out: Path, args) -> int:
    plots = out / "plots"
    written = []
    bounds = sorted((out / "bounds").glob("inverter_*.csv"))
    sims = sorted((out / "sim").glob("*.csv"))
    if not bounds and not sims:
        raise FileNotFoundError(f"no bounds or simulation data under {out}; "
                                "run 'bounds' or 'simulate' first")
    plots.mkdir(parents=True, exist_ok=True)
    betas = " ".join(repr(float(b)) for b in cfg.bounds.betas)
    gammas = " ".join(repr(float(g)) for g in cfg.bounds.gammas)
    for data in bounds:
        i = data.stem.split("_")[1]
        script = plots / f"bounds_{i}.gp"
        script.write_text(pipeline.csv_header(cfg) + GNUPLOT_BOUNDS.format(
            i=i, data=data.resolve(), png=(plots / f"bounds_{i}.png").resolve(),
            betas=betas, gammas=gammas))
        written.append(script)
    n = len(cfg.inverters)
    for data in sims:
        script = plots / f"sim_{data.stem}.gp"
        script.write_text(pipeline.csv_header(cfg) + GNUPLOT_SIM.format(
            data=data.resolve(), png=(plots / f"sim_{data.stem}.png").resolve(),
            lo=cfg.unsafe.v_low, hi=cfg.unsafe.v_high, last=n - 1))
        written.append(script)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, out = _load(args)
        if args.command == "powerflow":
            return cmd_powerflow(cfg, out)
        if args.command == "synth":
            return cmd_synth(cfg, out)
        if args.command == "bounds":
            return cmd_bounds(cfg, out, args)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args)
        return cmd_export_plots(cfg, out, args)
    except (ConfigError, NetworkError, pipeline.ArtifactError, FileNotFoundError,
            json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PowerFlowError, NotFound, PolicyHypothesisError, CommandFailed) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
