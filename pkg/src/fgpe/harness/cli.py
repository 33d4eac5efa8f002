"""``fgpe`` command line: run, sweep, compare, correlate, plot.

Exit codes: 0 on success, 1 if any episode failed, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import statistics
import sys
from dataclasses import replace
from pathlib import Path

from fgpe import experiments
from fgpe.harness.config import ParseError, load_scenario
from fgpe.harness.report import emit_csv, emit_series_svg, emit_trace_svg, read_csv
from fgpe.harness.stats import DegenerateSample, correlate
from fgpe.harness.sweep import (BudgetExceeded, SweepSpec, effective_budget, failed, parse_value, run_jobs,
                                run_sweep)
from fgpe.pursuit import StrategyKind
from fgpe.sim import EpisodeAborted, Scenario, TraceRow, ValidationError, run_episode

EXIT_OK, EXIT_EPISODE, EXIT_CONFIG = 0, 1, 2

TRACE_COLUMNS = ("step", "entity_kind", "id", "x", "y", "theta", "v", "omega")
# sweep columns that describe the scenario rather than the outcome
PARAMETER_COLUMNS = ("n_pursuers", "n_obstacles", "capture_radius", "dt", "measurement_frequency", "drop_fraction",
                     "evader_v_max", "pursuer_v_max", "speed_ratio", "sigma_dx", "sigma_dy", "sigma_dtheta",
                     "sigma_range", "sigma_bearing", "sigma_cpx", "sigma_cpy", "sigma_opx", "sigma_opy",
                     "sensor_sigma_range", "sensor_sigma_bearing")


class ConfigError(ValueError):
    pass


def _base(args) -> Scenario:
    sc = load_scenario(args.scenario) if args.scenario else Scenario()
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    return sc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_trace_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([r.step, r.entity_kind, r.id, repr(float(r.x)), repr(float(r.y)), repr(float(r.theta)),
                        repr(float(r.v)), repr(float(r.omega))])


def read_trace_csv(path) -> list[TraceRow]:
    return [TraceRow(int(d["step"]), d["entity_kind"], int(d["id"]), float(d["x"]), float(d["y"]),
                     float(d["theta"]), float(d["v"]), float(d["omega"])) for d in read_csv(path)]


# ------------------------------------------------------------------ subcommands


def cmd_run(args) -> int:
    sc = _base(args)
    out = _out(args)
    try:
        r = run_episode(sc)
    except EpisodeAborted as exc:
        print(f"episode failed: {exc}", file=sys.stderr)
        return EXIT_EPISODE
    (out / "result.json").write_text(r.to_json() + "\n", encoding="utf-8")
    if args.format == "svg":
        emit_trace_svg(r.trace, out / "trace.svg", obstacles=sc.obstacles, covariances=r.covariances,
                       ellipse_scale=args.ellipse_scale, captured=r.captured)
    else:
        write_trace_csv(r.trace, out / "trace.csv")
    status = f"captured at t={r.capture_time:.2f}s" if r.captured else ("escaped" if r.escaped else "timed out")
    print(f"seed {sc.seed}: {status}, {r.steps} steps, mean ellipse area {r.mean_ellipse_area}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _base(args)
    axes = tuple((path, tuple(parse_value(v) for v in values)) for path, *values in (args.axis or []))
    for path, values in axes:
        if not values:
            raise ConfigError(f"axis {path} needs at least one value")
    spec = SweepSpec(base, axes, seeds=args.seeds, workers=args.workers)
    out = _out(args)
    records = run_sweep(spec, manifest=out / "manifest.jsonl")
    emit_csv(records, out / "sweep.csv")
    bad = failed(records)
    print(f"{len(records)} episodes, {len(bad)} failed -> {out / 'sweep.csv'}")
    return EXIT_EPISODE if bad else EXIT_OK


def cmd_compare(args) -> int:
    strategies = [StrategyKind(s) for s in args.strategies]
    total = len(strategies) * len(args.ratios) * args.seeds
    budget = effective_budget(SweepSpec(Scenario()))
    if total > budget:
        raise BudgetExceeded(f"comparison needs {total} episodes but the budget is {budget}")
    base = _base(args) if args.scenario else None
    seed0 = args.seed if args.seed is not None else 0
    jobs = []
    for ci, (ratio, strat) in enumerate((r, s) for r in args.ratios for s in strategies):
        params = json.dumps({"speed_ratio": ratio, "strategy": strat.value}, separators=(",", ":"))
        for k in range(args.seeds):
            if base is None:
                sc = experiments.scenario(seed0 + k, speed_ratio=ratio, strategy=strat, frequency=args.frequency)
            else:
                ps = tuple(replace(p, v_max=ratio * base.evader.v_max) for p in base.pursuers)
                sc = replace(base, pursuers=ps, strategy=strat, seed=base.seed + k)
            jobs.append((sc, ci, k, params))
    records = list(run_jobs(jobs, args.workers))
    out = _out(args)
    emit_csv(records, out / "compare.csv")
    for ratio in args.ratios:
        for strat in strategies:
            rows = [r for r in records if r.strategy == strat.value and math.isclose(r.speed_ratio, ratio)]
            caught = [r.capture_time for r in rows if r.captured]
            med = f"{statistics.median(caught):.2f}s" if caught else "-"
            print(f"ratio {ratio:g} {strat.value:17s} captured {len(caught)}/{len(rows)}  median time {med}")
    return EXIT_EPISODE if failed(records) else EXIT_OK


def _float_or_none(s: str):
    return float(s) if s not in ("", None) else None


def cmd_correlate(args) -> int:
    rows = read_csv(args.input)
    if not rows:
        raise ConfigError(f"{args.input}: no records")
    if args.target not in rows[0]:
        raise ConfigError(f"{args.input}: no column '{args.target}'")
    params = args.params or [p for p in PARAMETER_COLUMNS if p in rows[0]]
    for p in params:
        if p not in rows[0]:
            raise ConfigError(f"{args.input}: no column '{p}'")
    # episodes without a value for the target (e.g. no capture) are left out
    use = [r for r in rows if r.get("status", "ok") == "ok" and _float_or_none(r[args.target]) is not None]
    target = [float(r[args.target]) for r in use]
    cols = {p: [float(r[p]) for r in use] for p in params}
    try:
        rep = correlate(cols, target, args.target)
    except DegenerateSample as exc:
        raise ConfigError(f"cannot correlate: {exc}") from None
    out = _out(args)
    with open(out / "correlation.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("parameter", "r", "ci95_half_width", "n", "target"))
        for p, r, hw in rep.rows():
            w.writerow((p, repr(r), repr(hw), rep.n, rep.target))
    print(f"target {rep.target}, n = {rep.n}")
    for p, r, hw in rep.rows():
        print(f"  {p:22s} r = {r:+.3f} +/- {hw:.3f}")
    if rep.skipped:
        print(f"  constant, skipped: {', '.join(rep.skipped)}")
    return EXIT_OK


def cmd_plot(args) -> int:
    rows = read_csv(args.input)
    out = _out(args)
    header = set(rows[0]) if rows else set()
    if {"entity_kind", "x", "y"} <= header:
        obstacles = load_scenario(args.scenario).obstacles if args.scenario else ()
        trace = read_trace_csv(args.input)
        target = out / (Path(args.input).stem + ".svg")
        emit_trace_svg(trace, target, obstacles=obstacles)
    elif {"series", "x", "y"} <= header:
        series: dict[str, list[tuple[float, float]]] = {}
        for d in rows:
            series.setdefault(d["series"], []).append((float(d["x"]), float(d["y"])))
        target = out / (Path(args.input).stem + ".svg")
        emit_series_svg(series, target, xlabel=args.xlabel, ylabel=args.ylabel)
    else:
        raise ConfigError(f"{args.input}: expected a trace CSV (step, entity_kind, id, x, y, ...) "
                          f"or a series CSV (series, x, y)")
    print(f"wrote {target}")
    return EXIT_OK


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fgpe", description="Factor-graph pursuit-evasion experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt=("csv",)):
        sp.add_argument("--scenario", help="scenario TOML file (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="seed (base seed for multi-episode commands)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--format", choices=("csv", "svg"), default=fmt[0])

    sp = sub.add_parser("run", help="one episode -> result.json and a trace")
    common(sp)
    sp.add_argument("--ellipse-scale", type=float, default=1.0, help="factor applied to drawn 1-sigma ellipses")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="parameter grid -> sweep.csv")
    common(sp)
    sp.add_argument("--axis", nargs="+", action="append", metavar=("PATH", "VALUE"),
                    help="parameter path followed by its values; repeat for more axes")
    sp.add_argument("--seeds", type=int, default=1)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="factor graph vs pure pursuit vs constant bearing over speed ratios")
    common(sp)
    sp.add_argument("--ratios", type=float, nargs="+", default=[1.05, 0.9])
    sp.add_argument("--strategies", nargs="+", default=["fgpe", "pure_pursuit", "constant_bearing"])
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--frequency", type=float, default=1.0, help="measurement rate of the built-in layout")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("correlate", help="sweep CSV -> Pearson r per parameter")
    sp.add_argument("input")
    sp.add_argument("--target", default="capture_time")
    sp.add_argument("--params", nargs="+")
    sp.add_argument("--out", default=".")
    sp.add_argument("--format", choices=("csv",), default="csv")
    sp.set_defaults(func=cmd_correlate)

    sp = sub.add_parser("plot", help="trace or series CSV -> SVG")
    sp.add_argument("input")
    sp.add_argument("--scenario", help="scenario whose obstacles to draw")
    sp.add_argument("--out", default=".")
    sp.add_argument("--format", choices=("svg",), default="svg")
    sp.add_argument("--xlabel", default="")
    sp.add_argument("--ylabel", default="")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ParseError, ValidationError, BudgetExceeded, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
