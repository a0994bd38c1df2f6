"""Command line entry point: ``loadsim {run,sweep,analyze,poi,trajectory}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import ConfigError, enumerate_campaign, load_config
from .sweep import (MANIFEST_FILE, ResultStore, StoreError, execute_campaign, read_manifest,
                    throughput_report)

log = logging.getLogger("loadsim")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="YAML configuration (defaults to the built-in reference setup)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loadsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a single loading cycle")
    _add_config(p)
    p.add_argument("--pile", default="gravel-30")
    p.add_argument("--action", required=True,
                   help="eight comma separated action parameters alpha1..alpha8")
    p.add_argument("--log-series", type=Path, default=None, metavar="CSV",
                   help="write the per-step time series to this file")

    p = sub.add_parser("sweep", help="run a factorial campaign")
    _add_config(p)
    p.add_argument("--piles", default="reference",
                   help="comma separated pile ids such as gravel-30; 'reference' = the six reference piles")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--limit", type=int, default=None,
                   help="only the first N actions of the grid per pile")
    p.add_argument("--max-runs", type=int, default=None,
                   help="stop after N new runs without finalizing")

    p = sub.add_parser("analyze", help="histograms and scatter data for one pile")
    _add_config(p)
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--pile", required=True)
    p.add_argument("--hist", default="mass,time",
                   help="two fields for the 2D histogram, e.g. mass,time or mass,spill")
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--scatter", action="store_true")
    p.add_argument("--trends", action="store_true", help="print trend statistics over all piles")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: results dir)")

    p = sub.add_parser("poi", help="points of interest for one pile")
    _add_config(p)
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--pile", required=True)
    p.add_argument("--pareto-run", default=None, help="run_id to use as the Pareto choice")

    p = sub.add_parser("trajectory", help="re-simulate one run and export its trajectory")
    _add_config(p)
    p.add_argument("--run", required=True, help="run_id from a campaign manifest")
    p.add_argument("--results", type=Path, required=True,
                   help="campaign directory holding manifest.csv")
    p.add_argument("--out", type=Path, default=None)
    return parser


def _cmd_run(args, cfg) -> int:
    from .config import ActionParams
    from .engine import run_loading_cycle
    action = ActionParams.from_sequence([float(v) for v in args.action.split(",")])
    rec = run_loading_cycle(cfg.pile(args.pile), cfg.machine, action, cfg.control,
                            log_series=args.log_series is not None)
    print(f"run {rec.run_id} {rec.pile_id}: flag={rec.flag} m_load={rec.m_load:.1f} kg "
          f"t_load={rec.t_load:.2f} s W={rec.W:.1f} kJ s_load={rec.s_load:.2f} % "
          f"P_e={rec.P_e:.3f} kg/kJ P_p={rec.P_p:.2f} kg/s P_b={rec.P_b:.3f}")
    if rec.series is not None:
        print(f"series -> {rec.series.write_csv(args.log_series)}")
    return 0


def _cmd_sweep(args, cfg) -> int:
    grid = cfg.grid()
    if args.limit is not None:
        grid = grid[:args.limit]
    manifest = enumerate_campaign(cfg.piles(args.piles), grid, cfg.machine)
    summary = execute_campaign(manifest, args.workers, ResultStore(args.out),
                               machine=cfg.machine, control=cfg.control, resume=args.resume,
                               max_runs=args.max_runs)
    print(f"{summary.executed} run(s) executed, {summary.skipped} already done, "
          f"flags {summary.flags}")
    print(throughput_report(summary))
    if summary.finished:
        print(f"results -> {summary.results_path}")
    else:
        print("campaign incomplete; rerun with --resume to finish")
    return 0


def _cmd_analyze(args, cfg) -> int:
    from .analysis import (histogram2d, load_results, plot_histogram, select_poi,
                           trend_tests, write_scatter)
    out = args.out or (args.results if args.results.is_dir() else args.results.parent)
    out.mkdir(parents=True, exist_ok=True)
    rows = load_results(args.results, args.pile)
    if not rows:
        raise ConfigError(f"no results for pile {args.pile!r}")
    fields = [f.strip() for f in args.hist.split(",")]
    if len(fields) != 2:
        raise ConfigError("--hist takes exactly two fields")
    hist = histogram2d(rows, fields[0], fields[1], args.bins)
    stem = f"{args.pile}_hist_{hist.x_field}_{hist.y_field}"
    print(f"histogram -> {hist.write_csv(out / f'{stem}.csv')}, "
          f"{plot_histogram(hist, out / f'{stem}.svg', args.pile)}")
    if args.scatter:
        done = [r for r in rows if r.completed]
        c, s = write_scatter(done, select_poi(done) if done else None,
                             out / f"{args.pile}_scatter.csv", out / f"{args.pile}_scatter.svg",
                             args.pile)
        print(f"scatter -> {c}, {s}")
    if args.trends:
        for line in trend_tests(load_results(args.results)).lines():
            print(line)
    return 0


def _cmd_poi(args, cfg) -> int:
    from .analysis import load_results, select_poi
    rows = [r for r in load_results(args.results, args.pile) if r.completed]
    if not rows:
        raise ConfigError(f"no completed runs for pile {args.pile!r}")
    poi = select_poi(rows, args.pareto_run)
    by_id = {r.run_id: r for r in rows}
    print("poi,run_id," + ",".join(f"alpha{i}" for i in range(1, 9))
          + ",m_load_kg,t_load_s,s_load_pct,P_p_kg_per_s,P_e_kg_per_kJ")
    for name, p in poi.items():
        r = by_id[p.run_id]
        print(",".join([name, r.run_id, *(f"{a:g}" for a in r.action),
                        f"{r.m_load:.1f}", f"{r.t_load:.2f}", f"{r.s_load:.2f}",
                        f"{r.P_p:.2f}", f"{r.P_e:.3f}"]))
    return 0


def _cmd_trajectory(args, cfg) -> int:
    from .analysis import export_trajectory
    from .engine import run_loading_cycle
    root = args.results if args.results.is_dir() else args.results.parent
    piles = {p: cfg.pile(p) for p in _manifest_piles(root / MANIFEST_FILE)}
    rows = [r for r in read_manifest(root / MANIFEST_FILE, piles).rows if r.run_id == args.run]
    if not rows:
        raise ConfigError(f"run {args.run!r} not in {root / MANIFEST_FILE}")
    row = rows[0]
    rec = run_loading_cycle(piles[row.pile_id], cfg.machine, row.action, cfg.control,
                            seed=row.seed, log_series=True, keep_pile=True, run_id=row.run_id)
    exp = export_trajectory(row.run_id, rec.series, rec.pile, args.out or root)
    print(f"{row.run_id} ({row.pile_id}, {rec.flag}, {rec.m_load:.0f} kg) -> "
          f"{exp.path_csv}, {exp.profile_csv}, {exp.svg}")
    return 0


def _manifest_piles(path: Path) -> list[str]:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        return sorted({rec[1] for rec in reader})


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "analyze": _cmd_analyze, "poi": _cmd_poi,
            "trajectory": _cmd_trajectory}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, StoreError, OSError) as exc:
        print(f"loadsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
