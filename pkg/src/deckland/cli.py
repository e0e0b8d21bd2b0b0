"""Command line entry point: ``land run|mc|report|plotdata``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

from .errors import ScenarioError
from .harness import (EpisodeLog, aggregate, read_episodes_csv, run_episode, run_monte_carlo, write_episodes_csv,
                      write_stats_json)
from .plots import render_figures, summary_lines, write_plot_data
from .scenario import Scenario, load_scenario, save_scenario

log = logging.getLogger("deckland")


def _load_logs(d: Path) -> list[EpisodeLog]:
    paths = sorted(d.glob("episode_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    return [EpisodeLog.load(p) for p in paths]


def _load_reports(d: Path):
    csv_path = d / "episodes.csv"
    if csv_path.exists():
        return read_episodes_csv(csv_path)
    logs = _load_logs(d)
    if not logs:
        raise FileNotFoundError(f"{d} holds neither episodes.csv nor episode_<seed>.json logs")
    return [l.report for l in logs]


def _deck_size(d: Path):
    p = d / "scenario.json"
    u = load_scenario(p).usv if p.exists() else Scenario().usv
    return (u.deck_length, u.deck_width)


def _write_outputs(out: Path, s: Scenario, reports, logs, figures=True):
    stats = aggregate(reports)
    save_scenario(s, out / "scenario.json")
    write_episodes_csv(reports, out / "episodes.csv")
    write_stats_json(stats, out / "stats.json")
    if figures:
        render_figures(reports, logs, out, deck_size=(s.usv.deck_length, s.usv.deck_width))
    for line in summary_lines(stats):
        print(line)
    return stats


def cmd_run(args) -> int:
    s = load_scenario(args.scenario)
    seed = s.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ep = run_episode(s, seed)
    log.info("episode %d finished in %.1f s wall time", seed, time.perf_counter() - t0)
    ep.save(out / f"episode_{seed}.json")
    for ev in ep.events:
        print(f"t={ev['t']:7.2f}  {ev['src']} -> {ev['dst']}")
    _write_outputs(out, s, [ep.report], [ep], figures=not args.no_figures)
    return 0 if ep.report.success else 1


def cmd_mc(args) -> int:
    s = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    stats, reports = run_monte_carlo(s, args.n, base_seed=args.base_seed, jobs=args.jobs,
                                     log_dir=out if args.logs else None)
    log.info("%d episodes in %.1f s wall time", args.n, time.perf_counter() - t0)
    logs = _load_logs(out) if args.logs else []
    _write_outputs(out, s, reports, logs, figures=not args.no_figures)
    return 0


def cmd_report(args) -> int:
    d = Path(args.inp)
    reports = _load_reports(d)
    stats = aggregate(reports)
    if args.format == "json":
        text = json.dumps(stats.to_dict(), indent=2)
        write_stats_json(stats, d / "stats.json")
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "value", "sigma"])
        w.writerow(["n_episodes", stats.n_episodes, ""])
        w.writerow(["success_rate", stats.success_rate, ""])
        w.writerow(["touchdown_rate", stats.touchdown_rate, ""])
        for k, v in stats.metrics.items():
            w.writerow([k, "", ""] if v is None else [k, repr(v[0]), repr(v[1])])
        for k, v in stats.fractions.items():
            w.writerow([k, v, ""])
        text = buf.getvalue().rstrip("\n")
        (d / "stats.csv").write_text(text + "\n", encoding="utf-8")
    print(text)
    if not args.no_figures:
        for p in render_figures(reports, _load_logs(d), d, deck_size=_deck_size(d)):
            log.info("wrote %s", p)
    return 0


def cmd_plotdata(args) -> int:
    d = Path(args.inp)
    out = Path(args.out) if args.out else d / "plotdata"
    for p in write_plot_data(_load_reports(d), _load_logs(d), out):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="land", description="Simulate UAV landings on a vessel deck in waves.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one seeded episode")
    r.add_argument("--scenario", required=True, help="scenario JSON file or bundled preset name")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("mc", help="run a Monte Carlo batch")
    m.add_argument("--scenario", required=True)
    m.add_argument("-n", "--n", type=int, required=True)
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--base-seed", type=int, default=None)
    m.add_argument("--logs", action="store_true", help="also save episode_<seed>.json logs")
    m.add_argument("--out", required=True)
    m.add_argument("--no-figures", action="store_true")
    m.set_defaults(func=cmd_mc)

    rep = sub.add_parser("report", help="aggregate a result directory and render figures")
    rep.add_argument("--in", dest="inp", required=True)
    rep.add_argument("--format", choices=("csv", "json"), default="json")
    rep.add_argument("--no-figures", action="store_true")
    rep.set_defaults(func=cmd_report)

    pd = sub.add_parser("plotdata", help="write per-figure CSV series")
    pd.add_argument("--in", dest="inp", required=True)
    pd.add_argument("--out", default=None)
    pd.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError, ValueError) as e:
        print(f"land: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
