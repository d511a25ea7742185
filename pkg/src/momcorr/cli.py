"""Command-line entry points.

    momcorr run <config> [--out DIR] [--workers N] [--seed-offset K] [--allow-divergence]
    momcorr oracle-cache <config> [--out DIR]
    momcorr merge <dir> [--out FILE]
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import expand_grid, parse_config
from .runner import ensure_reference_cache, merge_csvs, run_campaign


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="momcorr")
    sub = p.add_subparsers(dest="cmd", required=True)

    run_p = sub.add_parser("run", help="execute every run in a config's grid")
    run_p.add_argument("config")
    run_p.add_argument("--out", default="out")
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument("--seed-offset", type=int, default=0)
    run_p.add_argument("--allow-divergence", action="store_true",
                       help="diverged runs are reported but do not fail the command")

    cache_p = sub.add_parser("oracle-cache", help="precompute reference values")
    cache_p.add_argument("config")
    cache_p.add_argument("--out", default="out")

    merge_p = sub.add_parser("merge", help="merge per-run CSVs into one file")
    merge_p.add_argument("dir")
    merge_p.add_argument("--out", default=None)

    args = p.parse_args(argv)
    if args.cmd == "run":
        return _cmd_run(args)
    if args.cmd == "oracle-cache":
        return _cmd_oracle_cache(args)
    return _cmd_merge(args)


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    runs = expand_grid(cfg, seed_offset=args.seed_offset)
    out_dir = Path(args.out)
    print(f"{len(runs)} runs -> {out_dir}", flush=True)
    records = run_campaign(runs, out_dir, workers=args.workers)
    manifest = out_dir / "runs.csv"
    with open(manifest, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run_id", "status", "wall_time_s", "csv_path"])
        for r in records:
            w.writerow([r.run_id, r.status, f"{r.wall_time_s:.3f}", r.csv_path])
    diverged = [r for r in records if r.status != "ok"]
    for r in diverged:
        print(f"DIVERGED {r.run_id}", file=sys.stderr)
    print(f"done: {len(records) - len(diverged)} ok, {len(diverged)} diverged")
    if diverged and not args.allow_divergence:
        return 1
    return 0


def _cmd_oracle_cache(args) -> int:
    cfg = parse_config(args.config)
    if cfg.task == "regression":
        print("regression task needs no reference cache")
        return 0
    cache_dir = Path(args.out) / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    for gamma in sorted(set(cfg.gamma)):
        states, _ = ensure_reference_cache(gamma, cache_dir)
        print(f"gamma={gamma}: {len(states)} eval states cached")
    return 0


def _cmd_merge(args) -> int:
    out = args.out or str(Path(args.dir) / "combined.csv")
    n = merge_csvs(args.dir, out)
    print(f"{n} rows -> {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
