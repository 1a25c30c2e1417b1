"""Command-line experiment runner."""

import argparse
import json
import math
import sys
from dataclasses import fields

from .experiments import ExperimentConfig, emit_results, run_sweep


def _coerce(name, raw, current):
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if name in ("p_values", "beta1_values", "rho1_values", "degree_table"):
        return json.loads(raw)
    if isinstance(current, (tuple, list)) or current is None:
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw
    return raw


def load_config(path=None, overrides=(), seed=None):
    data = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    cfg = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    for key, value in data.items():
        if key not in known:
            raise SystemExit(f"unknown config key {key!r}")
        setattr(cfg, key, tuple(value) if key in ("domain", "patch_grid") else value)
    for item in overrides:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in known:
            raise SystemExit(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw, getattr(cfg, key)))
    if seed is not None:
        cfg.seed = seed
    if isinstance(cfg.domain, list):
        cfg.domain = tuple(tuple(d) for d in cfg.domain)
    if isinstance(cfg.patch_grid, list):
        cfg.patch_grid = tuple(cfg.patch_grid)
    return cfg


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="sedg-experiment",
        description="Condition-number experiments for the two-stage "
        "auxiliary-space preconditioner.",
    )
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--out", default="results.csv", help="output path")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field (repeatable)",
    )
    args = ap.parse_args(argv)

    cfg = load_config(args.config, args.set, args.seed)
    rows = run_sweep(cfg, threads=args.threads)
    emit_results(rows, args.out, args.format)
    failed = [r for r in rows if r.error or math.isnan(r.kappa)]
    for r in failed:
        print(f"FAILED p={r.p}: {r.error}", file=sys.stderr)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
