"""Command line entry point: ``poperl train | verify-prop | export``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import metrics, propcheck
from .errors import ConfigError, PoperlError
from .harness import RunConfig, run_experiment, seed_dir

EXIT_CODES = {"config": 2, "numeric": 3, "domain": 4, "worker": 5, "io": 6, "check_failed": 7}
OUTPUT_DIR_ENV = "POPERL_OUTPUT_DIR"


def _seed_range(text: str) -> list[int]:
    m = re.fullmatch(r"\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*", text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        if b < a:
            raise ConfigError(f"empty seed range {text!r}")
        return list(range(a, b + 1))
    try:
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise ConfigError(f"seeds must look like 'a..b' or 'a,b,c', got {text!r}") from None


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if os.environ.get(OUTPUT_DIR_ENV):
        cfg.output_dir = os.environ[OUTPUT_DIR_ENV]
    if args.seeds is not None:
        cfg.seeds = _seed_range(args.seeds)
    elif args.seed is not None:
        cfg.seeds = [args.seed]
    cfg.validate()
    for seed in cfg.seeds:
        rec = run_experiment(cfg, seed)
        last = next((r["target_eval_return"] for r in reversed(rec.rows) if r["target_eval_return"] is not None), None)
        steps = rec.rows[-1]["training_steps"] if rec.rows else 0
        print(json.dumps({"seed": seed, "iterations": len(rec), "training_steps": steps, "final_eval": last}))
    run_dir = seed_dir(cfg, cfg.seeds[0]).parent
    metrics.export(run_dir)
    print(json.dumps({"run_dir": str(run_dir)}))
    return 0


def cmd_verify_prop(args) -> int:
    res = propcheck.run_identity_suite(args.instances, args.seed, args.tol)
    table = res.to_csv()
    if args.csv:
        Path(args.csv).write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)
    status = "PASS" if res.passed else "FAIL"
    print(f"{status} identity over {args.instances} instances: max relative residual {res.max_rel:.3e} (tol {args.tol:g})")
    return 0 if res.passed else EXIT_CODES["check_failed"]


def cmd_export(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"no such run directory: {run_dir}")
    for p in metrics.export(run_dir, args.window):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poperl", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one or more seeds of a config")
    p.add_argument("--config", required=True, help="YAML or JSON file with RunConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="range 'a..b' (inclusive) or list 'a,b,c'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify-prop", help="check the mixing identity on random finite instances")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--csv", help="write the per-instance table here instead of stdout")
    p.set_defaults(func=cmd_verify_prop)

    p = sub.add_parser("export", help="write CSVs and manifest for a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--window", type=int, default=metrics.DEFAULT_WINDOW)
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except PoperlError as e:
        category, message = e.category, str(e)
    except OSError as e:
        category, message = "io", str(e)
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


if __name__ == "__main__":
    sys.exit(main())
