"""Run records, cross-seed aggregation and CSV export.

A run directory holds one ``seed_<n>/`` folder per trial with ``config.json``
and ``record.jsonl`` (one JSON object per iteration).  :func:`export` turns
that into ``seed_<n>/run.csv``, one ``aggregate_<field>.csv`` per curve and a
``manifest.json``.  All floats are written with ``repr`` so re-export is
byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DomainError

ROW_FIELDS = (
    "iteration",
    "training_steps",
    "gradient_updates",
    "env_steps",
    "target_eval_return",
    "pop_mean_eval_return",
    "f_target",
    "mean_pop_fitness",
    "fitness_list",
    "mean_action_discrepancy",
    "action_discrepancies",
    "critic_loss",
    "actor_objective",
    "batch_origin_target",
    "batch_origin_pop",
)
LIST_FIELDS = ("fitness_list", "action_discrepancies")
CURVE_FIELDS = ("target_eval_return", "pop_mean_eval_return", "mean_pop_fitness", "mean_action_discrepancy")
CI_LEVEL = 0.68
DEFAULT_WINDOW = 5


class RunRecord:
    """Per-iteration rows of one trial, optionally mirrored to a jsonl file."""

    def __init__(self, config: dict | None = None, seed: int = 0, rows=None, path=None):
        self.config = config or {}
        self.seed = seed
        self.rows: list[dict] = []
        self.path = Path(path) if path is not None else None
        for r in rows or []:
            self.append(r, write=False)

    def __len__(self):
        return len(self.rows)

    def append(self, row: dict, write: bool = True):
        unknown = set(row) - set(ROW_FIELDS)
        if unknown:
            raise KeyError(f"unknown record fields {sorted(unknown)}")
        if self.rows and row["training_steps"] < self.rows[-1]["training_steps"]:
            raise DomainError("training_steps must be nondecreasing")
        full = {k: row.get(k) for k in ROW_FIELDS}
        self.rows.append(full)
        if write and self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(full, sort_keys=True) + "\n")

    def column(self, name: str):
        """``(training_steps, values)`` over the rows where ``name`` is set."""
        pts = [(r["training_steps"], r[name]) for r in self.rows if r.get(name) is not None]
        if not pts:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        x, y = zip(*pts)
        return np.asarray(x, dtype=np.int64), np.asarray(y, dtype=float)

    @classmethod
    def load(cls, seed_dir) -> "RunRecord":
        seed_dir = Path(seed_dir)
        cfg_path = seed_dir / "config.json"
        config = json.loads(cfg_path.read_text()) if cfg_path.exists() else {}
        seed = int(config.get("seed", seed_dir.name.rsplit("_", 1)[-1]))
        rows = []
        rec_path = seed_dir / "record.jsonl"
        if rec_path.exists():
            rows = [json.loads(line) for line in rec_path.read_text().splitlines() if line.strip()]
        return cls(config, seed, rows)


# -- statistics --------------------------------------------------------------
def t_half_width(values, level: float = CI_LEVEL) -> float:
    """Half-width of the two-sided t confidence interval of the mean."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 2:
        return float("nan")
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * v.std(ddof=1) / np.sqrt(n))


def moving_average(x, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks at the ends."""
    x = np.asarray(x, dtype=float)
    if window < 1:
        raise DomainError("smoothing window must be >= 1")
    if window == 1 or len(x) == 0:
        return x.copy()
    h = window // 2
    out = np.empty_like(x)
    for i in range(len(x)):
        lo, hi = max(0, i - h), min(len(x), i + h + 1)
        out[i] = x[lo:hi].mean()
    return out


@dataclass
class AggregateCurve:
    field: str
    x: np.ndarray
    seeds: list
    series: np.ndarray            # (n_seeds, len(x)) after nearest-step alignment
    mean: np.ndarray
    ci_low: np.ndarray | None
    ci_high: np.ndarray | None
    window: int = DEFAULT_WINDOW

    def header(self) -> list[str]:
        return ["training_steps", "mean", "ci_low", "ci_high"] + [f"seed_{s}" for s in self.seeds]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for j in range(len(self.x)):
                lo = "" if self.ci_low is None else _fmt(self.ci_low[j])
                hi = "" if self.ci_high is None else _fmt(self.ci_high[j])
                w.writerow([int(self.x[j]), _fmt(self.mean[j]), lo, hi] + [_fmt(v) for v in self.series[:, j]])

    @classmethod
    def read_csv(cls, path, field_name: str, window: int = DEFAULT_WINDOW) -> "AggregateCurve":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        seeds = [int(h[len("seed_"):]) for h in head[4:]]
        col = lambda j: np.array([float(r[j]) for r in body])
        has_ci = bool(body) and body[0][2] != ""
        return cls(field_name, np.array([int(r[0]) for r in body], dtype=np.int64), seeds,
                   np.array([[float(r[4 + i]) for r in body] for i in range(len(seeds))]).reshape(len(seeds), len(body)),
                   col(1) if body else np.zeros(0), col(2) if has_ci else None, col(3) if has_ci else None, window)


def _nearest(xs: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Index into sorted ``xs`` of the nearest value for every grid point (ties go left)."""
    j = np.searchsorted(xs, grid)
    j = np.clip(j, 1, len(xs) - 1) if len(xs) > 1 else np.zeros_like(j)
    if len(xs) > 1:
        left_closer = (grid - xs[j - 1]) <= (xs[j] - grid)
        j = np.where(left_closer, j - 1, j)
    return j


def aggregate(records: list[RunRecord], field_name: str, window: int = DEFAULT_WINDOW) -> AggregateCurve:
    """Align seeds on the first record's steps by nearest-step matching, then mean, t-CI and smoothing."""
    if not records:
        raise DomainError("no records to aggregate")
    cols = [r.column(field_name) for r in records]
    seeds = [r.seed for r in records]
    grid = cols[0][0]
    if len(grid) == 0 or any(len(x) == 0 for x, _ in cols):
        empty = np.zeros(0)
        return AggregateCurve(field_name, np.zeros(0, dtype=np.int64), seeds, np.zeros((len(records), 0)),
                              empty, None if len(records) < 2 else empty, None if len(records) < 2 else empty, window)
    series = np.array([y[_nearest(x, grid)] for x, y in cols])
    mean = moving_average(series.mean(axis=0), window)
    if len(records) < 2:
        warnings.warn("single seed: confidence interval omitted", stacklevel=2)
        return AggregateCurve(field_name, grid, seeds, series, mean, None, None, window)
    half = np.array([t_half_width(series[:, j]) for j in range(series.shape[1])])
    half = moving_average(half, window)
    return AggregateCurve(field_name, grid, seeds, series, mean, mean - half, mean + half, window)


@dataclass
class FinalPerformance:
    mean: float
    half_width: float
    per_seed: list
    all_available: bool = False   # True when some seed had fewer than ``last`` evaluations

    def __str__(self):
        return f"{self.mean:.3f} ± {self.half_width:.3f}"


def final_performance(records: list[RunRecord], field_name: str = "target_eval_return", last: int = 100):
    """Per seed the best of the last ``last`` evaluations, then mean and 68% t-interval across seeds."""
    per_seed, short = [], False
    for r in records:
        _, y = r.column(field_name)
        if len(y) == 0:
            raise DomainError(f"seed {r.seed} has no {field_name} evaluations")
        short |= len(y) < last
        per_seed.append(float(np.max(y[-last:])))
    if not per_seed:
        raise DomainError("no records")
    half = t_half_width(per_seed) if len(per_seed) > 1 else 0.0
    return FinalPerformance(float(np.mean(per_seed)), half, per_seed, short)


@dataclass
class Histogram:
    counts: np.ndarray
    edges: np.ndarray
    iteration: int
    training_steps: int


def fitness_snapshot(record: RunRecord, at_step: int, bins: int = 20) -> Histogram:
    rows = [r for r in record.rows if r.get("fitness_list")]
    if not rows:
        raise DomainError("record has no population fitness data")
    steps = np.array([r["training_steps"] for r in rows])
    row = rows[int(_nearest(steps, np.array([at_step]))[0])]
    counts, edges = np.histogram(np.asarray(row["fitness_list"], dtype=float), bins=bins)
    return Histogram(counts, edges, row["iteration"], row["training_steps"])


def snapshot_steps(total_steps: int) -> list[int]:
    """One third, two thirds and the end of the run."""
    return [total_steps // 3, 2 * total_steps // 3, total_steps]


# -- export ------------------------------------------------------------------
def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_run_csv(record: RunRecord, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in record.rows:
            w.writerow([_fmt(r.get(k)) for k in ROW_FIELDS])


def config_hash(config: dict) -> str:
    cfg = {k: v for k, v in config.items() if k not in ("seed", "seeds", "output_dir")}
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def load_run(run_dir) -> list[RunRecord]:
    run_dir = Path(run_dir)
    dirs = sorted((p for p in run_dir.glob("seed_*") if p.is_dir()), key=lambda p: int(p.name[5:]))
    return [RunRecord.load(d) for d in dirs]


def export(run_dir, window: int = DEFAULT_WINDOW) -> list[Path]:
    """Write per-seed CSVs, aggregate curves and the manifest; returns the written paths."""
    from . import __version__

    run_dir = Path(run_dir)
    records = load_run(run_dir)
    written = []
    for rec in records:
        p = run_dir / f"seed_{rec.seed}" / "run.csv"
        write_run_csv(rec, p)
        written.append(p)
    for name in CURVE_FIELDS:
        p = run_dir / f"aggregate_{name}.csv"
        if records:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                curve = aggregate(records, name, window)
        else:
            curve = AggregateCurve(name, np.zeros(0, dtype=np.int64), [], np.zeros((0, 0)), np.zeros(0), None, None, window)
        curve.write_csv(p)
        written.append(p)
    config = records[0].config if records else {}
    manifest = {
        "config_hash": config_hash(config),
        "seeds": [r.seed for r in records],
        "iterations": {str(r.seed): len(r) for r in records},
        "smoothing_window": window,
        "ci_level": CI_LEVEL,
        "files": sorted(str(p.relative_to(run_dir)) for p in written),
        "versions": {"poperl": __version__, "numpy": np.__version__,
                     "scipy": __import__("scipy").__version__, "python": platform.python_version()},
    }
    mp = run_dir / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(mp)
    return written
