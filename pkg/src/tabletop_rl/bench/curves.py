"""Curve files, cross-seed aggregation and the success-rate figure."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CURVE_HEADER = ["step", "success_rate", "mean_return", "seed"]
AGGREGATE_HEADER = ["step", "median_success", "std_success", "min_success", "max_success", "n_seeds"]


@dataclass(frozen=True)
class EvalRecord:
    step: int
    success_rate: float
    mean_return: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError(f"success_rate {self.success_rate} outside [0, 1]")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def curve_row(rec: EvalRecord) -> list[str]:
    return [str(rec.step), _fmt(rec.success_rate), _fmt(rec.mean_return), str(rec.seed)]


def emit_curve(records, path) -> Path:
    """Write records as CSV; an empty list gives a header-only file."""
    path = Path(path)
    records = list(records)
    steps = [r.step for r in records]
    if steps != sorted(steps):
        raise ValueError("records must be ordered by step")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for rec in records:
            writer.writerow(curve_row(rec))
    return path


def read_curve(path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [EvalRecord(int(r["step"]), float(r["success_rate"]),
                           float(r["mean_return"]), int(r["seed"])) for r in reader]


@dataclass(frozen=True)
class AggregateRow:
    step: int
    median: float
    std: float
    minimum: float
    maximum: float
    n_seeds: int


def aggregate_records(records) -> list[AggregateRow]:
    """Per-step median and (population) standard deviation across seeds."""
    by_step = defaultdict(list)
    for rec in records:
        by_step[rec.step].append(rec.success_rate)
    rows = []
    for step in sorted(by_step):
        vals = np.asarray(by_step[step])
        rows.append(AggregateRow(step, float(np.median(vals)), float(np.std(vals)),
                                 float(vals.min()), float(vals.max()), len(vals)))
    return rows


def write_aggregate(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_HEADER)
        for r in rows:
            writer.writerow([r.step, _fmt(r.median), _fmt(r.std), _fmt(r.minimum),
                             _fmt(r.maximum), r.n_seeds])
    return path


def read_aggregate(path) -> list[AggregateRow]:
    with open(path, newline="") as fh:
        return [AggregateRow(int(r["step"]), float(r["median_success"]), float(r["std_success"]),
                             float(r["min_success"]), float(r["max_success"]), int(r["n_seeds"]))
                for r in csv.DictReader(fh)]


def aggregate_dir(in_dir, out_file) -> list[AggregateRow]:
    """Aggregate every ``curve_seed*.csv`` in ``in_dir``."""
    paths = sorted(Path(in_dir).glob("curve_seed*.csv"))
    if not paths:
        raise FileNotFoundError(f"no curve_seed*.csv files in {in_dir}")
    records = [rec for p in paths for rec in read_curve(p)]
    rows = aggregate_records(records)
    write_aggregate(rows, out_file)
    return rows


def plot_success(curves: dict, path, title: str = "") -> Path:
    """Median success with a +-1 std band, one line per label.

    ``curves`` maps a label (e.g. the algorithm) to its aggregate rows.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for label, rows in curves.items():
        steps = np.array([r.step for r in rows])
        med = np.array([r.median for r in rows])
        std = np.array([r.std for r in rows])
        ax.plot(steps, med, label=label, lw=1.5)
        ax.fill_between(steps, np.clip(med - std, 0, 1), np.clip(med + std, 0, 1), alpha=0.25)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return Path(path)
