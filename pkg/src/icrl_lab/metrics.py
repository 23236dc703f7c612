"""Per-iteration metrics records, CSV files and plot-data export."""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable, Sequence
import csv
from dataclasses import asdict, dataclass, fields
import logging
from pathlib import Path
import re

import numpy as np

from .errors import DatasetError

logger = logging.getLogger(__name__)

PLOTTED_METRICS = ("true_reward", "violation_rate")
_SEED_PATTERN = re.compile(r"seed(\d+)")


@dataclass(frozen=True, slots=True)
class MetricsRecord:
    """One evaluation of the current policy."""

    timestep: int
    true_reward: float
    violation_rate: float
    lam: float = 0.0
    forward_bound: float = 0.0
    reverse_bound: float = 0.0
    backward_iterations: int = 0
    iteration: int = 0
    # Return in the nominal environment, where reward hacking shows.
    nominal_reward: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.violation_rate <= 1.0:
            raise ValueError("violation_rate must be in [0, 1]")
        if self.timestep < 0:
            raise ValueError("timestep must be >= 0")


METRIC_FIELDS = tuple(f.name for f in fields(MetricsRecord))
_INT_FIELDS = {"timestep", "backward_iterations", "iteration"}


def metrics_filename(method: str, seed: int, *, use_is: bool = True, use_es: bool = True, backward_iterations: int = 10) -> str:
    """e.g. ``metrics__icrl__is1_es1_b10__seed0.csv``."""
    tag = f"is{int(use_is)}_es{int(use_es)}_b{backward_iterations}"
    return f"metrics__{method}__{tag}__seed{seed}.csv"


def write_metrics(path: str | Path, records: Iterable[MetricsRecord]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    rows = [asdict(r) for r in records]
    previous = -1
    for row in rows:
        if row["timestep"] < previous:
            raise ValueError("metrics timesteps must be non-decreasing within a run")
        previous = row["timestep"]
    with p.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return p


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    p = Path(path)
    with p.open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(METRIC_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise DatasetError(f"metrics file {p} lacks columns {sorted(missing)}")
        return [
            MetricsRecord(**{k: (int(row[k]) if k in _INT_FIELDS else float(row[k])) for k in METRIC_FIELDS})
            for row in reader
        ]


def stderr(values: Sequence[float]) -> float:
    """Standard error of the mean; 0 for a single value."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return 0.0
    return float(arr.std(ddof=1) / np.sqrt(arr.size))


def _run_tag(path: Path) -> str:
    stem = _SEED_PATTERN.sub("", path.stem).strip("_")
    return stem or "metrics"


def _seed_of(path: Path, fallback: int) -> int:
    match = _SEED_PATTERN.search(path.stem)
    return int(match.group(1)) if match else fallback


def export_plot_data(run_dir: str | Path) -> tuple[Path, Path]:
    """Write ``plot_long.csv`` and ``plot_aggregate.csv`` into ``run_dir``.

    Every metrics file under ``run_dir`` contributes one seed; files whose
    names differ only in the seed are aggregated together. Seeds of unequal
    length are truncated to the shortest, and a warning row records it.
    """

    root = Path(run_dir)
    files = sorted(root.rglob("metrics*.csv")) if root.exists() else []
    if not files:
        raise DatasetError(f"no metrics files under {root}")

    groups: dict[str, list[tuple[int, list[MetricsRecord]]]] = defaultdict(list)
    for i, path in enumerate(files):
        groups[_run_tag(path)].append((_seed_of(path, i), read_metrics(path)))

    long_path = root / "plot_long.csv"
    agg_path = root / "plot_aggregate.csv"
    with long_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "timestep", "seed", "metric", "value"])
        for tag, runs in sorted(groups.items()):
            for seed, records in runs:
                for rec in records:
                    for metric in PLOTTED_METRICS:
                        writer.writerow([tag, rec.timestep, seed, metric, getattr(rec, metric)])

    with agg_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "timestep", "metric", "mean", "stderr", "n_seeds"])
        for tag, runs in sorted(groups.items()):
            lengths = [len(records) for _, records in runs]
            shortest = min(lengths)
            if len(set(lengths)) > 1:
                logger.warning(f"{tag}: seeds have {sorted(set(lengths))} rows; truncating to {shortest}")
                writer.writerow([tag, "", "warning", f"truncated to {shortest} rows (shortest seed)", "", len(runs)])
            for row in range(shortest):
                timestep = int(np.mean([records[row].timestep for _, records in runs]))
                for metric in PLOTTED_METRICS:
                    values = [getattr(records[row], metric) for _, records in runs]
                    writer.writerow([tag, timestep, metric, float(np.mean(values)), stderr(values), len(runs)])

    logger.info(f"plot data written to {long_path} and {agg_path}")
    return long_path, agg_path


@dataclass(frozen=True, slots=True)
class RecoveryReport:
    """How well ``zeta < threshold`` marks the truly constrained cells."""

    precision: float
    recall: float
    threshold: float
    cell_scores: tuple[float, ...]
    true_cells: tuple[int, ...]
    predicted_cells: tuple[int, ...]


def recovery_report(
    score_table: np.ndarray,
    violation_table: np.ndarray,
    visited_cells: Iterable[int],
    threshold: float = 0.5,
) -> RecoveryReport:
    """Score learned ``zeta`` against the true constraint on a grid.

    A cell is truly constrained when every action from it violates; its
    learned score is the minimum ``zeta`` over actions. Only truly
    constrained cells and visited feasible cells are judged.
    """

    scores = np.asarray(score_table, dtype=np.float64)
    violations = np.asarray(violation_table, dtype=bool)
    if scores.shape != violations.shape:
        raise ValueError("score and violation tables must have the same shape")
    cell_scores = scores.min(axis=1)
    true_cells = set(np.flatnonzero(violations.all(axis=1)).tolist())
    judged = true_cells | {int(c) for c in visited_cells}
    predicted = {c for c in judged if cell_scores[c] < threshold}
    hits = len(predicted & true_cells)
    precision = hits / len(predicted) if predicted else float(not true_cells)
    recall = hits / len(true_cells) if true_cells else 1.0
    return RecoveryReport(
        precision=precision,
        recall=recall,
        threshold=threshold,
        cell_scores=tuple(float(s) for s in cell_scores),
        true_cells=tuple(sorted(true_cells)),
        predicted_cells=tuple(sorted(predicted)),
    )
