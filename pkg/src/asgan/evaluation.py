"""Quality diagnostics: distance-to-class check, augmenter benchmark, and
the ratio / attention-hyperparameter sweeps.

Every sweep cell is a pure function of its seed, so cells can run in
parallel; results are always assembled in task order, which keeps emitted
CSVs byte-identical across runs and job counts.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import DataWarning, SensorSeries, WindowSet, window
from .errors import ContractError
from .monitor import METRICS_HEADER, EvalMetrics, PipelineConfig, augment_and_evaluate, metrics_csv_row
from .ndcore import Rng

__all__ = [
    "DistanceReport",
    "MetricsRow",
    "SweepCell",
    "SweepReport",
    "distance_check",
    "benchmark",
    "ratio_sweep",
    "hp_grid",
]


@dataclass
class DistanceReport:
    """Per-generated-sample (d2, d1) pairs: mean distance to normals / abnormals."""

    pairs: np.ndarray  # (count, 2) columns d2, d1
    fraction_below: float  # share of samples with d1 < d2 (strict)

    def write_csv(self, path) -> None:
        lines = ["d2,d1"]
        lines.extend(f"{d2:.17g},{d1:.17g}" for d2, d1 in self.pairs)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _mean_distances(gen: np.ndarray, ref: np.ndarray) -> np.ndarray:
    diffs = gen[:, None, :] - ref[None, :, :]
    return np.sqrt(np.sum(diffs * diffs, axis=2)).mean(axis=1)


def distance_check(generated: WindowSet, abnormal: WindowSet, normal: WindowSet) -> DistanceReport:
    """d1/d2 diagnostic: generated samples should sit nearer the abnormal class."""
    for name, ws in (("generated", generated), ("abnormal", abnormal), ("normal", normal)):
        if ws.count == 0:
            raise ContractError(f"distance_check: empty {name} set")
        if (ws.n, ws.v) != (generated.n, generated.v):
            raise ContractError(
                f"distance_check: {name} windows are ({ws.n},{ws.v}), generated are ({generated.n},{generated.v})"
            )
    scalers = [ws.scaler for ws in (generated, abnormal, normal) if ws.scaler is not None]
    for s in scalers[1:]:
        if not (np.array_equal(s.mins, scalers[0].mins) and np.array_equal(s.maxs, scalers[0].maxs)):
            raise ContractError("distance_check: window sets were scaled differently")
    d1 = _mean_distances(generated.windows, abnormal.windows)
    d2 = _mean_distances(generated.windows, normal.windows)
    return DistanceReport(
        pairs=np.column_stack([d2, d1]),
        fraction_below=float(np.mean(d1 < d2)),
    )


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class MetricsRow:
    augmenter: str
    trial: int  # 1-based index into the held-out trials
    replicate: int
    ratio: float
    metrics: EvalMetrics
    seed: int


@dataclass
class SweepCell:
    key: tuple
    mean_f: float
    sd_f: float
    rows: list[MetricsRow]


@dataclass
class SweepReport:
    axes: dict[str, list]
    cells: list[SweepCell]
    best: tuple | None = None

    def cell(self, key: tuple) -> SweepCell:
        for c in self.cells:
            if c.key == key:
                return c
        raise KeyError(key)

    def write_cells_csv(self, path) -> None:
        names = list(self.axes.keys())
        lines = [",".join(names + ["mean_f", "sd_f", "best"])]
        for c in self.cells:
            cells = [str(k) for k in c.key]
            cells += [f"{c.mean_f:.17g}", f"{c.sd_f:.17g}", "1" if c.key == self.best else "0"]
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_rows_csv(self, path) -> None:
        lines = [METRICS_HEADER]
        for c in self.cells:
            for r in c.rows:
                lines.append(metrics_csv_row(r.augmenter, r.trial, r.replicate, r.ratio, r.metrics, r.seed))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class _Task:
    key: tuple
    augmenter: str
    replicate: int
    ratio: float
    cfg: PipelineConfig
    train_trial: SensorSeries
    test_trials: list[SensorSeries]


def _run_task(task: _Task) -> list[MetricsRow]:
    metrics = augment_and_evaluate(task.train_trial, task.test_trials, task.augmenter, task.cfg)
    return [
        MetricsRow(
            augmenter=task.augmenter,
            trial=i + 1,
            replicate=task.replicate,
            ratio=task.ratio,
            metrics=m,
            seed=task.cfg.seed,
        )
        for i, m in enumerate(metrics)
    ]


def _execute(tasks: list[_Task], jobs: int) -> list[list[MetricsRow]]:
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


def _collect(
    keys: list[tuple], tasks: list[_Task], results: list[list[MetricsRow]]
) -> list[SweepCell]:
    by_key: dict[tuple, list[MetricsRow]] = {k: [] for k in keys}
    for task, rows in zip(tasks, results):
        by_key[task.key].extend(rows)
    cells = []
    for key in keys:
        rows = by_key[key]
        fs = np.array([r.metrics.f_score for r in rows])
        sd = float(fs.std(ddof=1)) if fs.size > 1 else 0.0
        cells.append(SweepCell(key=key, mean_f=float(fs.mean()), sd_f=sd, rows=rows))
    return cells


def _dataset_ratio(train_trial: SensorSeries, cfg: PipelineConfig) -> float:
    ws = window(train_trial, cfg.n, cfg.overlap)
    n_normal = int(np.sum(ws.labels == 0))
    n_abnormal = int(np.sum(ws.labels == 1))
    return n_abnormal / n_normal if n_normal else float("nan")


def benchmark(
    train_trial: SensorSeries,
    test_trials: list[SensorSeries],
    augmenters: list[str],
    cfg: PipelineConfig,
    replicates: int = 3,
    jobs: int = 1,
) -> SweepReport:
    """One cell per augmenter, each averaged over replicates and held-out trials."""
    ratio = _dataset_ratio(train_trial, cfg)
    master = Rng(cfg.seed)
    keys = [(a,) for a in augmenters]
    tasks = [
        _Task(
            key=(a,),
            augmenter=a,
            replicate=r,
            ratio=ratio,
            cfg=replace(cfg, seed=master.split(f"bench|{a}|rep{r}").seed),
            train_trial=train_trial,
            test_trials=test_trials,
        )
        for a in augmenters
        for r in range(1, replicates + 1)
    ]
    cells = _collect(keys, tasks, _execute(tasks, jobs))
    return SweepReport(axes={"augmenter": list(augmenters)}, cells=cells)


def ratio_sweep(
    ratios: list[float],
    train_trial: SensorSeries,
    test_trials: list[SensorSeries],
    cfg: PipelineConfig,
    replicates: int = 3,
    augmenter: str = "asgan",
    jobs: int = 1,
) -> SweepReport:
    """Subsample the abnormal class to each ratio, augment back to balance, score."""
    ws = window(train_trial, cfg.n, cfg.overlap)
    n_normal = int(np.sum(ws.labels == 0))
    usable = []
    for rho in ratios:
        if int(round(rho * n_normal)) < 2:
            warnings.warn(f"ratio {rho} keeps fewer than 2 abnormal windows; skipped", DataWarning, stacklevel=2)
            continue
        usable.append(rho)
    master = Rng(cfg.seed)
    keys = [(rho,) for rho in usable]
    tasks = [
        _Task(
            key=(rho,),
            augmenter=augmenter,
            replicate=r,
            ratio=rho,
            cfg=replace(cfg, ratio=rho, seed=master.split(f"ratio|{rho}|rep{r}").seed),
            train_trial=train_trial,
            test_trials=test_trials,
        )
        for rho in usable
        for r in range(1, replicates + 1)
    ]
    cells = _collect(keys, tasks, _execute(tasks, jobs))
    return SweepReport(axes={"ratio": usable}, cells=cells)


def hp_grid(
    h_e_values: list[int],
    h_f_values: list[int],
    train_trial: SensorSeries,
    test_trials: list[SensorSeries],
    cfg: PipelineConfig,
    replicates: int = 3,
    jobs: int = 1,
) -> SweepReport:
    """Attention-width grid for the attention-stacked augmenter; flags the argmax cell."""
    ratio = _dataset_ratio(train_trial, cfg)
    master = Rng(cfg.seed)
    keys = [(he, hf) for he in h_e_values for hf in h_f_values]
    tasks = [
        _Task(
            key=(he, hf),
            augmenter="asgan",
            replicate=r,
            ratio=ratio,
            cfg=replace(
                cfg,
                train=replace(cfg.train, h_e=he, h_f=hf),
                seed=master.split(f"hp|{he}x{hf}|rep{r}").seed,
            ),
            train_trial=train_trial,
            test_trials=test_trials,
        )
        for he, hf in keys
        for r in range(1, replicates + 1)
    ]
    cells = _collect(keys, tasks, _execute(tasks, jobs))
    best = max(cells, key=lambda c: c.mean_f).key if cells else None
    return SweepReport(axes={"h_e": list(h_e_values), "h_f": list(h_f_values)}, cells=cells, best=best)
