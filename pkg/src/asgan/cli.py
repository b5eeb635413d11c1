"""Command-line front end: seeded, self-describing run directories.

Every subcommand resolves its configuration (file values overridden by
flags), creates a run directory, and writes the resolved key=value snapshot
next to its outputs so any run can be reproduced bit-exactly from the
snapshot alone.  Exit codes: 0 success, 2 configuration error, 3 data error,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import evaluation
from .data import SensorSeries, SynthProfile, fit_scaler, read_csv, synth_trials, window, write_csv
from .errors import AsganError, ConfigError, DataError
from .gan import TrainConfig, generate, load_checkpoint, save_checkpoint, train
from .monitor import ClassifierConfig, PipelineConfig
from .ndcore import Rng

__all__ = ["RunConfig", "main"]

_RUN_DIR_ENV = "ASGAN_RUN_DIR"


@dataclass
class RunConfig:
    """Flat key=value configuration; unknown keys are rejected."""

    seed: int = 0
    jobs: int = 1
    # synthetic benchmark profile
    trials: int = 5
    length: int = 850
    sample_rate: float = 1.0
    normal_freqs: str = "0.085,0.21"
    normal_amps: str = "1.0,0.55"
    abnormal_freq_shift: float = 0.03
    abnormal_amp_factor: float = 0.88
    burst_amp: float = 0.22
    burst_freq: float = 0.37
    burst_period: int = 24
    burst_duty: float = 0.35
    noise_sd: float = 0.15
    layout: str = "42-310-normal,552-660-abnormal"
    # windowing
    n: int = 30
    overlap: int = 28
    # adversarial training
    h_e: int = 3
    h_f: int = 1
    d_h: int = 8
    noise_dim: int = -1  # -1: default to n*v
    iterations: int = 7000
    batch_size: int = -1  # -1: default to min(32, dataset)
    critic_steps: int = 1
    step_size: float = 5e-5
    sq_decay: float = 0.9
    clip_c: float = 0.01
    optimizer: str = "rmsprop"
    critic_hidden: int = 64
    hidden_width: int = -1
    # classifier
    kernel: int = 5
    epochs: int = 200
    classifier_step: float = 1e-3
    classifier_batch: int = 16
    threshold: float = 0.5
    # experiment structure
    count: int = 80
    replicates: int = 3
    augmenter: str = "asgan"
    augmenters: str = "none,smote,wgan,asgan"
    ratios: str = "0.07,0.13,0.2,0.27,0.33"
    he_values: str = "1,3,5,10"
    hf_values: str = "1,3,5,10"
    smote_k: int = 5
    # paths ("" = unset; synthetic data is the default source)
    data: str = ""
    data_dir: str = ""
    checkpoint: str = ""

    def profile(self) -> SynthProfile:
        layout = []
        try:
            for part in self.layout.split(","):
                start, end, label = part.split("-")
                layout.append((int(start), int(end), label))
        except ValueError:
            raise ConfigError(f"bad layout {self.layout!r}, expected start-end-label[,...]") from None
        return SynthProfile(
            seed=self.seed,
            length=self.length,
            sample_rate=self.sample_rate,
            normal_freqs=_float_tuple("normal_freqs", self.normal_freqs),
            normal_amps=_float_tuple("normal_amps", self.normal_amps),
            abnormal_freq_shift=self.abnormal_freq_shift,
            abnormal_amp_factor=self.abnormal_amp_factor,
            burst_amp=self.burst_amp,
            burst_freq=self.burst_freq,
            burst_period=self.burst_period,
            burst_duty=self.burst_duty,
            noise_sd=self.noise_sd,
            layout=tuple(layout),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            h_e=self.h_e,
            h_f=self.h_f,
            d_h=self.d_h,
            noise_dim=None if self.noise_dim < 0 else self.noise_dim,
            iterations=self.iterations,
            batch_size=None if self.batch_size < 0 else self.batch_size,
            critic_steps=self.critic_steps,
            step_size=self.step_size,
            sq_decay=self.sq_decay,
            clip_c=self.clip_c,
            seed=self.seed,
            optimizer=self.optimizer,
            hidden_width=None if self.hidden_width < 0 else self.hidden_width,
            critic_hidden=self.critic_hidden,
        )

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            kernel=self.kernel,
            epochs=self.epochs,
            step_size=self.classifier_step,
            batch_size=self.classifier_batch,
            seed=self.seed,
            threshold=self.threshold,
        )

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            n=self.n,
            overlap=self.overlap,
            seed=self.seed,
            train=self.train_config(),
            classifier=self.classifier_config(),
            smote_k=self.smote_k,
        )

    def snapshot(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def _float_tuple(name: str, text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x != "")
    except ValueError:
        raise ConfigError(f"bad {name} {text!r}, expected comma-separated reals") from None


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _build_run_config(config_path: str | None, overrides: dict) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    cfg = RunConfig()
    if config_path:
        for key, raw in _parse_config_file(config_path).items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            cfg = replace(cfg, **{key: _convert(known[key].type, key, raw)})
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown override {key!r}")
        cfg = replace(cfg, **{key: value})
    return cfg


def _convert(ftype: str, key: str, raw: str):
    target = {"int": int, "float": float, "str": str}.get(ftype, str)
    try:
        return target(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {ftype}") from None


# ---------------------------------------------------------------------------
# run directories


class RunDir:
    def __init__(self, command: str, cfg: RunConfig, explicit: str | None):
        if explicit:
            self.path = Path(explicit)
        else:
            root = Path(os.environ.get(_RUN_DIR_ENV, "runs"))
            stamp = time.strftime("%Y%m%d-%H%M%S")
            self.path = root / f"{command}-seed{cfg.seed}-{stamp}"
        self.path.mkdir(parents=True, exist_ok=True)
        self._log: list[str] = []
        self._t0 = time.perf_counter()
        (self.path / "resolved-config.txt").write_text(cfg.snapshot(), encoding="utf-8")
        self.log(f"command={command} seed={cfg.seed}")

    def log(self, message: str) -> None:
        self._log.append(f"[{time.perf_counter() - self._t0:9.3f}s] {message}")

    def finish(self) -> None:
        self.log("done")
        (self.path / "run.log").write_text("\n".join(self._log) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# data loading shared by the experiment subcommands


def _load_trials(cfg: RunConfig) -> tuple[SensorSeries, list[SensorSeries]]:
    if cfg.data_dir:
        paths = sorted(Path(cfg.data_dir).glob("trial*.csv"))
        if not paths:
            raise DataError(f"{cfg.data_dir}: no trial*.csv files")
        series = [read_csv(p) for p in paths]
        return series[0], series[1:]
    if cfg.data:
        return read_csv(cfg.data), []
    series = synth_trials(cfg.profile(), cfg.trials)
    return series[0], series[1:]


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth_data(cfg: RunConfig, run: RunDir) -> None:
    series = synth_trials(cfg.profile(), cfg.trials)
    for i, s in enumerate(series, start=1):
        out = run.path / f"trial{i}.csv"
        write_csv(s, out)
        run.log(f"wrote {out}")
    print(f"wrote {len(series)} trial(s) to {run.path}")


def _cmd_train(cfg: RunConfig, run: RunDir) -> None:
    train_trial, _ = _load_trials(cfg)
    ws = window(train_trial, cfg.n, cfg.overlap)
    scaler = fit_scaler(ws)
    abnormal = scaler.apply(ws).abnormal()
    run.log(f"training on {abnormal.count} abnormal windows")
    gen, _critic, report = train(abnormal, cfg.train_config())
    ckpt = run.path / "generator.ckpt"
    save_checkpoint(ckpt, gen, scaler)
    report.checkpoint_path = str(ckpt)
    lines = ["iteration,l_gm,l_d,d_real_mean"]
    lines.extend(
        f"{i},{g:.17g},{d:.17g},{r:.17g}"
        for i, (g, d, r) in enumerate(zip(report.l_gm, report.l_d, report.d_real_mean), start=1)
    )
    (run.path / "loss_history.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    run.log(f"trained {report.iterations} iterations in {report.duration_s:.1f}s; plateau={report.converged_at}")
    print(f"checkpoint: {ckpt}")


def _cmd_generate(cfg: RunConfig, run: RunDir) -> None:
    if not cfg.checkpoint:
        raise ConfigError("generate: --checkpoint is required")
    gen, scaler = load_checkpoint(cfg.checkpoint)
    train_trial, _ = _load_trials(cfg)
    ws = window(train_trial, cfg.n, cfg.overlap)
    if scaler is None:
        scaler = fit_scaler(ws)
    abnormal = scaler.apply(ws).abnormal()
    out_scaled = generate(gen, abnormal, cfg.count, Rng(cfg.seed).split("generate"))
    write_csv(out_scaled, run.path / "generated_scaled.csv")
    write_csv(scaler.invert(out_scaled), run.path / "generated.csv")
    run.log(f"generated {cfg.count} windows")
    print(f"generated windows: {run.path / 'generated.csv'}")


def _cmd_augment_eval(cfg: RunConfig, run: RunDir) -> None:
    train_trial, test_trials = _load_trials(cfg)
    if not test_trials:
        raise DataError("augment-eval needs held-out trials (synthetic trials or a data dir)")
    report = evaluation.benchmark(
        train_trial, test_trials, [cfg.augmenter], cfg.pipeline_config(), cfg.replicates, cfg.jobs
    )
    report.write_rows_csv(run.path / "metrics.csv")
    report.write_cells_csv(run.path / "cells.csv")
    cell = report.cells[0]
    run.log(f"augmenter={cfg.augmenter} mean_f={cell.mean_f:.4f} sd={cell.sd_f:.4f}")
    print(f"{cfg.augmenter}: mean F-score {cell.mean_f:.4f} (sd {cell.sd_f:.4f}) -> {run.path / 'metrics.csv'}")


def _cmd_bench(cfg: RunConfig, run: RunDir) -> None:
    train_trial, test_trials = _load_trials(cfg)
    if not test_trials:
        raise DataError("bench needs held-out trials (synthetic trials or a data dir)")
    augmenters = [a for a in cfg.augmenters.split(",") if a]
    report = evaluation.benchmark(
        train_trial, test_trials, augmenters, cfg.pipeline_config(), cfg.replicates, cfg.jobs
    )
    report.write_rows_csv(run.path / "metrics.csv")
    report.write_cells_csv(run.path / "cells.csv")
    for cell in report.cells:
        run.log(f"augmenter={cell.key[0]} mean_f={cell.mean_f:.4f} sd={cell.sd_f:.4f}")
        print(f"{cell.key[0]:>8}: mean F-score {cell.mean_f:.4f} (sd {cell.sd_f:.4f})")
    print(f"rows: {run.path / 'metrics.csv'}")


def _cmd_sweep_ratio(cfg: RunConfig, run: RunDir) -> None:
    train_trial, test_trials = _load_trials(cfg)
    if not test_trials:
        raise DataError("sweep-ratio needs held-out trials")
    ratios = [float(x) for x in cfg.ratios.split(",") if x]
    report = evaluation.ratio_sweep(
        ratios, train_trial, test_trials, cfg.pipeline_config(), cfg.replicates, cfg.augmenter, cfg.jobs
    )
    report.write_rows_csv(run.path / "metrics.csv")
    report.write_cells_csv(run.path / "cells.csv")
    for cell in report.cells:
        print(f"ratio {cell.key[0]:>5}: mean F-score {cell.mean_f:.4f} (sd {cell.sd_f:.4f})")
    print(f"rows: {run.path / 'metrics.csv'}")


def _cmd_sweep_hp(cfg: RunConfig, run: RunDir) -> None:
    train_trial, test_trials = _load_trials(cfg)
    if not test_trials:
        raise DataError("sweep-hp needs held-out trials")
    he_values = [int(x) for x in cfg.he_values.split(",") if x]
    hf_values = [int(x) for x in cfg.hf_values.split(",") if x]
    report = evaluation.hp_grid(
        he_values, hf_values, train_trial, test_trials, cfg.pipeline_config(), cfg.replicates, cfg.jobs
    )
    report.write_rows_csv(run.path / "metrics.csv")
    report.write_cells_csv(run.path / "cells.csv")
    for cell in report.cells:
        marker = " <- best" if cell.key == report.best else ""
        print(f"h_e={cell.key[0]} h_f={cell.key[1]}: mean F-score {cell.mean_f:.4f} (sd {cell.sd_f:.4f}){marker}")
    run.log(f"best cell: {report.best}")
    print(f"rows: {run.path / 'metrics.csv'}")


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "augment-eval": _cmd_augment_eval,
    "sweep-ratio": _cmd_sweep_ratio,
    "sweep-hp": _cmd_sweep_hp,
    "bench": _cmd_bench,
}

# (flag, RunConfig field, type) triples shared by every subcommand
_OVERRIDES = [
    ("--seed", "seed", int),
    ("--jobs", "jobs", int),
    ("--trials", "trials", int),
    ("--length", "length", int),
    ("--noise-sd", "noise_sd", float),
    ("--layout", "layout", str),
    ("--n", "n", int),
    ("--overlap", "overlap", int),
    ("--he", "h_e", int),
    ("--hf", "h_f", int),
    ("--dh", "d_h", int),
    ("--noise-dim", "noise_dim", int),
    ("--iterations", "iterations", int),
    ("--batch-size", "batch_size", int),
    ("--critic-steps", "critic_steps", int),
    ("--step-size", "step_size", float),
    ("--clip-c", "clip_c", float),
    ("--optimizer", "optimizer", str),
    ("--epochs", "epochs", int),
    ("--classifier-step", "classifier_step", float),
    ("--threshold", "threshold", float),
    ("--count", "count", int),
    ("--replicates", "replicates", int),
    ("--augmenter", "augmenter", str),
    ("--augmenters", "augmenters", str),
    ("--ratios", "ratios", str),
    ("--he-values", "he_values", str),
    ("--hf-values", "hf_values", str),
    ("--smote-k", "smote_k", int),
    ("--data", "data", str),
    ("--data-dir", "data_dir", str),
    ("--checkpoint", "checkpoint", str),
]


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asgan",
        description="Attention-conditioned WGAN augmentation for imbalanced sensor monitoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file; flags override it")
        p.add_argument("--out", default=None, help="exact run directory (default: $ASGAN_RUN_DIR or ./runs)")
        for flag, dest, ftype in _OVERRIDES:
            p.add_argument(flag, dest=dest, type=ftype, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _make_parser().parse_args(argv)
    overrides = {dest: getattr(args, dest) for _, dest, _ in _OVERRIDES}
    try:
        cfg = _build_run_config(args.config, overrides)
        run = RunDir(args.command, cfg, args.out)
        _COMMANDS[args.command](cfg, run)
        run.finish()
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except AsganError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
