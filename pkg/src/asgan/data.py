"""Sensor series ingestion, windowing, scaling, and the synthetic benchmark.

The synthetic generator stands in for a proprietary accelerometer dataset:
two regimes built from the same pair of sinusoids plus Gaussian noise, the
anomalous one with a small frequency shift, a mildly reduced amplitude and a
gated high-frequency burst.  The regimes are calibrated so their per-sample
value ranges overlap almost completely (no visible scale difference) while
windows remain separable by a small convolutional classifier.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError, ParseError
from .ndcore import Rng

__all__ = [
    "LABEL_NORMAL",
    "LABEL_ABNORMAL",
    "LABEL_UNLABELED",
    "Segment",
    "SensorSeries",
    "WindowSet",
    "Scaler",
    "SynthProfile",
    "DataWarning",
    "window",
    "fit_scaler",
    "synth_series",
    "synth_trials",
    "read_csv",
    "write_csv",
    "read_window_csv",
]

LABEL_NORMAL = "normal"
LABEL_ABNORMAL = "abnormal"
LABEL_UNLABELED = "unlabeled"

_LABEL_CODE = {LABEL_NORMAL: 0, LABEL_ABNORMAL: 1}


class DataWarning(UserWarning):
    pass


@dataclass
class Segment:
    start: int
    end: int  # exclusive
    label: str


@dataclass
class SensorSeries:
    """A v-channel series of length L with labeled, non-overlapping segments."""

    values: np.ndarray  # (L, v)
    sample_rate: float
    segments: list[Segment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values.reshape(-1, 1)
        length = self.values.shape[0]
        spans = sorted((s.start, s.end) for s in self.segments)
        for i, seg in enumerate(self.segments):
            if seg.label not in _LABEL_CODE:
                raise DataError(f"segment {i}: unknown label {seg.label!r}")
            if not (0 <= seg.start < seg.end <= length):
                raise DataError(f"segment {i}: span [{seg.start}, {seg.end}) outside [0, {length})")
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise DataError(f"segments overlap near index {s1}")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def sample_labels(self) -> list[str]:
        labels = [LABEL_UNLABELED] * self.length
        for seg in self.segments:
            for i in range(seg.start, seg.end):
                labels[i] = seg.label
        return labels


@dataclass
class WindowSet:
    """count windows of n samples by v channels, flattened row-major."""

    windows: np.ndarray  # (count, n*v)
    n: int
    v: int
    labels: np.ndarray  # (count,) 0=normal, 1=abnormal
    scaler: "Scaler | None" = None

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64).reshape(-1, self.n * self.v)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.windows.shape[0]:
            raise DataError(
                f"window/label counts disagree: {self.windows.shape[0]} vs {self.labels.shape[0]}"
            )

    @property
    def count(self) -> int:
        return self.windows.shape[0]

    def window_matrix(self, i: int) -> np.ndarray:
        return self.windows[i].reshape(self.n, self.v)

    def subset(self, mask: np.ndarray) -> "WindowSet":
        return WindowSet(self.windows[mask], self.n, self.v, self.labels[mask], self.scaler)

    def abnormal(self) -> "WindowSet":
        return self.subset(self.labels == 1)

    def normal(self) -> "WindowSet":
        return self.subset(self.labels == 0)

    def concat(self, other: "WindowSet") -> "WindowSet":
        if (self.n, self.v) != (other.n, other.v):
            raise DataError(f"cannot concat window sets of shape ({self.n},{self.v}) and ({other.n},{other.v})")
        return WindowSet(
            np.concatenate([self.windows, other.windows], axis=0),
            self.n,
            self.v,
            np.concatenate([self.labels, other.labels]),
            self.scaler if self.scaler is not None else other.scaler,
        )


class Scaler:
    """Per-channel affine map onto [0, 1] fitted from training windows.

    Out-of-range values (possible on held-out trials) are clamped; every
    clamped entry increments ``clamp_count`` so drift stays observable.
    """

    def __init__(self, mins: np.ndarray, maxs: np.ndarray):
        self.mins = np.asarray(mins, dtype=np.float64).reshape(-1)
        self.maxs = np.asarray(maxs, dtype=np.float64).reshape(-1)
        if np.any(self.maxs <= self.mins):
            bad = int(np.argmax(self.maxs <= self.mins))
            raise DataError(f"degenerate channel {bad}: max ({self.maxs[bad]}) <= min ({self.mins[bad]})")
        self.clamp_count = 0

    @property
    def v(self) -> int:
        return self.mins.shape[0]

    def apply(self, ws: WindowSet) -> WindowSet:
        x = ws.windows.reshape(ws.count, ws.n, ws.v)
        scaled = (x - self.mins) / (self.maxs - self.mins)
        out_of_range = int(np.sum((scaled < 0.0) | (scaled > 1.0)))
        self.clamp_count += out_of_range
        scaled = np.clip(scaled, 0.0, 1.0)
        return WindowSet(scaled.reshape(ws.count, ws.n * ws.v), ws.n, ws.v, ws.labels.copy(), self)

    def invert(self, ws: WindowSet) -> WindowSet:
        x = ws.windows.reshape(ws.count, ws.n, ws.v)
        raw = x * (self.maxs - self.mins) + self.mins
        return WindowSet(raw.reshape(ws.count, ws.n * ws.v), ws.n, ws.v, ws.labels.copy(), None)


def fit_scaler(train: WindowSet) -> Scaler:
    """Channel-wise min/max from the fitting set only."""
    if train.count == 0:
        raise ContractError("fit_scaler: empty window set")
    x = train.windows.reshape(train.count, train.n, train.v)
    return Scaler(x.min(axis=(0, 1)), x.max(axis=(0, 1)))


def window(series: SensorSeries, n: int, overlap: int) -> WindowSet:
    """Slice every labeled segment into overlapping windows of n samples.

    stride = n - overlap; a segment of length Ls yields (Ls-n)//stride + 1
    windows, all carrying the segment's label.  Windows never straddle a
    segment boundary.  Segments shorter than n contribute nothing and raise
    a DataWarning.
    """
    if not 0 <= overlap < n:
        raise ConfigError(f"window: need 0 <= overlap < n, got overlap={overlap} n={n}")
    stride = n - overlap
    rows: list[np.ndarray] = []
    labels: list[int] = []
    for seg in series.segments:
        ls = seg.end - seg.start
        if ls < n:
            warnings.warn(
                f"segment [{seg.start}, {seg.end}) shorter than window size {n}; skipped",
                DataWarning,
                stacklevel=2,
            )
            continue
        for start in range(seg.start, seg.end - n + 1, stride):
            rows.append(series.values[start : start + n].reshape(-1))
            labels.append(_LABEL_CODE[seg.label])
    if rows:
        mat = np.stack(rows)
    else:
        mat = np.zeros((0, n * series.channels))
    return WindowSet(mat, n, series.channels, np.array(labels, dtype=np.int64))


# ---------------------------------------------------------------------------
# synthetic benchmark


@dataclass(frozen=True)
class SynthProfile:
    """Recipe for one synthetic trial.

    The default layout places a 268-sample normal segment and a 108-sample
    anomalous segment inside an 850-sample recording (roughly 70/30 between
    the labeled regimes), which windows into 120 normal / 40 abnormal
    samples at n=30, overlap=28.  The anomaly is a frequency shift that
    builds up over the start of the segment plus a gated high-frequency
    burst and a slightly reduced amplitude; per-sample value ranges of the
    two regimes stay nearly identical, so single-sample statistics cannot
    separate them.
    """

    seed: int = 0
    length: int = 850
    sample_rate: float = 1.0
    normal_freqs: tuple[float, ...] = (0.085, 0.21)
    normal_amps: tuple[float, ...] = (1.0, 0.55)
    freq_jitter: float = 0.01  # per-series uniform frequency perturbation
    abnormal_freq_shift: float = 0.05  # shift reached after the onset ramp
    shift_ramp_frac: float = 0.3  # fraction of the segment over which the shift builds up
    abnormal_amp_factor: float = 0.9
    burst_amp: float = 0.12
    burst_freq: float = 0.37
    burst_period: int = 24
    burst_duty: float = 0.35
    noise_sd: float = 0.15
    layout: tuple[tuple[int, int, str], ...] = ((42, 310, LABEL_NORMAL), (552, 660, LABEL_ABNORMAL))


def _shift_phase(profile: SynthProfile, local: np.ndarray, seg_len: int) -> np.ndarray:
    # accumulated phase of the anomaly chirp: the frequency shift ramps from 0
    # to abnormal_freq_shift over the first shift_ramp_frac of the segment,
    # then stays there, so early windows are near-normal and later ones are not
    ramp = max(profile.shift_ramp_frac * seg_len, 1e-9)
    total = profile.abnormal_freq_shift
    integrated = np.where(
        local < ramp,
        total * local * local / (2.0 * ramp),
        total * (ramp / 2.0 + (local - ramp)),
    )
    return 2.0 * math.pi * integrated


def _regime_values(
    profile: SynthProfile, t: np.ndarray, abnormal: bool, phases: np.ndarray, jitter: np.ndarray
) -> np.ndarray:
    out = np.zeros_like(t)
    amp_factor = profile.abnormal_amp_factor if abnormal else 1.0
    if abnormal:
        local = np.arange(t.shape[0], dtype=np.float64)
        extra_phase = _shift_phase(profile, local, t.shape[0])
    else:
        extra_phase = 0.0
    for amp, freq, phase, dj in zip(profile.normal_amps, profile.normal_freqs, phases, jitter):
        out += amp_factor * amp * np.sin(2.0 * math.pi * (freq + dj) * t + extra_phase + phase)
    if abnormal:
        idx = np.arange(t.shape[0])
        gate = (idx % profile.burst_period) < profile.burst_duty * profile.burst_period
        out += profile.burst_amp * np.sin(2.0 * math.pi * profile.burst_freq * t) * gate
    return out


def synth_series(profile: SynthProfile) -> SensorSeries:
    """Deterministic one-channel series following the profile's layout."""
    if profile.length < 2:
        raise ConfigError(f"synth_series: length {profile.length} too short")
    if len(profile.normal_amps) != len(profile.normal_freqs):
        raise ConfigError("synth_series: amplitude and frequency lists must pair up")
    segments = [Segment(start, end, label) for start, end, label in profile.layout]
    for seg in segments:
        if not (0 <= seg.start < seg.end <= profile.length):
            raise ConfigError(f"synth_series: segment [{seg.start}, {seg.end}) outside series")
    rng = Rng(profile.seed)
    n_sines = len(profile.normal_freqs)
    phases = rng.split("phase").uniform(0.0, 2.0 * math.pi, n_sines).reshape(-1)
    jitter = rng.split("freq-jitter").uniform(-profile.freq_jitter, profile.freq_jitter, n_sines).reshape(-1)
    t = np.arange(profile.length) / profile.sample_rate
    values = _regime_values(profile, t, abnormal=False, phases=phases, jitter=jitter)
    for seg in segments:
        if seg.label == LABEL_ABNORMAL:
            sl = slice(seg.start, seg.end)
            values[sl] = _regime_values(profile, t[sl], abnormal=True, phases=phases, jitter=jitter)
    values = values + profile.noise_sd * rng.split("noise").normal(profile.length).reshape(-1)
    return SensorSeries(values.reshape(-1, 1), profile.sample_rate, segments)


def synth_trials(profile: SynthProfile, count: int) -> list[SensorSeries]:
    """Independent trials sharing the profile; trial i reseeds from split('trial-i')."""
    master = Rng(profile.seed)
    return [
        synth_series(replace(profile, seed=master.split(f"trial-{i}").seed)) for i in range(1, count + 1)
    ]


def regime_range_overlap(series: SensorSeries) -> float:
    """Jaccard overlap of the normal and abnormal per-sample value ranges."""
    by_label: dict[str, list[np.ndarray]] = {LABEL_NORMAL: [], LABEL_ABNORMAL: []}
    for seg in series.segments:
        by_label[seg.label].append(series.values[seg.start : seg.end])
    if not by_label[LABEL_NORMAL] or not by_label[LABEL_ABNORMAL]:
        raise ContractError("range overlap needs both regimes present")
    ranges = {}
    for label, chunks in by_label.items():
        allv = np.concatenate(chunks)
        ranges[label] = (float(allv.min()), float(allv.max()))
    lo_n, hi_n = ranges[LABEL_NORMAL]
    lo_a, hi_a = ranges[LABEL_ABNORMAL]
    inter = max(0.0, min(hi_n, hi_a) - max(lo_n, lo_a))
    union = max(hi_n, hi_a) - min(lo_n, lo_a)
    return inter / union if union > 0 else 1.0


# ---------------------------------------------------------------------------
# CSV interchange: header t,ch0[,ch1...],label with 17-significant-digit reals


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_csv(obj, path) -> None:
    """Write a SensorSeries (t,ch*,label rows) or a WindowSet (one row per window)."""
    path = Path(path)
    if isinstance(obj, SensorSeries):
        labels = obj.sample_labels()
        header = "t," + ",".join(f"ch{c}" for c in range(obj.channels)) + ",label"
        lines = [header]
        for i in range(obj.length):
            cells = [_fmt(i / obj.sample_rate)]
            cells.extend(_fmt(x) for x in obj.values[i])
            cells.append(labels[i])
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif isinstance(obj, WindowSet):
        header = "window,n,v,label," + ",".join(f"x{j}" for j in range(obj.n * obj.v))
        lines = [header]
        code_to_label = {v: k for k, v in _LABEL_CODE.items()}
        for i in range(obj.count):
            cells = [str(i), str(obj.n), str(obj.v), code_to_label[int(obj.labels[i])]]
            cells.extend(_fmt(x) for x in obj.windows[i])
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ContractError(f"write_csv: unsupported object type {type(obj).__name__}")


def read_csv(path) -> SensorSeries:
    """Parse the series CSV format; the sample rate is recovered from timestamp spacing."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        raise DataError(f"{path}: empty input")
    header = lines[0].split(",")
    if len(header) < 3 or header[0] != "t" or header[-1] != "label":
        raise ParseError(f"bad header {lines[0]!r}, expected t,ch0[,...],label", line=1)
    channels = len(header) - 2
    ts: list[float] = []
    values: list[list[float]] = []
    labels: list[str] = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != channels + 2:
            raise ParseError(f"expected {channels + 2} cells, got {len(cells)}", line=lineno)
        try:
            ts.append(float(cells[0]))
            values.append([float(c) for c in cells[1:-1]])
        except ValueError as exc:
            raise ParseError(f"non-numeric cell ({exc})", line=lineno) from None
        label = cells[-1]
        if label not in (LABEL_NORMAL, LABEL_ABNORMAL, LABEL_UNLABELED):
            raise ParseError(f"unknown label {label!r}", line=lineno)
        labels.append(label)
    if not values:
        raise DataError(f"{path}: no data rows")
    rate = 1.0 / (ts[1] - ts[0]) if len(ts) > 1 else 1.0
    segments: list[Segment] = []
    run_start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[run_start]:
            if labels[run_start] != LABEL_UNLABELED:
                segments.append(Segment(run_start, i, labels[run_start]))
            run_start = i
    return SensorSeries(np.array(values), rate, segments)


def read_window_csv(path) -> WindowSet:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        raise DataError(f"{path}: empty input")
    header = lines[0].split(",")
    if header[:4] != ["window", "n", "v", "label"]:
        raise ParseError(f"bad header {lines[0]!r}", line=1)
    rows, labels = [], []
    n = v = None
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        try:
            n, v = int(cells[1]), int(cells[2])
            if cells[3] not in _LABEL_CODE:
                raise ParseError(f"unknown label {cells[3]!r}", line=lineno)
            if len(cells) != 4 + n * v:
                raise ParseError(f"expected {4 + n * v} cells, got {len(cells)}", line=lineno)
            labels.append(_LABEL_CODE[cells[3]])
            rows.append([float(c) for c in cells[4:]])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad window row ({exc})", line=lineno) from None
    if n is None:
        raise DataError(f"{path}: no data rows")
    return WindowSet(np.array(rows), n, v, np.array(labels, dtype=np.int64))
