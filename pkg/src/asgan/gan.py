"""Attention-conditioned Wasserstein GAN plus the plain generators it subsumes.

The attention-stacked generator computes the overall attention score of a
real minority window, flattens it, concatenates it with noise, and pushes
the result through a small MLP (ReLU interior, sigmoid last layer), so every
generated entry lies in (0, 1).  The critic is a two-layer MLP with a raw
scalar output; Lipschitz control is weight clipping after each critic
update.  The same training harness also drives the attention-free baselines
(plain WGAN, and plain GAN with the sigmoid log-loss).
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import (
    AttentionConfig,
    AttentionHead,
    MultiHeadAttention,
    glorot_uniform,
    init_attention,
    multi_head_forward,
    multi_head_forward_stacked,
)
from .data import Scaler, WindowSet
from .errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    DataError,
)
from .ndcore import (
    Rng,
    Tape,
    Tensor,
    add,
    backward,
    concat_cols,
    concat_rows,
    matmul,
    mean,
    relu,
    reshape,
    scale,
    sigmoid,
    softplus,
    sub,
    transpose,
)

__all__ = [
    "AttentionStackedGenerator",
    "PlainGenerator",
    "Critic",
    "TrainConfig",
    "TrainReport",
    "generator_forward",
    "plain_generator_forward",
    "critic_forward",
    "losses",
    "train",
    "generate",
    "save_checkpoint",
    "load_checkpoint",
    "RmsProp",
    "Sgd",
]


@dataclass
class AttentionStackedGenerator:
    attention: MultiHeadAttention
    layers: list[tuple[Tensor, Tensor]]  # (W_i, b_i), ReLU interior, sigmoid last
    noise_dim: int
    n: int
    v: int

    @property
    def h_f(self) -> int:
        return len(self.layers)

    def params(self) -> list[Tensor]:
        out = self.attention.params()
        for w, b in self.layers:
            out.extend([w, b])
        return out


@dataclass
class PlainGenerator:
    """Same MLP stack but fed by noise alone (attention branch removed)."""

    layers: list[tuple[Tensor, Tensor]]
    noise_dim: int
    n: int
    v: int

    @property
    def h_f(self) -> int:
        return len(self.layers)

    def params(self) -> list[Tensor]:
        out = []
        for w, b in self.layers:
            out.extend([w, b])
        return out


@dataclass
class Critic:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    clip_c: float

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def clip_weights(self) -> None:
        for p in self.params():
            np.clip(p.data, -self.clip_c, self.clip_c, out=p.data)


@dataclass
class TrainConfig:
    h_e: int = 3
    h_f: int = 1
    d_h: int = 8
    noise_dim: int | None = None  # default n*v
    iterations: int = 7000
    batch_size: int | None = None  # default min(32, dataset size)
    critic_steps: int = 1
    step_size: float = 5e-5
    sq_decay: float = 0.9  # running squared-gradient decay (rmsprop)
    clip_c: float = 0.01
    seed: int = 0
    optimizer: str = "rmsprop"  # or "sgd"
    hidden_width: int | None = None  # interior MLP width, default = input width
    critic_hidden: int = 64
    plateau_window: int = 200
    plateau_rel_change: float = 1e-3

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.critic_steps < 1:
            raise ConfigError(f"critic_steps must be >= 1, got {self.critic_steps}")
        if self.step_size <= 0 or self.clip_c <= 0:
            raise ConfigError("step_size and clip_c must be positive")
        if not 0.0 < self.sq_decay < 1.0:
            raise ConfigError(f"sq_decay must lie in (0,1), got {self.sq_decay}")
        if self.h_e < 1 or self.h_f < 1 or self.d_h < 1:
            raise ConfigError("h_e, h_f and d_h must be >= 1")
        if self.optimizer not in ("rmsprop", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    l_gm: list[float]
    l_d: list[float]
    d_real_mean: list[float]
    duration_s: float
    iterations: int
    converged_at: int | None = None
    checkpoint_path: str | None = None


class RmsProp:
    """Per-parameter adaptive step from a running average of squared gradients."""

    def __init__(self, params: list[Tensor], step_size: float, decay: float, eps: float = 1e-8):
        self.params = params
        self.step_size = step_size
        self.decay = decay
        self.eps = eps
        self.cache = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for p, c in zip(self.params, self.cache):
            if p.grad is None:
                continue
            c *= self.decay
            c += (1.0 - self.decay) * p.grad * p.grad
            p.data -= self.step_size * p.grad / (np.sqrt(c) + self.eps)


class Sgd:
    def __init__(self, params: list[Tensor], step_size: float):
        self.params = params
        self.step_size = step_size

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            p.data -= self.step_size * p.grad


def _make_optimizer(cfg: TrainConfig, params: list[Tensor]):
    if cfg.optimizer == "sgd":
        return Sgd(params, cfg.step_size)
    return RmsProp(params, cfg.step_size, cfg.sq_decay)


# ---------------------------------------------------------------------------
# forward passes (column-batched: samples are columns)


def _mlp_cols(layers: list[tuple[Tensor, Tensor]], x: Tensor) -> Tensor:
    cols = x.shape[1]
    ones_row = Tensor(np.ones((1, cols)))  # bias broadcast as b @ 1^T
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = add(matmul(w, h), matmul(b, ones_row))
        h = sigmoid(h) if i == last else relu(h)
    return h


def _critic_cols(d: Critic, x: Tensor) -> Tensor:
    cols = x.shape[1]
    ones_row = Tensor(np.ones((1, cols)))
    h = relu(add(matmul(d.w1, x), matmul(d.b1, ones_row)))
    return add(matmul(d.w2, h), matmul(d.b2, ones_row))


def generator_forward(g: AttentionStackedGenerator, z: Tensor, x: Tensor) -> Tensor:
    """G_M(Z, X): noise and the flattened attention score of X, through the MLP."""
    if z.shape != (1, g.noise_dim):
        raise ConfigError(f"generator_forward: noise must be (1, {g.noise_dim}), got {z.shape}")
    if x.shape != (g.n, g.v):
        raise ConfigError(f"generator_forward: window must be ({g.n}, {g.v}), got {x.shape}")
    m = multi_head_forward(g.attention, x)
    xin = concat_rows(transpose(z), reshape(m, g.n * g.v, 1))
    out = _mlp_cols(g.layers, xin)
    return reshape(out, g.n, g.v)


def plain_generator_forward(g: PlainGenerator, z: Tensor) -> Tensor:
    if z.shape != (1, g.noise_dim):
        raise ConfigError(f"plain_generator_forward: noise must be (1, {g.noise_dim}), got {z.shape}")
    out = _mlp_cols(g.layers, transpose(z))
    return reshape(out, g.n, g.v)


def critic_forward(d: Critic, w: Tensor) -> Tensor:
    """Raw scalar realness score (no sigmoid head)."""
    width = d.w1.shape[1]
    if w.size != width:
        raise ConfigError(f"critic_forward: window flattens to {w.size}, critic expects {width}")
    return _critic_cols(d, reshape(w, width, 1))


def losses(d_real, d_fake) -> tuple[float, float]:
    """Wasserstein pair: L_GM = -E[D(fake)], L_D = E[D(fake)] - E[D(real)]."""
    d_real = list(d_real)
    d_fake = list(d_fake)
    if not d_real or not d_fake:
        raise ContractError("losses: empty score list")
    fake_mean = float(np.mean(d_fake))
    real_mean = float(np.mean(d_real))
    return -fake_mean, fake_mean - real_mean


# ---------------------------------------------------------------------------
# initialization


def _init_layers(rng: Rng, in_width: int, out_width: int, h_f: int, hidden_width: int | None) -> list[tuple[Tensor, Tensor]]:
    hidden = hidden_width if hidden_width is not None else in_width
    layers = []
    prev = in_width
    for i in range(h_f):
        width = out_width if i == h_f - 1 else hidden
        layers.append((glorot_uniform(rng, width, prev), glorot_uniform(rng, width, 1)))
        prev = width
    return layers


def _init_critic(rng: Rng, in_width: int, hidden: int, clip_c: float) -> Critic:
    return Critic(
        w1=glorot_uniform(rng, hidden, in_width),
        b1=glorot_uniform(rng, hidden, 1),
        w2=glorot_uniform(rng, 1, hidden),
        b2=glorot_uniform(rng, 1, 1),
        clip_c=clip_c,
    )


# ---------------------------------------------------------------------------
# training


def _attention_cols(att: MultiHeadAttention, x_stack: Tensor, n: int, count: int, flat: int) -> Tensor:
    # (count*n, v) stacked windows -> one attention-score column per window
    m = multi_head_forward_stacked(att, x_stack, n)
    return transpose(reshape(m, count, flat))


def _plateau_iteration(l_gm: list[float], l_d: list[float], window: int, rel: float) -> int | None:
    t = len(l_d)
    if t < 2 * window:
        return None
    kernel = np.full(window, 1.0 / window)
    ma_gm = np.convolve(np.asarray(l_gm), kernel, mode="valid")
    ma_d = np.convolve(np.asarray(l_d), kernel, mode="valid")

    def settled(ma: np.ndarray, i: int) -> bool:
        prev = ma[i - window]
        return abs(ma[i] - prev) / max(abs(prev), 1e-12) < rel

    for i in range(window, ma_d.shape[0]):
        if settled(ma_gm, i) and settled(ma_d, i):
            return i + window  # index back into iteration space
    return None


def _train_adversarial(
    abnormal_windows: WindowSet,
    cfg: TrainConfig,
    *,
    with_attention: bool,
    wasserstein: bool,
):
    cfg.validate()
    ws = abnormal_windows
    if ws.count == 0:
        raise ContractError("train: empty window set")
    if ws.windows.min() < 0.0 or ws.windows.max() > 1.0:
        raise DataError("train: windows must be scaled to [0, 1] before training")

    n, v = ws.n, ws.v
    flat = n * v
    noise_dim = cfg.noise_dim if cfg.noise_dim is not None else flat
    batch = cfg.batch_size if cfg.batch_size is not None else min(32, ws.count)

    rng = Rng(cfg.seed)
    if with_attention:
        att = init_attention(AttentionConfig(cfg.h_e, cfg.d_h, n, v), rng.split("attention-init"))
        gen_in = noise_dim + flat
        gen = AttentionStackedGenerator(
            attention=att,
            layers=_init_layers(rng.split("generator-init"), gen_in, flat, cfg.h_f, cfg.hidden_width),
            noise_dim=noise_dim,
            n=n,
            v=v,
        )
    else:
        gen = PlainGenerator(
            layers=_init_layers(rng.split("generator-init"), noise_dim, flat, cfg.h_f, cfg.hidden_width),
            noise_dim=noise_dim,
            n=n,
            v=v,
        )
    critic = _init_critic(rng.split("critic-init"), flat, cfg.critic_hidden, cfg.clip_c)

    opt_g = _make_optimizer(cfg, gen.params())
    opt_d = _make_optimizer(cfg, critic.params())
    rng_batch = rng.split("batches")
    rng_noise = rng.split("noise")

    def stack_windows(idx: np.ndarray) -> Tensor:
        return Tensor(ws.windows[idx].reshape(len(idx) * n, v))

    def fake_cols_data(x_stack: Tensor, count: int) -> np.ndarray:
        # detached fakes: computed outside any tape
        z = Tensor(rng_noise.normal(noise_dim, count))
        if with_attention:
            xin = concat_rows(z, _attention_cols(gen.attention, x_stack, n, count, flat))
        else:
            xin = z
        return _mlp_cols(gen.layers, xin).data

    l_gm_hist: list[float] = []
    l_d_hist: list[float] = []
    d_real_hist: list[float] = []
    started = time.perf_counter()

    for _ in range(cfg.iterations):
        if ws.count >= batch:
            idx = rng_batch.permutation(ws.count)[:batch]
        else:
            idx = rng_batch.integers(0, ws.count, batch)
        real_cols = Tensor(ws.windows[idx].T)
        x_stack = stack_windows(idx)

        first_fake_scores: np.ndarray | None = None
        for _k in range(cfg.critic_steps):
            fakes = Tensor(fake_cols_data(x_stack, batch))
            tape = Tape()
            with tape:
                s_fake = _critic_cols(critic, fakes)
                s_real = _critic_cols(critic, real_cols)
                if wasserstein:
                    l_d = sub(mean(s_fake), mean(s_real))
                else:
                    # -[E log sigma(s_real) + E log(1 - sigma(s_fake))]
                    l_d = add(mean(softplus(scale(s_real, -1.0))), mean(softplus(s_fake)))
                backward(l_d, tape)
            if first_fake_scores is None:
                first_fake_scores = s_fake.data.copy()
                l_d_hist.append(l_d.item())
                d_real_hist.append(float(s_real.data.mean()))
            opt_d.step()
            tape.clear()
            if wasserstein:
                critic.clip_weights()

        if wasserstein:
            l_gm_hist.append(-float(first_fake_scores.mean()))
        else:
            l_gm_hist.append(-float(np.logaddexp(0.0, first_fake_scores).mean()))

        z = Tensor(rng_noise.normal(noise_dim, batch))
        tape = Tape()
        with tape:
            if with_attention:
                xin = concat_rows(z, _attention_cols(gen.attention, x_stack, n, batch, flat))
            else:
                xin = z
            g_fake = _mlp_cols(gen.layers, xin)
            s_fake = _critic_cols(critic, g_fake)
            if wasserstein:
                l_g = scale(mean(s_fake), -1.0)
            else:
                # E log(1 - sigma(s_fake)) = -E softplus(s_fake), minimized
                l_g = scale(mean(softplus(s_fake)), -1.0)
            backward(l_g, tape)
        opt_g.step()
        tape.clear()

    report = TrainReport(
        l_gm=l_gm_hist,
        l_d=l_d_hist,
        d_real_mean=d_real_hist,
        duration_s=time.perf_counter() - started,
        iterations=cfg.iterations,
        converged_at=_plateau_iteration(l_gm_hist, l_d_hist, cfg.plateau_window, cfg.plateau_rel_change),
    )
    return gen, critic, report


def train(abnormal_windows: WindowSet, cfg: TrainConfig):
    """Adversarial training of the attention-stacked generator on minority windows.

    Each iteration samples a batch (with replacement when the dataset is
    smaller than the batch), updates the critic on the Wasserstein loss and
    clips its weights, then updates the generator.  Histories record the
    Eq.-style losses evaluated on the batch before this iteration's updates,
    so l_gm + l_d always equals -mean(critic(real)) exactly.
    """
    return _train_adversarial(abnormal_windows, cfg, with_attention=True, wasserstein=True)


def generate(g, abnormal_windows: WindowSet, count: int, rng: Rng) -> WindowSet:
    """Draw synthetic abnormal windows from a trained generator.

    For the attention-stacked generator each output resamples one real
    abnormal window (uniformly, with replacement) as the conditioning input;
    plain generators use fresh noise only.  Outputs stay in the scaled (0,1)
    domain; invert via the window set's scaler when raw units are needed.
    """
    if count < 1:
        raise ContractError(f"generate: count must be >= 1, got {count}")
    if abnormal_windows.count == 0:
        raise ContractError("generate: empty conditioning set")
    n, v = abnormal_windows.n, abnormal_windows.v
    rows = np.empty((count, n * v))
    conditioned = isinstance(g, AttentionStackedGenerator)
    for i in range(count):
        if conditioned:
            j = int(rng.integers(0, abnormal_windows.count))
            x = Tensor(abnormal_windows.window_matrix(j))
            z = Tensor(rng.normal(g.noise_dim).T)
            out = generator_forward(g, z, x)
        else:
            z = Tensor(rng.normal(g.noise_dim).T)
            out = plain_generator_forward(g, z)
        rows[i] = out.data.reshape(-1)
    return WindowSet(rows, n, v, np.ones(count, dtype=np.int64), abnormal_windows.scaler)


# ---------------------------------------------------------------------------
# checkpoint format: little-endian, magic "ASG1", length-prefixed header,
# then (rows, cols, data) weight blocks in declaration order.

_MAGIC = b"ASG1"
_VERSION = 1
_KIND_ATTENTION = 0
_KIND_PLAIN = 1


def _pack_u64(*vals: int) -> bytes:
    return struct.pack("<" + "Q" * len(vals), *vals)


def _blocks_of(gen) -> list[Tensor]:
    blocks: list[Tensor] = []
    if isinstance(gen, AttentionStackedGenerator):
        for h in gen.attention.heads:
            blocks.extend([h.wq, h.wk, h.wv])
        blocks.append(gen.attention.wo)
    for w, b in gen.layers:
        blocks.extend([w, b])
    return blocks


def save_checkpoint(path, gen, scaler: Scaler | None = None) -> None:
    """Serialize a trained generator (and the scaler it was trained behind)."""
    if isinstance(gen, AttentionStackedGenerator):
        kind, h_e, d_h = _KIND_ATTENTION, gen.attention.h_e, gen.attention.d_h
    elif isinstance(gen, PlainGenerator):
        kind, h_e, d_h = _KIND_PLAIN, 0, 0
    else:
        raise ContractError(f"save_checkpoint: unsupported generator type {type(gen).__name__}")
    sc = 0 if scaler is None else scaler.v
    header = _pack_u64(_VERSION, kind, h_e, d_h, gen.h_f, gen.n, gen.v, gen.noise_dim, sc)
    if scaler is not None:
        header += scaler.mins.astype("<f8").tobytes() + scaler.maxs.astype("<f8").tobytes()
    blocks = _blocks_of(gen)
    body = [_MAGIC, _pack_u64(len(header)), header, _pack_u64(len(blocks))]
    for t in blocks:
        rows, cols = t.shape
        body.append(_pack_u64(rows, cols))
        body.append(t.data.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, nbytes: int) -> bytes:
        if self.pos + nbytes > len(self.buf):
            raise CheckpointFormatError(
                f"truncated checkpoint: needed {nbytes} bytes at offset {self.pos}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()


def load_checkpoint(path, expect_n: int | None = None, expect_v: int | None = None):
    """Load a generator checkpoint; returns (generator, scaler_or_None)."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != _MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic)")
    header_len = r.u64()
    header_end = r.pos + header_len
    version = r.u64()
    if version != _VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, supported: {_VERSION}")
    kind = r.u64()
    if kind not in (_KIND_ATTENTION, _KIND_PLAIN):
        raise CheckpointFormatError(f"{path}: unknown model kind {kind}")
    h_e, d_h, h_f, n, v, noise_dim, sc = (r.u64() for _ in range(7))
    scaler = None
    if sc:
        mins = r.f64s(sc)
        maxs = r.f64s(sc)
        scaler = Scaler(mins, maxs)
    if r.pos != header_end:
        raise CheckpointFormatError(f"{path}: header length mismatch ({r.pos - (header_end - header_len)} read, {header_len} declared)")
    if expect_n is not None and n != expect_n:
        raise CheckpointShapeError(f"{path}: window length mismatch: expected n={expect_n}, found n={n}")
    if expect_v is not None and v != expect_v:
        raise CheckpointShapeError(f"{path}: channel mismatch: expected v={expect_v}, found v={v}")

    n_blocks = r.u64()

    def read_block(expect_shape: tuple[int, int] | None, what: str) -> Tensor:
        rows, cols = r.u64(), r.u64()
        if expect_shape is not None and (rows, cols) != expect_shape:
            raise CheckpointShapeError(
                f"{path}: {what}: expected shape {expect_shape}, found ({rows}, {cols})"
            )
        return Tensor(r.f64s(rows * cols).reshape(rows, cols), requires_grad=True)

    flat = n * v
    if kind == _KIND_ATTENTION:
        expected_blocks = 3 * h_e + 1 + 2 * h_f
        if n_blocks != expected_blocks:
            raise CheckpointShapeError(f"{path}: expected {expected_blocks} weight blocks, found {n_blocks}")
        heads = [
            AttentionHead(
                wq=read_block((v, d_h), f"head {i} wq"),
                wk=read_block((v, d_h), f"head {i} wk"),
                wv=read_block((v, d_h), f"head {i} wv"),
            )
            for i in range(h_e)
        ]
        wo = read_block((h_e * d_h, v), "output projection")
        att = MultiHeadAttention(heads=heads, wo=wo, d_scale=float(flat))
        prev = noise_dim + flat
    else:
        expected_blocks = 2 * h_f
        if n_blocks != expected_blocks:
            raise CheckpointShapeError(f"{path}: expected {expected_blocks} weight blocks, found {n_blocks}")
        prev = noise_dim

    layers = []
    for i in range(h_f):
        w = read_block(None, f"layer {i} weight")
        if w.shape[1] != prev:
            raise CheckpointShapeError(
                f"{path}: layer {i} weight: expected {prev} input columns, found {w.shape[1]}"
            )
        if i == h_f - 1 and w.shape[0] != flat:
            raise CheckpointShapeError(
                f"{path}: last layer: expected {flat} output rows, found {w.shape[0]}"
            )
        b = read_block((w.shape[0], 1), f"layer {i} bias")
        layers.append((w, b))
        prev = w.shape[0]

    if r.pos != len(r.buf):
        raise CheckpointFormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes after weight blocks")

    if kind == _KIND_ATTENTION:
        return AttentionStackedGenerator(attention=att, layers=layers, noise_dim=noise_dim, n=n, v=v), scaler
    return PlainGenerator(layers=layers, noise_dim=noise_dim, n=n, v=v), scaler
