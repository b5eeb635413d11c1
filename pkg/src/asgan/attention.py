"""Multi-head attention producing the overall attention score of a window.

Each head projects the (n, v) window into queries, keys and values, forms
row-stochastic weights softmax(Q K^T / sqrt(d)) with d = n*v, and applies
them to the values.  Head outputs are concatenated column-wise and projected
back to the window shape, so the overall score M(X) always matches X's shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, ShapeError
from .ndcore import Rng, Tensor, block_attention, concat_cols, matmul, scale, softmax_rows, transpose

__all__ = [
    "AttentionConfig",
    "AttentionHead",
    "MultiHeadAttention",
    "head_forward",
    "multi_head_forward",
    "multi_head_forward_stacked",
    "init_attention",
    "glorot_uniform",
]


@dataclass
class AttentionConfig:
    h_e: int  # number of heads
    d_h: int  # per-head projection width
    n: int  # window rows
    v: int  # channels


@dataclass
class AttentionHead:
    wq: Tensor
    wk: Tensor
    wv: Tensor

    @property
    def d_h(self) -> int:
        return self.wq.shape[1]


@dataclass
class MultiHeadAttention:
    heads: list[AttentionHead]
    wo: Tensor  # (h_e*d_h, v)
    d_scale: float  # n*v, the scaling constant under the square root

    @property
    def h_e(self) -> int:
        return len(self.heads)

    @property
    def d_h(self) -> int:
        return self.heads[0].d_h

    @property
    def v(self) -> int:
        return self.wo.shape[1]

    def params(self) -> list[Tensor]:
        out = []
        for h in self.heads:
            out.extend([h.wq, h.wk, h.wv])
        out.append(self.wo)
        return out


def head_forward(head: AttentionHead, x: Tensor, d_scale: float) -> Tensor:
    """One head's attention score: softmax(Q K^T / sqrt(d_scale)) V."""
    if x.shape[1] != head.wq.shape[0]:
        raise ShapeError(f"head_forward: input has {x.shape[1]} columns, weights expect {head.wq.shape[0]}")
    if d_scale <= 0:
        raise ConfigError(f"head_forward: d_scale must be positive, got {d_scale}")
    q = matmul(x, head.wq)
    k = matmul(x, head.wk)
    v = matmul(x, head.wv)
    weights = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_scale)))
    return matmul(weights, v)


def multi_head_forward(m: MultiHeadAttention, x: Tensor) -> Tensor:
    """Overall attention score M(X): concatenated head outputs times the output projection."""
    if x.shape[1] != m.wo.shape[1]:
        raise ShapeError(f"multi_head_forward: input has {x.shape[1]} columns, configured for {m.wo.shape[1]}")
    scores = [head_forward(h, x, m.d_scale) for h in m.heads]
    stacked = scores[0] if len(scores) == 1 else concat_cols(*scores)
    if stacked.shape[1] != m.wo.shape[0]:
        raise ShapeError(
            f"multi_head_forward: concatenated heads have {stacked.shape[1]} columns, "
            f"output projection expects {m.wo.shape[0]}"
        )
    return matmul(stacked, m.wo)


def multi_head_forward_stacked(m: MultiHeadAttention, x_stack: Tensor, n: int) -> Tensor:
    """M(X) for many windows at once: x_stack is (count*n, v), windows
    stacked vertically; each n-row block attends only within itself.

    Numerically identical to running multi_head_forward per window, but one
    fused op sequence per head instead of one chain per window.
    """
    if x_stack.shape[1] != m.wo.shape[1]:
        raise ShapeError(f"stacked input has {x_stack.shape[1]} columns, configured for {m.wo.shape[1]}")
    inv_sqrt_d = 1.0 / math.sqrt(m.d_scale)
    scores = []
    for h in m.heads:
        q = matmul(x_stack, h.wq)
        k = matmul(x_stack, h.wk)
        v = matmul(x_stack, h.wv)
        scores.append(block_attention(q, k, v, n, inv_sqrt_d))
    stacked = scores[0] if len(scores) == 1 else concat_cols(*scores)
    return matmul(stacked, m.wo)


def glorot_uniform(rng: Rng, rows: int, cols: int) -> Tensor:
    """Weight matrix drawn uniformly on +-sqrt(6/(fan_in+fan_out))."""
    bound = math.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, rows, cols), requires_grad=True)


def init_attention(cfg: AttentionConfig, rng: Rng) -> MultiHeadAttention:
    """Fresh attention weights, deterministic given the rng stream."""
    if cfg.h_e < 1 or cfg.d_h < 1 or cfg.n < 1 or cfg.v < 1:
        raise ConfigError(f"init_attention: all dimensions must be positive, got {cfg}")
    heads = [
        AttentionHead(
            wq=glorot_uniform(rng, cfg.v, cfg.d_h),
            wk=glorot_uniform(rng, cfg.v, cfg.d_h),
            wv=glorot_uniform(rng, cfg.v, cfg.d_h),
        )
        for _ in range(cfg.h_e)
    ]
    wo = glorot_uniform(rng, cfg.h_e * cfg.d_h, cfg.v)
    return MultiHeadAttention(heads=heads, wo=wo, d_scale=float(cfg.n * cfg.v))
