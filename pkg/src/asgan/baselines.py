"""Comparison augmenters: SMOTE and the attention-free GAN / WGAN trainers.

The adversarial baselines reuse the shared training harness; they differ
from the attention-stacked model only in the generator input (noise alone)
and, for the plain GAN, in using the sigmoid log-loss instead of the
Wasserstein pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import WindowSet
from .errors import ConfigError, ContractError
from .gan import Critic, PlainGenerator, TrainConfig, TrainReport, _train_adversarial, critic_forward
from .ndcore import Rng, Tensor, sigmoid

__all__ = [
    "SmoteConfig",
    "smote",
    "plain_gan_train",
    "plain_wgan_train",
    "gan_discriminator_prob",
]


@dataclass
class SmoteConfig:
    k: int  # neighbors considered per sample
    count: int  # synthetic samples to generate
    seed: int = 0


def smote(minority: WindowSet, cfg: SmoteConfig) -> WindowSet:
    """Interpolated minority samples: x + u * (x_nn - x), u ~ U(0,1).

    x is a uniformly chosen minority window and x_nn a uniformly chosen one
    of its k Euclidean nearest neighbors, so every synthetic sample lies on
    the segment between its generating pair.
    """
    m = minority.count
    if cfg.k < 1:
        raise ConfigError(f"smote: k must be >= 1, got {cfg.k}")
    if cfg.k >= m:
        raise ConfigError(f"smote: k ({cfg.k}) must be smaller than the minority size ({m})")
    if cfg.count < 1:
        raise ContractError(f"smote: count must be >= 1, got {cfg.count}")

    x = minority.windows
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, : cfg.k]

    rng = Rng(cfg.seed)
    rows = np.empty((cfg.count, x.shape[1]))
    for i in range(cfg.count):
        a = int(rng.integers(0, m))
        b = int(neighbors[a, int(rng.integers(0, cfg.k))])
        u = float(rng.uniform(0.0, 1.0, 1)[0, 0])
        rows[i] = x[a] + u * (x[b] - x[a])
    return WindowSet(rows, minority.n, minority.v, np.ones(cfg.count, dtype=np.int64), minority.scaler)


def plain_wgan_train(abnormal_windows: WindowSet, cfg: TrainConfig) -> tuple[PlainGenerator, Critic, TrainReport]:
    """Wasserstein baseline: same losses, clipping and optimizer, no attention branch."""
    return _train_adversarial(abnormal_windows, cfg, with_attention=False, wasserstein=True)


def plain_gan_train(abnormal_windows: WindowSet, cfg: TrainConfig) -> tuple[PlainGenerator, Critic, TrainReport]:
    """Minimax log-loss baseline with a sigmoid discriminator head, no clipping."""
    return _train_adversarial(abnormal_windows, cfg, with_attention=False, wasserstein=False)


def gan_discriminator_prob(d: Critic, w: Tensor) -> float:
    """The plain GAN's D(x) in (0,1): sigmoid over the raw critic score."""
    return sigmoid(critic_forward(d, w)).item()
