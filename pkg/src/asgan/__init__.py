"""Attention-conditioned WGAN augmentation for imbalanced sensor-window classification.

The package is organized around the augmentation pipeline: ``ndcore`` holds
the tensor/autodiff substrate, ``attention`` the multi-head scoring module,
``gan`` the attention-stacked generator, critic and training loop, ``data``
windowing plus the synthetic benchmark, ``baselines`` the SMOTE/GAN/WGAN
comparison augmenters, ``monitor`` the downstream classifier pipeline and
``evaluation`` the distance diagnostic and sweep harnesses.
"""

from . import attention, baselines, cli, data, evaluation, gan, monitor, ndcore
from .attention import AttentionConfig, MultiHeadAttention, init_attention, multi_head_forward
from .baselines import SmoteConfig, plain_gan_train, plain_wgan_train, smote
from .data import (
    Scaler,
    SensorSeries,
    SynthProfile,
    WindowSet,
    fit_scaler,
    read_csv,
    synth_series,
    synth_trials,
    window,
    write_csv,
)
from .evaluation import benchmark, distance_check, hp_grid, ratio_sweep
from .gan import (
    AttentionStackedGenerator,
    Critic,
    TrainConfig,
    TrainReport,
    generate,
    generator_forward,
    load_checkpoint,
    losses,
    save_checkpoint,
    train,
)
from .monitor import (
    ClassifierConfig,
    ConvClassifier,
    EvalMetrics,
    PipelineConfig,
    augment_and_evaluate,
    f_score,
    train_classifier,
)
from .ndcore import Rng, Tape, Tensor, backward

__version__ = "0.1.0"
