"""Downstream monitoring: balance the training windows, train a small CNN,
score held-out trials.

The classifier is fixed at two 1-d convolution layers followed by three
affine layers with a sigmoid head; the abnormal state is the positive class
throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import SmoteConfig, plain_gan_train, plain_wgan_train, smote
from .data import Scaler, SensorSeries, WindowSet, fit_scaler, window
from .errors import ConfigError, ContractError, DataError
from .gan import TrainConfig, generate, train
from .ndcore import (
    Rng,
    Tape,
    Tensor,
    add,
    backward,
    concat_cols,
    im2col1d,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    softplus,
    sub,
    transpose,
)
from .attention import glorot_uniform

__all__ = [
    "ClassifierConfig",
    "ConvClassifier",
    "EvalMetrics",
    "PipelineConfig",
    "AUGMENTERS",
    "conv1d_forward",
    "classifier_forward",
    "predict_prob",
    "train_classifier",
    "f_score",
    "augment_and_evaluate",
    "METRICS_HEADER",
    "metrics_csv_row",
]

AUGMENTERS = ("none", "oracle", "smote", "gan", "wgan", "asgan")


@dataclass
class ClassifierConfig:
    kernel: int = 5
    channels: tuple[int, int] = (4, 8)
    hidden: tuple[int, int] = (32, 16)
    stride: int = 1
    epochs: int = 200
    step_size: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    threshold: float = 0.5


@dataclass
class ConvClassifier:
    conv1_w: Tensor  # (c1, v*kernel)
    conv1_b: Tensor
    conv2_w: Tensor  # (c2, c1*kernel)
    conv2_b: Tensor
    fc: list[tuple[Tensor, Tensor]]  # three affine layers, last one scalar
    kernel: int
    stride: int
    n: int
    v: int

    def params(self) -> list[Tensor]:
        out = [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b]
        for w, b in self.fc:
            out.extend([w, b])
        return out


def conv1d_forward(signal: Tensor, kernels: Tensor, k: int, stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Valid (no padding) cross-correlation over a (channels, length) signal.

    ``kernels`` holds one flattened (c_in*k) filter per output channel row.
    """
    cols = im2col1d(signal, k, stride)
    if kernels.shape[1] != cols.shape[0]:
        raise ConfigError(
            f"conv1d_forward: kernels expect {kernels.shape[1]} inputs per patch, "
            f"signal provides {cols.shape[0]}"
        )
    out = matmul(kernels, cols)
    if bias is not None:
        out = add(out, matmul(bias, Tensor(np.ones((1, out.shape[1])))))
    return out


def _conv_out_len(length: int, k: int, stride: int) -> int:
    return (length - k) // stride + 1


def classifier_forward(clf: ConvClassifier, w: Tensor) -> Tensor:
    """Raw logit for one (n, v) window; probability = sigmoid(logit)."""
    if w.shape != (clf.n, clf.v):
        raise ConfigError(f"classifier_forward: window must be ({clf.n}, {clf.v}), got {w.shape}")
    x = transpose(w)  # channels x length
    x = relu(conv1d_forward(x, clf.conv1_w, clf.kernel, clf.stride, clf.conv1_b))
    x = relu(conv1d_forward(x, clf.conv2_w, clf.kernel, clf.stride, clf.conv2_b))
    h = reshape(x, x.size, 1)
    for i, (wt, b) in enumerate(clf.fc):
        h = add(matmul(wt, h), b)
        if i < len(clf.fc) - 1:
            h = relu(h)
    return h


def _init_classifier(cfg: ClassifierConfig, n: int, v: int, rng: Rng) -> ConvClassifier:
    c1, c2 = cfg.channels
    l1 = _conv_out_len(n, cfg.kernel, cfg.stride)
    l2 = _conv_out_len(l1, cfg.kernel, cfg.stride) if l1 >= cfg.kernel else 0
    if l1 < 1 or l2 < 1:
        raise ConfigError(f"classifier: window of {n} samples too short for kernel {cfg.kernel} twice")
    widths = [c2 * l2, *cfg.hidden, 1]
    fc = [
        (glorot_uniform(rng, widths[i + 1], widths[i]), glorot_uniform(rng, widths[i + 1], 1))
        for i in range(3)
    ]
    return ConvClassifier(
        conv1_w=glorot_uniform(rng, c1, v * cfg.kernel),
        conv1_b=glorot_uniform(rng, c1, 1),
        conv2_w=glorot_uniform(rng, c2, c1 * cfg.kernel),
        conv2_b=glorot_uniform(rng, c2, 1),
        fc=fc,
        kernel=cfg.kernel,
        stride=cfg.stride,
        n=n,
        v=v,
    )


def train_classifier(train: WindowSet, cfg: ClassifierConfig) -> ConvClassifier:
    """Minimize binary cross-entropy by mini-batch gradient descent.

    Deterministic given cfg.seed; requires both classes in the training set.
    """
    labels = np.unique(train.labels)
    if labels.size < 2:
        raise ContractError(f"train_classifier: training set has a single class ({labels})")
    rng = Rng(cfg.seed)
    clf = _init_classifier(cfg, train.n, train.v, rng.split("init"))
    rng_shuffle = rng.split("shuffle")
    tensors = [Tensor(train.window_matrix(i)) for i in range(train.count)]
    y_all = train.labels.astype(np.float64)

    for _epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(train.count)
        for start in range(0, train.count, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tape = Tape()
            with tape:
                logits = concat_cols(*(classifier_forward(clf, tensors[i]) for i in idx))
                y = Tensor(y_all[idx].reshape(1, -1))
                # bce(z, y) = softplus(z) - y*z, summed stably over the batch
                loss = mean(sub(softplus(logits), mul(y, logits)))
                backward(loss, tape)
            for p in clf.params():
                if p.grad is not None:
                    p.data -= cfg.step_size * p.grad
            tape.clear()
    return clf


def predict_prob(clf: ConvClassifier, ws: WindowSet) -> np.ndarray:
    """Abnormal-class probability per window, in (0,1)."""
    probs = np.empty(ws.count)
    for i in range(ws.count):
        logit = classifier_forward(clf, Tensor(ws.window_matrix(i))).item()
        probs[i] = np.exp(-np.logaddexp(0.0, -logit))
    return probs


@dataclass
class EvalMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f_score: float
    degenerate: bool = False

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "EvalMetrics":
        degenerate = False
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            precision, degenerate = 0.0, True
        if tp + fn > 0:
            recall = tp / (tp + fn)
        else:
            recall, degenerate = 0.0, True
        if precision + recall > 0:
            f = 2.0 * precision * recall / (precision + recall)
        else:
            f, degenerate = 0.0, True
        return cls(tp, fp, tn, fn, precision, recall, f, degenerate)


def f_score(pred, truth) -> EvalMetrics:
    """Confusion counts and harmonic-mean F with abnormal (1) as positive."""
    pred = np.asarray(pred).astype(np.int64).reshape(-1)
    truth = np.asarray(truth).astype(np.int64).reshape(-1)
    if pred.shape != truth.shape:
        raise ContractError(f"f_score: length mismatch: {pred.shape[0]} vs {truth.shape[0]}")
    if pred.size == 0:
        raise ContractError("f_score: empty inputs")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    return EvalMetrics.from_counts(tp, fp, tn, fn)


# ---------------------------------------------------------------------------
# augment-then-classify pipeline


@dataclass
class PipelineConfig:
    n: int = 30
    overlap: int = 28
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    smote_k: int = 5
    ratio: float | None = None  # subsample abnormal windows to ratio*normal before augmenting
    balance_to: float = 1.0  # target abnormal/normal ratio after augmentation


def _make_augmented(abnormal: WindowSet, need: int, augmenter: str, cfg: PipelineConfig, rng: Rng) -> WindowSet | None:
    if need <= 0 or augmenter == "none":
        return None
    if augmenter == "oracle":
        idx = np.arange(need) % abnormal.count
        return WindowSet(abnormal.windows[idx], abnormal.n, abnormal.v, np.ones(need, dtype=np.int64), abnormal.scaler)
    if augmenter == "smote":
        k = min(cfg.smote_k, abnormal.count - 1)
        return smote(abnormal, SmoteConfig(k=k, count=need, seed=rng.split("smote").seed))
    train_cfg = replace(cfg.train, seed=rng.split("augmenter-train").seed)
    if augmenter == "asgan":
        gen, _critic, _report = train(abnormal, train_cfg)
    elif augmenter == "wgan":
        gen, _critic, _report = plain_wgan_train(abnormal, train_cfg)
    elif augmenter == "gan":
        gen, _critic, _report = plain_gan_train(abnormal, train_cfg)
    else:
        raise ConfigError(f"unknown augmenter {augmenter!r}, expected one of {AUGMENTERS}")
    return generate(gen, abnormal, need, rng.split("generate"))


def augment_and_evaluate(
    train_trial: SensorSeries,
    test_trials: list[SensorSeries],
    augmenter: str,
    cfg: PipelineConfig,
) -> list[EvalMetrics]:
    """Window, scale, augment to balance, train the classifier, score each trial.

    The augmenter is trained on the scaled abnormal windows only; enough
    synthetic windows are generated to bring the training set's
    abnormal/normal ratio up to cfg.balance_to.
    """
    if augmenter not in AUGMENTERS:
        raise ConfigError(f"unknown augmenter {augmenter!r}, expected one of {AUGMENTERS}")
    rng = Rng(cfg.seed)
    ws = window(train_trial, cfg.n, cfg.overlap)
    if np.unique(ws.labels).size < 2:
        raise ContractError("augment_and_evaluate: training trial needs both normal and abnormal segments")
    scaler = fit_scaler(ws)
    ws_s = scaler.apply(ws)
    normal = ws_s.normal()
    abnormal = ws_s.abnormal()
    if cfg.ratio is not None:
        keep = int(round(cfg.ratio * normal.count))
        if keep < 2:
            raise DataError(f"ratio {cfg.ratio} keeps {keep} abnormal windows; need at least 2")
        keep = min(keep, abnormal.count)
        abnormal = WindowSet(  # drop the most recent windows first
            abnormal.windows[:keep], abnormal.n, abnormal.v, abnormal.labels[:keep], abnormal.scaler
        )

    need = int(round(cfg.balance_to * normal.count)) - abnormal.count
    augmented = _make_augmented(abnormal, need, augmenter, cfg, rng)
    train_set = normal.concat(abnormal)
    if augmented is not None:
        train_set = train_set.concat(augmented)

    clf = train_classifier(train_set, replace(cfg.classifier, seed=rng.split("classifier").seed))

    results = []
    for trial in test_trials:
        tws = scaler.apply(window(trial, cfg.n, cfg.overlap))
        pred = (predict_prob(clf, tws) >= cfg.classifier.threshold).astype(np.int64)
        results.append(f_score(pred, tws.labels))
    return results


METRICS_HEADER = "augmenter,trial,replicate,ratio,tp,fp,tn,fn,precision,recall,f_score,seed"


def metrics_csv_row(
    augmenter: str, trial: int, replicate: int, ratio: float, m: EvalMetrics, seed: int
) -> str:
    return ",".join(
        [
            augmenter,
            str(trial),
            str(replicate),
            f"{ratio:.17g}",
            str(m.tp),
            str(m.fp),
            str(m.tn),
            str(m.fn),
            f"{m.precision:.17g}",
            f"{m.recall:.17g}",
            f"{m.f_score:.17g}",
            str(seed),
        ]
    )
