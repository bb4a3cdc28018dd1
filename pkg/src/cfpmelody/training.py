"""Supervised training and teacher-student training with pseudo labels.

A model here is any object with ``network`` (a :class:`Sequential`),
``logits(x)``, ``probabilities(x)``, ``check_input(x)`` and
``loss_and_grad(logits, targets)``; :mod:`cfpmelody.models` provides three.

Teacher-student loss for an unlabeled batch of size M::

    L_b = 1/M sum_u [ H(y_u, p(y | x_u; student)) + H(y_u, y_t) ]

with ``y_u`` the teacher's hard pseudo labels and ``y_t`` the true labels.
The second term does not depend on the student; it is reported but
contributes no gradient.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .cfp import CfpConfig, patch_labels
from .dsp import StftConfig
from .models import (
    context_windows,
    frame_patches,
    hz_to_label,
    log_spectrogram,
    normalized_cfp,
    QuantizerConfig,
)
from .neural import BCE_EPS, adam_step, log_softmax

# H(y_u, y_t) for one-hot y_u != y_t, with the zero entries clamped to eps
_MISMATCH_ENTROPY = -math.log(BCE_EPS)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    loss: float
    h1: float
    h2: float | None = None


@dataclass
class LossReport:
    epochs: list[EpochLoss] = field(default_factory=list)
    batch_size: int = 0

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    def to_lines(self) -> list[str]:
        return [f"{e.epoch}\t{e.loss:.10g}\t{e.h1:.10g}\t{'nan' if e.h2 is None else f'{e.h2:.10g}'}"
                for e in self.epochs]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch\tloss\th1\th2\n")
            for line in self.to_lines():
                fh.write(line + "\n")


@dataclass(frozen=True)
class PseudoLabelSet:
    labels: np.ndarray
    confidence: np.ndarray
    source: str

    def __post_init__(self):
        if len(self.labels) != len(self.confidence):
            raise ValueError("labels and confidence must have equal length")
        if np.any((self.confidence <= 0) | (self.confidence > 1)):
            raise ValueError("confidence must lie in (0, 1]")

    def __len__(self):
        return len(self.labels)


def parameter_digest(model) -> str:
    """Short hash identifying a model's current weights."""
    h = hashlib.sha256()
    for name, p in model.network.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def _batches(n: int, cfg: TrainConfig, rng: np.random.Generator):
    order = rng.permutation(n) if cfg.shuffle else np.arange(n)
    for start in range(0, n, cfg.batch_size):
        yield order[start:start + cfg.batch_size]


def _check_labels(model, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be a 1-D integer array")
    if np.any((labels < 0) | (labels >= model.num_classes)):
        raise ValueError(f"labels must lie in [0, {model.num_classes})")
    return labels.astype(np.int64)


def train_supervised(model, inputs, labels, cfg: TrainConfig = TrainConfig()):
    """Minibatch Adam on the model's own loss; returns ``(model, LossReport)``.

    Shuffling uses ``cfg.seed`` only, so the same seed, data and config give
    bit-identical parameters.
    """
    inputs = model.check_input(inputs)
    labels = _check_labels(model, labels)
    if len(inputs) == 0:
        raise ValueError("empty training set")
    if len(labels) != len(inputs):
        raise ValueError(f"{len(inputs)} inputs but {len(labels)} labels")

    rng = np.random.default_rng(cfg.seed)
    params = model.network.params
    report = LossReport(batch_size=cfg.batch_size)
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in _batches(len(inputs), cfg, rng):
            logits = model.network.forward(inputs[idx])
            _, losses, grad = model.loss_and_grad(logits, labels[idx])
            params.zero_grad()
            model.network.backward(grad)
            adam_step(params, None, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
            total += float(losses.sum())
        mean = total / len(inputs)
        report.epochs.append(EpochLoss(epoch, mean, mean))
    return model, report


def predict_in_batches(model, inputs, batch_size: int = 256) -> np.ndarray:
    inputs = model.check_input(inputs)
    return np.concatenate([model.probabilities(inputs[i:i + batch_size])
                           for i in range(0, len(inputs), batch_size)])


def generate_pseudo_labels(teacher, inputs, batch_size: int = 256) -> PseudoLabelSet:
    """Hard teacher labels (argmax, ties to the lower class) with confidences."""
    probs = predict_in_batches(teacher, inputs, batch_size)
    if probs.ndim == 1:
        # binary head returning only the positive-class probability
        probs = np.stack([1.0 - probs, probs], axis=1)
    labels = np.argmax(probs, axis=1)
    conf = probs[np.arange(len(labels)), labels]
    return PseudoLabelSet(labels.astype(np.int64), np.clip(conf, np.finfo(float).tiny, 1.0),
                          parameter_digest(teacher))


def pseudo_label_entropy(pseudo, true) -> np.ndarray:
    """Per-example H(y_u, y_t) between two hard label vectors."""
    return np.where(np.asarray(pseudo) == np.asarray(true), 0.0, _MISMATCH_ENTROPY)


def teacher_student_loss(student, inputs, pseudo_labels, true_labels=None):
    """Evaluate L_b on one batch; returns ``(L_b, mean H1, mean H2 or None)``."""
    logits = student.logits(inputs)
    logp = log_softmax(logits)
    h1 = -logp[np.arange(len(logits)), np.asarray(pseudo_labels)]
    mh1 = float(h1.mean())
    if true_labels is None:
        return mh1, mh1, None
    mh2 = float(pseudo_label_entropy(pseudo_labels, true_labels).mean())
    return mh1 + mh2, mh1, mh2


def train_student(student, inputs, pseudo: PseudoLabelSet, true_labels=None,
                  cfg: TrainConfig = TrainConfig(), *, min_confidence: float = 0.0,
                  true_label_target: bool = False):
    """Fit the student to teacher pseudo labels; returns ``(student, LossReport)``.

    The reported per-epoch loss is L_b with its two terms logged as ``h1``
    and ``h2``.  Only ``h1`` produces gradients.  With ``true_label_target``
    the alternative reading ``H(y_t, p(y | x_u; student))`` replaces the
    constant second term and is trained on; it needs ``true_labels``.
    ``min_confidence`` drops pseudo labels the teacher is less sure of.
    """
    inputs = student.check_input(inputs)
    if pseudo is None or len(pseudo) != len(inputs):
        raise ValueError("pseudo labels must cover every unlabeled input")
    y_u = _check_labels(student, pseudo.labels)
    y_t = None
    if true_labels is not None:
        y_t = _check_labels(student, true_labels)
        if len(y_t) != len(inputs):
            raise ValueError(f"{len(inputs)} inputs but {len(y_t)} true labels")
    if true_label_target and y_t is None:
        raise ValueError("true_label_target needs true labels")

    keep = pseudo.confidence >= min_confidence
    inputs, y_u = inputs[keep], y_u[keep]
    y_t = None if y_t is None else y_t[keep]
    if len(inputs) == 0:
        raise ValueError("no pseudo labels above the confidence threshold")

    rng = np.random.default_rng(cfg.seed)
    params = student.network.params
    report = LossReport(batch_size=cfg.batch_size)
    for epoch in range(1, cfg.epochs + 1):
        sum_h1 = sum_h2 = 0.0
        for idx in _batches(len(inputs), cfg, rng):
            logits = student.network.forward(inputs[idx])
            _, h1, grad = student.loss_and_grad(logits, y_u[idx])
            if y_t is not None:
                if true_label_target:
                    _, h2, grad2 = student.loss_and_grad(logits, y_t[idx])
                    grad = grad + grad2
                else:
                    h2 = pseudo_label_entropy(y_u[idx], y_t[idx])
                sum_h2 += float(h2.sum())
            params.zero_grad()
            student.network.backward(grad)
            adam_step(params, None, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
            sum_h1 += float(h1.sum())
        n = len(inputs)
        h1_mean = sum_h1 / n
        h2_mean = None if y_t is None else sum_h2 / n
        report.epochs.append(EpochLoss(epoch, h1_mean + (h2_mean or 0.0), h1_mean, h2_mean))
    return student, report


def agreement(model_a, model_b, inputs, batch_size: int = 256) -> float:
    """Fraction of inputs on which two models' argmax predictions coincide."""
    a = generate_pseudo_labels(model_a, inputs, batch_size).labels
    b = generate_pseudo_labels(model_b, inputs, batch_size).labels
    return float(np.mean(a == b))


# --------------------------------------------------------------------------
# Dataset builders


def patch_dataset(clips, truths, stft_cfg: StftConfig = StftConfig(), cfp_cfg: CfpConfig = CfpConfig(),
                  *, tolerance_cents: float = 50.0, nonvocal_rate: float = 0.1, seed: int = 0):
    """Labelled peak patches from clips and their truth contours.

    Every vocal patch is kept; non-vocal patches are kept with probability
    ``nonvocal_rate`` (one seeded draw per patch, in clip order).  Frames
    without any CFP energy are skipped.  Returns ``(patches [N,1,25,25],
    labels [N])``.
    """
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for clip, truth in zip(clips, truths):
        y = normalized_cfp(clip, stft_cfg, cfp_cfg)
        patches, peaks, peak_vals = frame_patches(y)
        labels = patch_labels(y.axis_values[peaks], truth.at_times(y.frame_times), tolerance_cents)
        draws = rng.random(len(labels))
        keep = (peak_vals > 0) & ((labels == 1) | (draws < nonvocal_rate))
        xs.append(patches[keep])
        ys.append(labels[keep])
    if not xs:
        raise ValueError("no clips given")
    return np.concatenate(xs), np.concatenate(ys)


def clip_patches(clips, stft_cfg: StftConfig = StftConfig(), cfp_cfg: CfpConfig = CfpConfig()) -> np.ndarray:
    """Unlabelled peak patches of every frame with CFP energy."""
    out = []
    for clip in clips:
        patches, _, peak_vals = frame_patches(normalized_cfp(clip, stft_cfg, cfp_cfg))
        out.append(patches[peak_vals > 0])
    return np.concatenate(out)


def frame_dataset(clips, truths=None, stft_cfg: StftConfig = StftConfig(),
                  quantizer: QuantizerConfig = QuantizerConfig()):
    """31-frame log-spectrogram windows and quantized pitch labels.

    Truth contours are sampled at the spectrogram frame times (nearest
    frame).  With ``truths`` absent the labels are ``None``.
    """
    xs, ys = [], []
    for i, clip in enumerate(clips):
        spec = log_spectrogram(clip, stft_cfg)
        xs.append(context_windows(spec.values))
        if truths is not None:
            ys.append(hz_to_label(truths[i].at_times(spec.frame_times), quantizer))
    x = np.concatenate(xs)
    return x, (np.concatenate(ys) if truths is not None else None)
