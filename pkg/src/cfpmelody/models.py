"""The two classifiers and the 1/8-semitone pitch quantizer.

``PatchCnn`` decides whether a 25x25 CFP patch is centred on the vocal
melody.  ``FrameClassifier`` maps 31 spectrogram frames to one of 442
classes: class 0 is unvoiced and classes 1..441 are 1/8-semitone steps
upwards from ``f_min``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioClip, PitchContour
from .cfp import PATCH_SIZE, CfpConfig, cfp_representation, extract_patch
from .dsp import StftConfig, TimeFrequencyMap, stft_magnitude
from .neural import (
    CheckpointError,
    Conv2D,
    Dense,
    Flatten,
    ReLU,
    Sequential,
    batch_binary_cross_entropy,
    batch_cross_entropy,
    load_checkpoint,
    save_checkpoint,
    softmax,
)

class ModelShapeError(ValueError):
    """Input does not match a model's input contract."""


@dataclass(frozen=True)
class QuantizerConfig:
    f_min: float = 73.416
    bins_per_semitone: int = 8
    num_pitch_classes: int = 441

    def __post_init__(self):
        if not self.f_min > 0:
            raise ValueError("f_min must be positive")

    @property
    def num_classes(self) -> int:
        return self.num_pitch_classes + 1

    @property
    def bins_per_octave(self) -> int:
        return 12 * self.bins_per_semitone

    @property
    def f_max(self) -> float:
        return self.f_min * 2.0 ** ((self.num_pitch_classes - 1) / self.bins_per_octave)


def hz_to_label(f, q: QuantizerConfig = QuantizerConfig()):
    """0 for unvoiced, else ``clamp(round(96 log2(f / f_min)) + 1, 1, 441)``.

    Accepts a scalar or an array.
    """
    arr = np.asarray(f, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("frequencies must be finite and non-negative")
    with np.errstate(divide="ignore"):
        steps = np.floor(q.bins_per_octave * np.log2(np.where(arr > 0, arr, 1.0) / q.f_min) + 0.5)
    labels = np.clip(steps + 1, 1, q.num_pitch_classes).astype(np.int64)
    labels = np.where(arr > 0, labels, 0)
    return int(labels) if labels.ndim == 0 else labels


def label_to_hz(label, q: QuantizerConfig = QuantizerConfig()):
    arr = np.asarray(label)
    if np.any(arr < 0) or np.any(arr > q.num_pitch_classes) or np.any(arr != np.round(arr)):
        raise ValueError(f"labels must be integers in [0, {q.num_pitch_classes}]")
    hz = np.where(arr > 0, q.f_min * 2.0 ** ((arr - 1) / q.bins_per_octave), 0.0)
    return float(hz) if hz.ndim == 0 else hz


# --------------------------------------------------------------------------
# Patch CNN


def patch_cnn_network(seed: int = 0) -> Sequential:
    """conv 8@5x5 -> conv 16@3x3 -> 128 -> 64 -> 2, valid convolutions, ReLU."""
    rng = np.random.default_rng(seed)
    flat = 16 * (PATCH_SIZE - 6) ** 2
    return Sequential([
        Conv2D(1, 8, 5, "conv1", rng), ReLU("relu1"),
        Conv2D(8, 16, 3, "conv2", rng), ReLU("relu2"),
        Flatten(),
        Dense(flat, 128, "fc1", rng), ReLU("relu3"),
        Dense(128, 64, "fc2", rng), ReLU("relu4"),
        Dense(64, 2, "fc3", rng),
    ])


@dataclass
class PatchCnn:
    network: Sequential = field(default_factory=patch_cnn_network)
    decision_threshold: float = 0.5

    kind = "patch_cnn"
    num_classes = 2

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        if x.shape[1:] != (1, PATCH_SIZE, PATCH_SIZE):
            raise ModelShapeError(f"patch CNN expects [B,1,25,25] input, got {x.shape}")
        return x

    def logits(self, x) -> np.ndarray:
        return self.network.forward(self.check_input(x))

    def probabilities(self, x) -> np.ndarray:
        """Probability of the vocal-melody class per patch."""
        return softmax(self.logits(x))[:, 1]

    def loss_and_grad(self, logits, targets):
        return batch_binary_cross_entropy(logits, targets)

    def header(self) -> dict:
        return {"kind": self.kind, "decision_threshold": self.decision_threshold,
                "layers": self.network.config()}


def patch_cnn_predict(model: PatchCnn, patch) -> float:
    """Vocal-melody probability of one patch (a :class:`Patch` or 25x25 array)."""
    values = getattr(patch, "values", patch)
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("patch values must be finite")
    return float(model.probabilities(values)[0])


def normalized_cfp(clip: AudioClip, stft_cfg: StftConfig = StftConfig(),
                   cfp_cfg: CfpConfig = CfpConfig()) -> TimeFrequencyMap:
    """CFP map scaled so the clip's largest value is 1 (silence stays 0)."""
    y = cfp_representation(clip, stft_cfg, cfp_cfg)
    peak = y.values.max()
    return y.with_values(y.values / peak) if peak > 0 else y


def frame_patches(y: TimeFrequencyMap) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Peak-centred patches of every frame as one batch.

    Returns ``(patches [T,1,25,25], centre bin per frame, peak value per frame)``.
    """
    peaks = np.argmax(y.values, axis=0)
    batch = np.stack([extract_patch(y.values, int(b), n) for n, b in enumerate(peaks)])[:, None]
    return batch, peaks, y.values[peaks, np.arange(y.num_frames)]


def extract_melody_patchcnn(clip: AudioClip, model: PatchCnn, stft_cfg: StftConfig = StftConfig(),
                            cfp_cfg: CfpConfig = CfpConfig(), batch_size: int = 256) -> PitchContour:
    """Frame-wise melody: the CFP peak's frequency where the CNN says vocal, else 0.

    Frames whose CFP column is all zero carry no peak and are unvoiced
    without consulting the model.
    """
    y = normalized_cfp(clip, stft_cfg, cfp_cfg)
    patches, peaks, peak_vals = frame_patches(y)
    probs = np.concatenate([model.probabilities(patches[i:i + batch_size])
                            for i in range(0, len(patches), batch_size)])
    voiced = (probs > model.decision_threshold) & (peak_vals > 0)
    f0 = np.where(voiced, y.axis_values[peaks], 0.0)
    return PitchContour(f0, y.hop_seconds, y.start_seconds)


# --------------------------------------------------------------------------
# Frame classifier

CONTEXT_FRAMES = 31


def frame_classifier_network(num_bins: int, num_classes: int = 442, channels: int = 4,
                             kernel_width: int = 3, hidden: int = 128, seed: int = 0) -> Sequential:
    """Stand-in for a recurrent classifier with the same input/output contract.

    One convolution spans all 31 frames and ``kernel_width`` neighbouring
    bins, followed by a hidden dense layer and the class layer.
    """
    rng = np.random.default_rng(seed)
    width = num_bins - kernel_width + 1
    return Sequential([
        Conv2D(1, channels, (CONTEXT_FRAMES, kernel_width), "conv1", rng), ReLU("relu1"),
        Flatten(),
        Dense(channels * width, hidden, "fc1", rng), ReLU("relu2"),
        Dense(hidden, num_classes, "fc2", rng),
    ])


@dataclass
class FrameClassifier:
    num_bins: int = 513
    quantizer: QuantizerConfig = QuantizerConfig()
    channels: int = 4
    kernel_width: int = 3
    hidden: int = 128
    seed: int = 0
    network: Sequential | None = None

    kind = "frame_classifier"
    context_frames = CONTEXT_FRAMES

    def __post_init__(self):
        if self.network is None:
            self.network = frame_classifier_network(self.num_bins, self.num_classes, self.channels,
                                                    self.kernel_width, self.hidden, self.seed)

    @property
    def num_classes(self) -> int:
        return self.quantizer.num_classes

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        if x.shape[1:] != (1, CONTEXT_FRAMES, self.num_bins):
            raise ModelShapeError(
                f"frame classifier expects [B,1,{CONTEXT_FRAMES},{self.num_bins}] input, got {x.shape}"
            )
        return x

    def logits(self, x) -> np.ndarray:
        return self.network.forward(self.check_input(x))

    def probabilities(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def loss_and_grad(self, logits, targets):
        return batch_cross_entropy(logits, targets)

    def header(self) -> dict:
        return {"kind": self.kind, "num_bins": self.num_bins, "channels": self.channels,
                "kernel_width": self.kernel_width, "hidden": self.hidden,
                "quantizer": {"f_min": self.quantizer.f_min,
                              "bins_per_semitone": self.quantizer.bins_per_semitone,
                              "num_pitch_classes": self.quantizer.num_pitch_classes}}


def log_spectrogram(clip: AudioClip, stft_cfg: StftConfig = StftConfig()) -> TimeFrequencyMap:
    return stft_magnitude(clip, stft_cfg, log=True)


def context_windows(spec: np.ndarray, context: int = CONTEXT_FRAMES) -> np.ndarray:
    """All ``context``-frame windows of ``spec[bin, frame]``, one per frame.

    Edges repeat the first/last frame.  Returns [frames, 1, context, bins].
    """
    n_frames = spec.shape[1]
    half = context // 2
    idx = np.clip(np.arange(n_frames)[:, None] + np.arange(-half, context - half)[None, :], 0, n_frames - 1)
    return spec.T[idx][:, None]


def frame_classifier_predict(model: FrameClassifier, window) -> np.ndarray:
    """442 logits for one 31-frame window shaped [31, bins]."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] != CONTEXT_FRAMES:
        raise ModelShapeError(f"expected a window of {CONTEXT_FRAMES} frames, got shape {window.shape}")
    return model.logits(window)[0]


@dataclass
class DenseClassifier:
    """Plain multilayer perceptron over flat feature vectors, softmax output.

    Handy as a small stand-in student or teacher when the input is already
    a feature vector.
    """

    sizes: tuple[int, ...] = (8, 8, 4)
    seed: int = 0
    network: Sequential | None = None

    kind = "dense_classifier"

    def __post_init__(self):
        if self.network is None:
            rng = np.random.default_rng(self.seed)
            layers = []
            for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
                layers.append(Dense(a, b, f"fc{i + 1}", rng))
                if i < len(self.sizes) - 2:
                    layers.append(ReLU(f"relu{i + 1}"))
            self.network = Sequential(layers)

    @property
    def num_classes(self) -> int:
        return self.sizes[-1]

    def check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ModelShapeError(f"expected [B,{self.sizes[0]}] input, got {x.shape}")
        return x

    def logits(self, x) -> np.ndarray:
        return self.network.forward(self.check_input(x))

    def probabilities(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def loss_and_grad(self, logits, targets):
        return batch_cross_entropy(logits, targets)

    def header(self) -> dict:
        return {"kind": self.kind, "sizes": list(self.sizes)}


def decode_labels(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=-1)


def extract_melody_frame_classifier(clip: AudioClip, model: FrameClassifier,
                                    stft_cfg: StftConfig = StftConfig(), batch_size: int = 256) -> PitchContour:
    spec = log_spectrogram(clip, stft_cfg)
    windows = context_windows(spec.values)
    labels = np.concatenate([decode_labels(model.logits(windows[i:i + batch_size]))
                             for i in range(0, len(windows), batch_size)])
    return PitchContour(label_to_hz(labels, model.quantizer), spec.hop_seconds, spec.start_seconds)


# --------------------------------------------------------------------------
# Checkpoints


def save_model(model, path) -> None:
    save_checkpoint(path, model.network.params, model.header())


def load_model(path):
    """Rebuild a :class:`PatchCnn` or :class:`FrameClassifier` from a checkpoint."""
    header, arrays = load_checkpoint(path)
    kind = header.get("kind")
    if kind == PatchCnn.kind:
        model = PatchCnn(Sequential.from_config(header["layers"]), header.get("decision_threshold", 0.5))
    elif kind == DenseClassifier.kind:
        model = DenseClassifier(tuple(header["sizes"]))
    elif kind == FrameClassifier.kind:
        model = FrameClassifier(header["num_bins"], QuantizerConfig(**header["quantizer"]),
                                header["channels"], header["kernel_width"], header["hidden"])
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")
    params = model.network.params
    if set(arrays) != set(params):
        raise CheckpointError(f"checkpoint parameters {sorted(arrays)} do not match the {kind} layout")
    for name, arr in arrays.items():
        if arr.shape != params[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {params[name].shape}")
        params[name].value = arr
    return model

