"""Combined frequency and periodicity (CFP) representation and patch selection.

The chain, per frame::

    Z0 = relu(high-passed |X|) ** g0            spectrum
    Z1 = relu(high-passed IDFT(Z0)) ** g1       generalized cepstrum (quefrency)
    Z2 = relu(high-passed DFT(Z1)) ** g2        cepstrum of the cepstrum (frequency)
    Y  = Z1~ * Z2~                               Z1, Z2 resampled onto one log-Hz axis

Z1 carries peaks at the fundamental and its sub-harmonics, Z2 at the
fundamental and its harmonics; only the fundamental survives the product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip, PitchContour
from .dsp import StftConfig, TimeFrequencyMap, stft_frames

PATCH_SIZE = 25
_HALF = PATCH_SIZE // 2

UNKNOWN = -1


@dataclass(frozen=True)
class CfpConfig:
    gamma: tuple[float, float, float] = (0.24, 0.6, 1.0)
    freq_cutoff_hz: float = 32.7
    quef_cutoff_s: float = 1.0 / 1760.0
    log_bins_per_octave: int = 60
    log_f_low: float = 73.416
    log_f_high: float = 1760.0
    n_fft: int = 8192

    def __post_init__(self):
        if len(self.gamma) != 3 or any(g <= 0 for g in self.gamma):
            raise ValueError(f"gamma must be three positive exponents, got {self.gamma}")
        if not 0 < self.freq_cutoff_hz < self.log_f_low < self.log_f_high:
            raise ValueError("need 0 < freq_cutoff_hz < log_f_low < log_f_high")
        if self.quef_cutoff_s <= 0:
            raise ValueError("quef_cutoff_s must be positive")
        if self.log_bins_per_octave < 1:
            raise ValueError("log_bins_per_octave must be >= 1")
        if self.n_fft & (self.n_fft - 1):
            raise ValueError("n_fft must be a power of two")

    @property
    def num_log_bins(self) -> int:
        return int(math.ceil(self.log_bins_per_octave * math.log2(self.log_f_high / self.log_f_low) - 1e-9))

    def log_axis(self) -> np.ndarray:
        p = np.arange(self.num_log_bins)
        return self.log_f_low * 2.0 ** (p / self.log_bins_per_octave)

    def validate_rate(self, sample_rate: int) -> None:
        if self.log_f_high > sample_rate / 2:
            raise ValueError(f"log_f_high {self.log_f_high} exceeds Nyquist of {sample_rate} Hz")


@dataclass(frozen=True)
class Patch:
    values: np.ndarray
    center_bin: int
    center_frame: int
    center_hz: float
    label: int = UNKNOWN

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (PATCH_SIZE, PATCH_SIZE):
            raise ValueError(f"patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {values.shape}")
        if self.label not in (0, 1, UNKNOWN):
            raise ValueError(f"patch label must be 0, 1 or unknown, got {self.label}")
        object.__setattr__(self, "values", values)


def rectified_power(x, gamma: float) -> np.ndarray:
    """``max(x, 0) ** gamma``, the nonlinearity applied at every CFP stage."""
    return np.maximum(x, 0.0) ** gamma


def compressed_spectrum(x: TimeFrequencyMap, cfg: CfpConfig) -> TimeFrequencyMap:
    """Z0: zero bins below the frequency cutoff, then compress with gamma[0]."""
    if x.axis_kind != "linear_frequency":
        raise ValueError(f"expected a linear_frequency map, got {x.axis_kind}")
    values = x.values.copy()
    values[x.axis_values < cfg.freq_cutoff_hz] = 0.0
    return x.with_values(rectified_power(values, cfg.gamma[0]))


def _sample_rate_of(z: TimeFrequencyMap) -> float:
    if z.axis_kind == "quefrency":
        return 1.0 / z.axis_values[1]
    n = 2 * (z.num_bins - 1)
    return z.axis_values[1] * n


def generalized_cepstrum(z0: TimeFrequencyMap, cfg: CfpConfig, *, highpass: bool = True) -> TimeFrequencyMap:
    """Z1: inverse N-point DFT of the (half) spectrum, quefrency high-pass, gamma[1].

    The half spectrum is taken as the non-negative frequencies of a real,
    conjugate-symmetric N-point spectrum, N = 2 * (bins - 1).  The output
    keeps all N quefrencies so that the forward transform in
    :func:`generalized_cepstrum_of_spectrogram` is exact.
    """
    if z0.axis_kind != "linear_frequency":
        raise ValueError(f"expected a linear_frequency map, got {z0.axis_kind}")
    n = 2 * (z0.num_bins - 1)
    fs = _sample_rate_of(z0)
    ceps = np.fft.irfft(z0.values, n=n, axis=0)
    if highpass:
        cut = int(math.ceil(cfg.quef_cutoff_s * fs))
        ceps[:cut] = 0.0
        if cut > 1:
            ceps[n - cut + 1:] = 0.0
    z1 = rectified_power(ceps, cfg.gamma[1])
    return z0.with_values(z1, "quefrency", np.arange(n) / fs)


def generalized_cepstrum_of_spectrogram(z1: TimeFrequencyMap, cfg: CfpConfig, *,
                                        highpass: bool = True) -> TimeFrequencyMap:
    """Z2: forward DFT of Z1 back onto frequency, frequency high-pass, gamma[2]."""
    if z1.axis_kind != "quefrency":
        raise ValueError(f"expected a quefrency map, got {z1.axis_kind}")
    n = z1.num_bins
    fs = _sample_rate_of(z1)
    spec = np.fft.rfft(z1.values, n=n, axis=0).real
    freqs = np.arange(spec.shape[0]) * fs / n
    if highpass:
        spec[freqs < cfg.freq_cutoff_hz] = 0.0
    return z1.with_values(rectified_power(spec, cfg.gamma[2]), "linear_frequency", freqs)


def _source_frequencies(m: TimeFrequencyMap) -> tuple[np.ndarray, np.ndarray]:
    """Physical frequency of every usable source row, and the row indices."""
    if m.axis_kind == "linear_frequency":
        rows = np.arange(m.num_bins)
        return m.axis_values, rows
    if m.axis_kind == "quefrency":
        n = m.num_bins
        rows = np.arange(1, n // 2 + 1)
        # quefrency q seconds <-> frequency 1/q, listed in increasing frequency
        rows = rows[::-1]
        return 1.0 / m.axis_values[rows], rows
    raise ValueError(f"cannot map a {m.axis_kind} axis to log frequency")


def to_log_frequency(m: TimeFrequencyMap, cfg: CfpConfig) -> TimeFrequencyMap:
    """Resample onto log-spaced bins ``f_low * 2 ** (p / bins_per_octave)``.

    Each log bin takes the maximum of the source bins whose frequency rounds
    to it.  A log bin no source lands in is linearly interpolated (in log
    frequency) between the two source rows bracketing it, so gaps where the
    source axis is coarser than the log axis are bridged without ever
    creating a new maximum.
    """
    freqs, rows = _source_frequencies(m)
    axis = cfg.log_axis()
    n_bins = len(axis)
    src = m.values[rows]

    with np.errstate(divide="ignore"):
        pos = cfg.log_bins_per_octave * np.log2(freqs / cfg.log_f_low)
    target = np.floor(pos + 0.5)
    inside = np.isfinite(pos) & (target >= 0) & (target < n_bins)

    out = np.zeros((n_bins, m.num_frames))
    filled = np.zeros(n_bins, dtype=bool)
    idx = target[inside].astype(np.int64)
    if len(idx):
        np.maximum.at(out, idx, src[inside])
        filled[idx] = True

    # bridge empty log bins using the nearest source rows on either side
    empty = np.flatnonzero(~filled)
    if len(empty) and len(freqs) > 1:
        order = np.argsort(freqs)
        sorted_pos = pos[order]
        centre_pos = empty.astype(np.float64)
        right = np.searchsorted(sorted_pos, centre_pos)
        ok = (right > 0) & (right < len(sorted_pos))
        ok[ok] &= np.isfinite(sorted_pos[right[ok] - 1])
        lo, hi = right[ok] - 1, right[ok]
        w = ((centre_pos[ok] - sorted_pos[lo]) / (sorted_pos[hi] - sorted_pos[lo]))[:, None]
        out[empty[ok]] = (1.0 - w) * src[order[lo]] + w * src[order[hi]]
    return m.with_values(out, "log_frequency", axis)


def combine_cfp(z1_log: TimeFrequencyMap, z2_log: TimeFrequencyMap) -> TimeFrequencyMap:
    """Y: elementwise product of the two log-frequency maps."""
    if z1_log.axis_kind != "log_frequency" or z2_log.axis_kind != "log_frequency":
        raise ValueError("both inputs must be log_frequency maps")
    if z1_log.values.shape != z2_log.values.shape or not np.allclose(z1_log.axis_values, z2_log.axis_values):
        raise ValueError(
            f"shape mismatch: {z1_log.values.shape} vs {z2_log.values.shape}"
        )
    return z1_log.with_values(z1_log.values * z2_log.values)


@dataclass(frozen=True)
class CfpResult:
    z0: TimeFrequencyMap
    z1: TimeFrequencyMap
    z2: TimeFrequencyMap
    z1_log: TimeFrequencyMap
    z2_log: TimeFrequencyMap
    y: TimeFrequencyMap


def cfp_stages(clip: AudioClip, stft_cfg: StftConfig = StftConfig(),
               cfg: CfpConfig = CfpConfig()) -> CfpResult:
    """Run the whole chain from audio, keeping every intermediate map."""
    cfg.validate_rate(stft_cfg.sample_rate)
    padded = StftConfig(stft_cfg.window_size, stft_cfg.hop, stft_cfg.sample_rate,
                        max(cfg.n_fft, stft_cfg.window_size))
    spec = np.abs(stft_frames(clip, padded))
    freqs = np.arange(spec.shape[0]) * padded.sample_rate / padded.fft_size
    x = TimeFrequencyMap(spec, "linear_frequency", freqs, padded.hop_seconds, padded.first_frame_seconds)
    z0 = compressed_spectrum(x, cfg)
    z1 = generalized_cepstrum(z0, cfg)
    z2 = generalized_cepstrum_of_spectrogram(z1, cfg)
    z1_log = to_log_frequency(z1, cfg)
    z2_log = to_log_frequency(z2, cfg)
    return CfpResult(z0, z1, z2, z1_log, z2_log, combine_cfp(z1_log, z2_log))


def cfp_representation(clip: AudioClip, stft_cfg: StftConfig = StftConfig(),
                       cfg: CfpConfig = CfpConfig()) -> TimeFrequencyMap:
    return cfp_stages(clip, stft_cfg, cfg).y


# --------------------------------------------------------------------------
# Patches


def cents(f_est, f_ref):
    return 1200.0 * np.log2(np.asarray(f_est, dtype=np.float64) / np.asarray(f_ref, dtype=np.float64))


def extract_patch(values: np.ndarray, centre_bin: int, centre_frame: int) -> np.ndarray:
    """25x25 window of ``values[bin, frame]`` around a point, zero outside."""
    n_bins, n_frames = values.shape
    out = np.zeros((PATCH_SIZE, PATCH_SIZE))
    b0, f0 = centre_bin - _HALF, centre_frame - _HALF
    bs, be = max(b0, 0), min(b0 + PATCH_SIZE, n_bins)
    fs, fe = max(f0, 0), min(f0 + PATCH_SIZE, n_frames)
    out[bs - b0:be - b0, fs - f0:fe - f0] = values[bs:be, fs:fe]
    return out


def patch_labels(centre_hz: np.ndarray, truth_f0: np.ndarray, tolerance_cents: float) -> np.ndarray:
    """1 where truth is voiced and the centre lies within tolerance, else 0."""
    labels = np.zeros(len(centre_hz), dtype=np.int64)
    voiced = truth_f0 > 0
    labels[voiced] = np.abs(cents(centre_hz[voiced], truth_f0[voiced])) <= tolerance_cents
    return labels


def select_patches(y: TimeFrequencyMap, truth: PitchContour | None = None,
                   tolerance_cents: float = 50.0) -> list[Patch]:
    """One patch per frame, centred on the frame's strongest log bin.

    With ``truth`` given, frames are matched to the truth contour by nearest
    frame time and labelled with :func:`patch_labels`; otherwise labels stay
    unknown.
    """
    if y.axis_kind != "log_frequency":
        raise ValueError(f"expected a log_frequency map, got {y.axis_kind}")
    if y.num_bins < PATCH_SIZE:
        raise ValueError(f"need at least {PATCH_SIZE} log bins, got {y.num_bins}")
    if y.num_frames < 1:
        raise ValueError("map has no frames")
    peaks = np.argmax(y.values, axis=0)
    centre_hz = y.axis_values[peaks]
    if truth is None:
        labels = np.full(y.num_frames, UNKNOWN)
    else:
        labels = patch_labels(centre_hz, truth.at_times(y.frame_times), tolerance_cents)
    return [
        Patch(extract_patch(y.values, int(b), n), int(b), n, float(centre_hz[n]), int(labels[n]))
        for n, b in enumerate(peaks)
    ]


def subsample_nonvocal(patches, rate: float = 0.1, seed: int = 0) -> list[Patch]:
    """Keep every vocal patch and each non-vocal one with probability ``rate``."""
    if not 0 < rate <= 1:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    patches = list(patches)
    if any(p.label == UNKNOWN for p in patches):
        raise ValueError("cannot subsample patches with unknown labels")
    draws = np.random.default_rng(seed).random(len(patches))
    return [p for p, u in zip(patches, draws) if p.label == 1 or u < rate]


def write_cfp_csv(y: TimeFrequencyMap, path) -> None:
    """Header row of log-bin Hz values, then one row per frame."""
    with open(path, "w") as fh:
        fh.write(",".join(f"{f:.3f}" for f in y.axis_values) + "\n")
        for frame in y.values.T:
            fh.write(",".join(f"{v:.6g}" for v in frame) + "\n")
