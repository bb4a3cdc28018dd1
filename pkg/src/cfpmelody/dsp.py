"""Spectral kernels: Hann window, STFT and the autocorrelation pitch tracker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip, PitchContour

AXIS_KINDS = ("linear_frequency", "quefrency", "log_frequency")


@dataclass(frozen=True)
class StftConfig:
    """Frame layout of the short-time transform.

    ``n_fft`` defaults to ``window_size``; a larger power of two zero-pads
    each windowed frame before the transform.
    """

    window_size: int = 1024
    hop: int = 80
    sample_rate: int = 8000
    n_fft: int | None = None

    def __post_init__(self):
        if self.window_size < 2 or self.window_size & (self.window_size - 1):
            raise ValueError(f"window_size must be a power of two, got {self.window_size}")
        if not 0 < self.hop <= self.window_size:
            raise ValueError(f"hop must be in (0, window_size], got {self.hop}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.n_fft is not None and (self.n_fft < self.window_size or self.n_fft & (self.n_fft - 1)):
            raise ValueError("n_fft must be a power of two >= window_size")

    @property
    def fft_size(self) -> int:
        return self.n_fft or self.window_size

    @property
    def hop_seconds(self) -> float:
        return self.hop / self.sample_rate

    @property
    def first_frame_seconds(self) -> float:
        """Time of the first frame's centre (frames are not centre-padded)."""
        return self.window_size / 2 / self.sample_rate

    def num_frames(self, n_samples: int) -> int:
        if n_samples < self.window_size:
            return 0
        return 1 + (n_samples - self.window_size) // self.hop


@dataclass(frozen=True)
class TimeFrequencyMap:
    """A real matrix ``values[bin, frame]`` with a physical axis.

    ``axis_values`` holds Hz for frequency axes and seconds for quefrency.
    """

    values: np.ndarray
    axis_kind: str
    axis_values: np.ndarray
    hop_seconds: float
    start_seconds: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        axis = np.asarray(self.axis_values, dtype=np.float64)
        if self.axis_kind not in AXIS_KINDS:
            raise ValueError(f"unknown axis kind {self.axis_kind!r}")
        if values.ndim != 2 or values.shape[0] != len(axis):
            raise ValueError(f"values shape {values.shape} does not match axis length {len(axis)}")
        if len(axis) > 1 and not np.all(np.diff(axis) > 0):
            raise ValueError("axis_values must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("map values must be finite")
        if self.hop_seconds <= 0:
            raise ValueError("hop_seconds must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "axis_values", axis)

    @property
    def num_bins(self) -> int:
        return self.values.shape[0]

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]

    @property
    def frame_times(self) -> np.ndarray:
        return self.start_seconds + self.hop_seconds * np.arange(self.num_frames)

    def with_values(self, values, axis_kind=None, axis_values=None) -> "TimeFrequencyMap":
        return TimeFrequencyMap(
            values,
            self.axis_kind if axis_kind is None else axis_kind,
            self.axis_values if axis_values is None else axis_values,
            self.hop_seconds,
            self.start_seconds,
        )


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window, ``0.5 * (1 - cos(2 pi i / (n - 1)))``."""
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    i = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n - 1)))


def frame_signal(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Slice into overlapping frames, shape [frames, window_size]. No padding."""
    samples = np.asarray(samples, dtype=np.float64)
    n_frames = cfg.num_frames(len(samples))
    if n_frames == 0:
        raise ValueError(
            f"signal of {len(samples)} samples is shorter than one window ({cfg.window_size})"
        )
    view = np.lib.stride_tricks.sliding_window_view(samples, cfg.window_size)
    return view[::cfg.hop][:n_frames]


def stft_frames(clip: AudioClip, cfg: StftConfig) -> np.ndarray:
    """Complex half-spectra of Hann-windowed frames, shape [bins, frames]."""
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} != configured rate {cfg.sample_rate}")
    frames = frame_signal(clip.samples, cfg) * hann_window(cfg.window_size)
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1).T


def stft_magnitude(clip: AudioClip, cfg: StftConfig = StftConfig(), *, log: bool = False) -> TimeFrequencyMap:
    """Magnitude spectrogram; ``log=True`` returns ``ln(1 + |X|)`` instead."""
    mag = np.abs(stft_frames(clip, cfg))
    if log:
        mag = np.log1p(mag)
    freqs = np.arange(mag.shape[0]) * cfg.sample_rate / cfg.fft_size
    return TimeFrequencyMap(mag, "linear_frequency", freqs, cfg.hop_seconds, cfg.first_frame_seconds)


def _parabolic_offset(left, centre, right):
    denom = left - 2.0 * centre + right
    with np.errstate(divide="ignore", invalid="ignore"):
        offset = np.where(denom < 0, 0.5 * (left - right) / denom, 0.0)
    return np.clip(offset, -0.5, 0.5)


PEAK_RATIO = 0.9


def _first_strong_peak(r, lag_lo, lag_hi, ratio):
    """Smallest lag in range holding a local maximum within ``ratio`` of the best one.

    Peak heights are compared after parabolic refinement.  Taking the plain
    argmax picks twice the period whenever the true period falls between
    integer lags; the earliest strong peak does not.
    """
    seg = r[:, lag_lo:lag_hi + 1]
    left = r[:, lag_lo - 1:lag_hi]
    right = r[:, lag_lo + 1:lag_hi + 2]
    is_peak = (seg >= left) & (seg >= right) & (seg > 0)
    height = seg - 0.25 * (left - right) * _parabolic_offset(left, seg, right)
    peak_vals = np.where(is_peak, height, -np.inf)
    best = peak_vals.max(axis=1, keepdims=True)
    strong = is_peak & (peak_vals >= ratio * best)
    has_peak = np.isfinite(best[:, 0])
    first = np.where(has_peak, np.argmax(strong, axis=1), np.argmax(seg, axis=1))
    return first + lag_lo


def frame_autocorrelation(clip: AudioClip, cfg: StftConfig) -> np.ndarray:
    """Per-frame autocorrelation via the inverse transform of the power spectrum.

    The frame is zero-padded to at least twice its length, so this is the
    linear (not circular) autocorrelation.  Returns [frames, lags].
    """
    n_fft = max(cfg.fft_size, 2 * cfg.window_size)
    frames = frame_signal(clip.samples, cfg) * hann_window(cfg.window_size)
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return np.fft.irfft(spec.real ** 2 + spec.imag ** 2, n=n_fft, axis=1)[:, :cfg.window_size]


def autocorr_pitch(
    clip: AudioClip,
    cfg: StftConfig = StftConfig(),
    f_min: float = 73.416,
    f_max: float = 1760.0,
    voicing_threshold: float = 0.4,
) -> PitchContour:
    """Autocorrelation pitch tracker.

    In every frame the period is the earliest autocorrelation peak in
    ``[fs / f_max, fs / f_min]`` that comes within ``PEAK_RATIO`` of the
    strongest one, refined by a parabola through its neighbours.  The frame is voiced when that peak reaches
    ``voicing_threshold`` times the zero-lag energy.  Silent frames
    (zero energy) are unvoiced.
    """
    fs = cfg.sample_rate
    if not 0 < f_min < f_max <= fs / 2:
        raise ValueError(f"need 0 < f_min < f_max <= fs/2, got f_min={f_min}, f_max={f_max}")
    if not 0 < voicing_threshold < 1:
        raise ValueError("voicing_threshold must be in (0, 1)")
    lag_lo = max(int(np.floor(fs / f_max)), 1)
    lag_hi = min(int(np.ceil(fs / f_min)), cfg.window_size - 2)
    if lag_lo > lag_hi:
        raise ValueError(f"empty lag search range for f_min={f_min}, f_max={f_max} at {fs} Hz")

    r = frame_autocorrelation(clip, cfg)
    energy = r[:, 0]
    lag = _first_strong_peak(r, lag_lo, lag_hi, PEAK_RATIO)
    rows = np.arange(len(r))
    peak = r[rows, lag]
    offset = _parabolic_offset(r[rows, lag - 1], peak, r[rows, lag + 1])

    # tiny energies are numerically silent; their ratio is noise
    silent = energy <= 1e-12 * cfg.window_size
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(silent, 0.0, peak / np.where(silent, 1.0, energy))
    voiced = (ratio >= voicing_threshold) & ~silent
    f0 = np.where(voiced, fs / (lag + offset), 0.0)
    return PitchContour(f0, cfg.hop_seconds, cfg.first_frame_seconds)
