"""Audio and label I/O.

Everything downstream expects mono audio at 8 kHz; :func:`load_wav` merges
channels and :func:`resample_to_8k` brings the rate down.  Pitch contours are
read from one-value-per-line label files and written as ``time_sec,f0_hz``
CSV.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import firwin, resample_poly

TARGET_RATE = 8000
F0_MIN_HZ = 20.0
F0_MAX_HZ = 4000.0

SPLIT_TAGS = ("labeled", "unlabeled", "eval")

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    """The file is not a well-formed RIFF/WAVE file."""


class UnsupportedEncodingError(ValueError):
    """The WAVE file is valid but uses an encoding we do not decode."""


class LabelFormatError(ValueError):
    """A label or manifest file could not be parsed."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class PitchContour:
    """Per-frame f0 in Hz; 0 marks an unvoiced frame.

    Frame ``i`` sits at ``start_seconds + i * hop_seconds``.
    """

    f0: np.ndarray
    hop_seconds: float
    start_seconds: float = 0.0

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        if self.hop_seconds <= 0:
            raise ValueError(f"hop_seconds must be positive, got {self.hop_seconds}")
        if self.start_seconds < 0:
            raise ValueError("start_seconds must be >= 0")
        if not np.all(np.isfinite(f0)):
            raise ValueError("f0 values must be finite")
        voiced = f0 != 0
        if np.any((f0[voiced] < F0_MIN_HZ) | (f0[voiced] > F0_MAX_HZ)):
            raise ValueError(f"voiced f0 values must lie in [{F0_MIN_HZ}, {F0_MAX_HZ}] Hz")
        object.__setattr__(self, "f0", f0)

    def __len__(self):
        return len(self.f0)

    @property
    def times(self) -> np.ndarray:
        return self.start_seconds + self.hop_seconds * np.arange(len(self.f0))

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0

    def at_times(self, times) -> np.ndarray:
        """Sample the contour at arbitrary times by nearest frame.

        Times falling more than half a hop outside the contour are unvoiced.
        """
        times = np.asarray(times, dtype=np.float64)
        if len(self.f0) == 0:
            return np.zeros_like(times)
        idx = np.floor((times - self.start_seconds) / self.hop_seconds + 0.5).astype(np.int64)
        inside = (idx >= 0) & (idx < len(self.f0))
        out = np.zeros_like(times)
        out[inside] = self.f0[idx[inside]]
        return out


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: Path
    label_path: Path | None
    split_tag: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.split_tag not in SPLIT_TAGS:
                raise LabelFormatError(f"invalid split tag {entry.split_tag!r}")
            key = (entry.audio_path, entry.label_path)
            if key in seen:
                raise LabelFormatError(f"duplicate manifest entry {entry.audio_path}")
            seen.add(key)

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split_tag == tag]


# --------------------------------------------------------------------------
# WAV


def _read_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("missing RIFF/WAVE header")
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise WavFormatError(f"truncated {cid!r} chunk")
        yield cid, body
        pos += 8 + size + (size & 1)


def load_wav(path) -> AudioClip:
    """Read a PCM16 or float32 WAVE file as a mono clip.

    Two-channel files are averaged, ``(L + R) / 2``.  16-bit samples are
    divided by 32768.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    data = path.read_bytes()

    fmt = None
    payload = None
    for cid, body in _read_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError("fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise WavFormatError("extensible fmt chunk too short")
                (sub,) = struct.unpack("<H", body[24:26])
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            payload = body
    if fmt is None:
        raise WavFormatError("missing fmt chunk")
    if payload is None:
        raise WavFormatError("missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncodingError(f"{channels} channels (only mono/stereo supported)")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncodingError(f"format tag {tag} with {bits} bits per sample")
    if rate <= 0:
        raise WavFormatError("sample rate of zero")
    if block_align != channels * dtype.itemsize:
        raise WavFormatError(f"block_align {block_align} inconsistent with format")

    n_frames = len(payload) // block_align
    if n_frames == 0:
        raise WavFormatError("data chunk holds no samples")
    raw = np.frombuffer(payload[:n_frames * block_align], dtype=dtype).astype(np.float64)
    raw = raw.reshape(n_frames, channels) * scale
    samples = raw.mean(axis=1) if channels == 2 else raw[:, 0]
    if not np.all(np.isfinite(samples)):
        raise WavFormatError("non-finite float samples")
    return AudioClip(np.clip(samples, -1.0, 1.0), int(rate))


def write_wav(path, samples, sample_rate: int, *, float32: bool = False) -> None:
    """Write mono or stereo audio; ``samples`` shaped [n] or [n, 2]."""
    samples = np.asarray(samples, dtype=np.float64)
    channels = 1 if samples.ndim == 1 else samples.shape[1]
    if float32:
        body = samples.astype("<f4").tobytes()
        tag, width = _WAVE_FORMAT_IEEE_FLOAT, 4
    else:
        ints = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
        body = ints.tobytes()
        tag, width = _WAVE_FORMAT_PCM, 2
    block = channels * width
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * block, block, 8 * width)
    out = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    out += b"data" + struct.pack("<I", len(body)) + body
    if len(body) & 1:
        out += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(out)) + out)


# --------------------------------------------------------------------------
# Resampling

_TAPS_PER_PHASE = 64


def resample_to_8k(clip: AudioClip) -> AudioClip:
    """Downsample to 8 kHz with a windowed-sinc anti-aliasing filter.

    The low-pass cuts off at 0.45 x 8000 Hz (3.6 kHz); the output holds
    ``round(len * 8000 / rate)`` samples.  Upsampling is refused.
    """
    rate = clip.sample_rate
    if rate < TARGET_RATE:
        raise ValueError(f"cannot resample {rate} Hz up to {TARGET_RATE} Hz")
    if rate == TARGET_RATE:
        return clip

    ratio = Fraction(TARGET_RATE, rate)
    up, down = ratio.numerator, ratio.denominator
    n_out = int(round(len(clip.samples) * TARGET_RATE / rate))

    numtaps = _TAPS_PER_PHASE * max(up, down) + 1
    taps = firwin(numtaps, 0.45 * TARGET_RATE, window=("kaiser", 8.0), fs=rate * up)
    y = resample_poly(clip.samples, up, down, window=taps)[:n_out]
    if len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)))
    return AudioClip(np.clip(y, -1.0, 1.0), TARGET_RATE)


def prepare_clip(path) -> AudioClip:
    """Load a WAV file and bring it to the 8 kHz mono working format."""
    return resample_to_8k(load_wav(path))


# --------------------------------------------------------------------------
# Labels and contours


def midi_to_hz(m):
    return 440.0 * 2.0 ** ((np.asarray(m, dtype=np.float64) - 69.0) / 12.0)


def load_pitch_labels(path, format: str = "hz", hop_seconds: float = 0.02,
                      start_seconds: float = 0.0) -> PitchContour:
    """Read one pitch value per line.

    ``format`` is ``"hz"`` or ``"midi_semitone"``.  A value of 0 is unvoiced in
    either format; negative values are also treated as unvoiced, which is how
    several annotation sets mark silence.
    """
    if format not in ("hz", "midi_semitone"):
        raise ValueError(f"unknown label format {format!r}")
    if hop_seconds <= 0:
        raise ValueError("hop_seconds must be positive")
    path = Path(path)
    values = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise LabelFormatError(f"{path}:{lineno}: not a number: {text!r}") from None
            if not math.isfinite(v):
                raise LabelFormatError(f"{path}:{lineno}: non-finite value")
            values.append(v)
    if not values:
        raise LabelFormatError(f"{path}: empty label file")
    vals = np.asarray(values)
    f0 = np.zeros_like(vals)
    voiced = vals > 0
    f0[voiced] = midi_to_hz(vals[voiced]) if format == "midi_semitone" else vals[voiced]
    return PitchContour(f0, hop_seconds, start_seconds)


def write_contour_csv(contour: PitchContour, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("time_sec,f0_hz\n")
        for t, f in zip(contour.times, contour.f0):
            fh.write(f"{t:.6f},{f:.3f}\n")


def load_contour_csv(path) -> PitchContour:
    """Read back a ``time_sec,f0_hz`` CSV written by :func:`write_contour_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["time_sec", "f0_hz"]:
            raise LabelFormatError(f"{path}: expected header time_sec,f0_hz")
        rows = [(float(t), float(f)) for t, f in reader]
    if len(rows) < 2:
        raise LabelFormatError(f"{path}: need at least two rows to infer the hop")
    times = np.array([r[0] for r in rows])
    hop = float(np.median(np.diff(times)))
    return PitchContour(np.array([r[1] for r in rows]), hop, max(times[0], 0.0))


def load_manifest(path) -> DatasetManifest:
    """Parse ``audio_path<TAB>label_path<TAB>split_tag`` lines.

    Relative paths resolve against the manifest's directory.  A label path of
    ``-`` (or empty) means no labels, which is normal for unlabeled entries.
    Blank lines and ``#`` comments are skipped.
    """
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise LabelFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        audio, label, tag = (p.strip() for p in parts)
        label_path = None if label in ("", "-") else base / label
        entries.append(ManifestEntry(base / audio, label_path, tag))
    return DatasetManifest(tuple(entries))
