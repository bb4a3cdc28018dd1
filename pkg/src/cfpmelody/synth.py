"""Seeded synthetic signals with known pitch, for tests and experiments."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, PitchContour, write_wav

FS = 8000


def harmonic_tone(f0, duration: float = 0.5, amplitudes=(1.0,), fs: int = FS,
                  phases=None, peak: float = 0.8) -> AudioClip:
    """Sum of harmonics ``k * f0`` with the given amplitudes, normalised to ``peak``.

    ``f0`` may be a scalar or a per-sample array.  Harmonics at or above
    Nyquist are dropped.
    """
    n = int(round(duration * fs))
    f0 = np.broadcast_to(np.asarray(f0, dtype=np.float64), (n,))
    phase = 2.0 * np.pi * np.cumsum(f0) / fs
    phases = np.zeros(len(amplitudes)) if phases is None else np.asarray(phases)
    x = np.zeros(n)
    for k, (a, ph) in enumerate(zip(amplitudes, phases), start=1):
        mask = k * f0 < fs / 2
        x += np.where(mask, a * np.sin(k * phase + ph), 0.0)
    top = np.max(np.abs(x))
    if top > 0:
        x *= peak / top
    return AudioClip(x, fs)


def sine(f: float, duration: float = 1.0, fs: int = FS, amplitude: float = 0.5) -> AudioClip:
    t = np.arange(int(round(duration * fs))) / fs
    return AudioClip(amplitude * np.sin(2.0 * np.pi * f * t), fs)


def white_noise(duration: float = 1.0, fs: int = FS, std: float = 0.3, seed: int = 0) -> AudioClip:
    rng = np.random.default_rng(seed)
    return AudioClip(np.clip(rng.normal(0.0, std, int(round(duration * fs))), -1, 1), fs)


def random_harmonic_tone(rng: np.random.Generator, f_lo: float = 100.0, f_hi: float = 800.0,
                         min_harmonics: int = 3, max_harmonics: int = 6, max_gain: float = 2.0,
                         duration: float = 0.5) -> tuple[AudioClip, float]:
    """Tone with f0 log-uniform in ``[f_lo, f_hi]`` and overtones up to ``max_gain`` x the fundamental."""
    f0 = float(np.exp(rng.uniform(np.log(f_lo), np.log(f_hi))))
    n_h = int(rng.integers(min_harmonics, max_harmonics + 1))
    amps = np.concatenate([[1.0], rng.uniform(0.2, max_gain, n_h - 1)])
    return harmonic_tone(f0, duration, amps, phases=rng.uniform(0, 2 * np.pi, n_h)), f0


@dataclass(frozen=True)
class VocalSpec:
    duration: float = 1.5
    f_lo: float = 150.0
    f_hi: float = 600.0
    note_range: tuple[float, float] = (0.25, 0.6)
    rest_range: tuple[float, float] = (0.08, 0.25)
    harmonics: tuple[int, int] = (3, 6)
    vibrato_cents: tuple[float, float] = (20.0, 50.0)
    vibrato_rate: tuple[float, float] = (4.5, 6.5)
    noise_db: float = -20.0
    truth_hop: float = 0.01


def vocal_clip(rng: np.random.Generator, spec: VocalSpec = VocalSpec(), fs: int = FS) -> tuple[AudioClip, PitchContour]:
    """A sung-like line: notes with vibrato and harmonics, rests, a noise floor.

    The noise floor sits ``noise_db`` below the RMS of the voiced signal.
    Returns the clip and its truth contour (hop ``spec.truth_hop``, start 0).
    """
    n = int(round(spec.duration * fs))
    f0 = np.zeros(n)
    t = rng.uniform(*spec.rest_range) * 0.5
    while t < spec.duration:
        length = rng.uniform(*spec.note_range)
        a, b = int(t * fs), min(int((t + length) * fs), n)
        if b - a > fs // 20:
            base = float(np.exp(rng.uniform(np.log(spec.f_lo), np.log(spec.f_hi))))
            rate = rng.uniform(*spec.vibrato_rate)
            depth = rng.uniform(*spec.vibrato_cents)
            tt = np.arange(b - a) / fs
            f0[a:b] = base * 2.0 ** (depth * np.sin(2 * np.pi * rate * tt + rng.uniform(0, 2 * np.pi)) / 1200.0)
        t += length + rng.uniform(*spec.rest_range)

    voiced = f0 > 0
    n_h = int(rng.integers(spec.harmonics[0], spec.harmonics[1] + 1))
    amps = np.concatenate([[1.0], rng.uniform(0.3, 1.2, n_h - 1) / np.arange(2, n_h + 1) ** 0.5])
    phase = 2.0 * np.pi * np.cumsum(f0) / fs
    x = np.zeros(n)
    for k, amp in enumerate(amps, start=1):
        x += np.where(voiced & (k * f0 < fs / 2), amp * np.sin(k * phase), 0.0)

    # 10 ms fades at note edges
    ramp = int(0.01 * fs)
    env = np.convolve(voiced.astype(float), np.ones(ramp) / ramp, mode="same")
    x *= env
    if voiced.any():
        rms = np.sqrt(np.mean(x[voiced] ** 2))
        x += rng.normal(0.0, rms * 10 ** (spec.noise_db / 20.0), n)
    top = np.max(np.abs(x))
    if top > 0:
        x *= 0.8 / top

    times = np.arange(int(spec.duration / spec.truth_hop)) * spec.truth_hop
    idx = np.minimum((times * fs).astype(int), n - 1)
    return AudioClip(x, fs), PitchContour(f0[idx], spec.truth_hop, 0.0)


def vocal_corpus(n_clips: int, seed: int, spec: VocalSpec = VocalSpec()):
    """``n_clips`` clips from one seeded generator; returns (clips, truths)."""
    rng = np.random.default_rng(seed)
    pairs = [vocal_clip(rng, spec) for _ in range(n_clips)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def steady_tone_clip(rng: np.random.Generator, f0: float, duration: float = 0.6,
                     noise_db: float = -30.0, truth_hop: float = 0.01) -> tuple[AudioClip, PitchContour]:
    """A constant-pitch harmonic tone (or silence plus noise when ``f0 == 0``)."""
    n = int(round(duration * FS))
    if f0 > 0:
        amps = np.concatenate([[1.0], rng.uniform(0.2, 1.0, 3)])
        x = harmonic_tone(f0, duration, amps, phases=rng.uniform(0, 2 * np.pi, 4)).samples
        ref = np.sqrt(np.mean(x ** 2))
    else:
        x = np.zeros(n)
        ref = 0.3
    x = x + rng.normal(0.0, ref * 10 ** (noise_db / 20.0), n)
    times = np.arange(int(duration / truth_hop)) * truth_hop
    return AudioClip(np.clip(x, -1, 1), FS), PitchContour(np.full(len(times), float(f0)), truth_hop, 0.0)


def write_corpus(directory, clips, truths, splits, label_hop: float = 0.02, prefix: str = "clip") -> Path:
    """Write WAVs, one-value-per-line Hz label files and ``manifest.tsv``.

    ``splits`` gives the tag of each clip.  Labels are the truth sampled
    every ``label_hop`` seconds; entries tagged ``unlabeled`` still get a
    label file so that evaluation of pseudo labels stays possible.
    Returns the manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (clip, truth, tag) in enumerate(zip(clips, truths, splits)):
        name = f"{prefix}{i:04d}"
        write_wav(directory / f"{name}.wav", clip.samples, clip.sample_rate)
        n = int(len(clip.samples) / clip.sample_rate / label_hop)
        f0 = truth.at_times(np.arange(n) * label_hop)
        (directory / f"{name}.txt").write_text("".join(f"{v:.4f}\n" for v in f0))
        lines.append(f"{name}.wav\t{name}.txt\t{tag}")
    manifest = directory / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
