"""Raw pitch accuracy (RPA) and raw chroma accuracy (RCA)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .audio_io import PitchContour

OCTAVE_SHIFTS = np.arange(-5, 6)


class NoVoicedFramesError(ValueError):
    """The reference contour has no voiced frame, so the ratios are undefined."""


@dataclass(frozen=True)
class MetricsReport:
    rpa: float
    rca: float
    voiced_frames: int
    total_frames: int
    tolerance_cents: float = 50.0

    def __post_init__(self):
        if not 0 <= self.voiced_frames <= self.total_frames:
            raise ValueError("voiced_frames must lie in [0, total_frames]")


def cents_difference(f_est, f_ref):
    """``1200 log2(f_est / f_ref)``; both frequencies must be positive."""
    f_est = np.asarray(f_est, dtype=np.float64)
    f_ref = np.asarray(f_ref, dtype=np.float64)
    if np.any(f_est <= 0) or np.any(f_ref <= 0):
        raise ValueError("cents are only defined between positive frequencies")
    c = 1200.0 * np.log2(f_est / f_ref)
    return float(c) if c.ndim == 0 else c


def chroma_distance(c):
    """``min_k |c + 1200 k|`` over octave shifts k in [-5, 5]."""
    c = np.asarray(c, dtype=np.float64)
    return np.min(np.abs(c[..., None] + 1200.0 * OCTAVE_SHIFTS), axis=-1)


def align(est: PitchContour, truth: PitchContour) -> np.ndarray:
    """Estimate sampled at the truth's frame times (nearest estimate frame)."""
    return est.at_times(truth.times)


def frame_scores(est_f0, ref_f0, tolerance_cents: float = 50.0):
    """Per-frame pitch and chroma hits on already-aligned arrays.

    Returns ``(pitch_hit, chroma_hit, ref_voiced)`` boolean arrays.
    """
    est_f0 = np.asarray(est_f0, dtype=np.float64)
    ref_f0 = np.asarray(ref_f0, dtype=np.float64)
    ref_voiced = ref_f0 > 0
    both = ref_voiced & (est_f0 > 0)
    c = np.full(len(ref_f0), np.inf)
    c[both] = 1200.0 * np.log2(est_f0[both] / ref_f0[both])
    pitch_hit = both & (np.abs(c) <= tolerance_cents)
    chroma_hit = both.copy()
    chroma_hit[both] = chroma_distance(c[both]) <= tolerance_cents
    return pitch_hit, chroma_hit, ref_voiced


def evaluate(est: PitchContour, truth: PitchContour, tolerance_cents: float = 50.0) -> MetricsReport:
    """RPA and RCA over the truth's voiced frames.

    The estimate is resampled onto the truth's frame times first.  An
    unvoiced estimate on a voiced truth frame counts as a miss.
    """
    if len(truth) == 0:
        raise ValueError("truth contour is empty")
    est_f0 = align(est, truth)
    pitch_hit, chroma_hit, ref_voiced = frame_scores(est_f0, truth.f0, tolerance_cents)
    n_voiced = int(ref_voiced.sum())
    if n_voiced == 0:
        raise NoVoicedFramesError("truth contour has no voiced frames")
    return MetricsReport(pitch_hit.sum() / n_voiced, chroma_hit.sum() / n_voiced,
                         n_voiced, len(truth), tolerance_cents)


def mean_report(reports) -> tuple[float, float]:
    """Unweighted mean RPA and RCA across clips."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    return (float(np.mean([r.rpa for r in reports])), float(np.mean([r.rca for r in reports])))


def write_report_csv(rows, path) -> tuple[float, float]:
    """Write ``clip_id,rpa,rca,voiced_frames,total_frames`` plus a ``mean`` row.

    ``rows`` is a sequence of ``(clip_id, MetricsReport)``.  Returns the
    mean (RPA, RCA).
    """
    rows = list(rows)
    mean_rpa, mean_rca = mean_report(r for _, r in rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "rpa", "rca", "voiced_frames", "total_frames"])
        for clip_id, r in rows:
            w.writerow([clip_id, f"{r.rpa:.6f}", f"{r.rca:.6f}", r.voiced_frames, r.total_frames])
        w.writerow(["mean", f"{mean_rpa:.6f}", f"{mean_rca:.6f}",
                    sum(r.voiced_frames for _, r in rows), sum(r.total_frames for _, r in rows)])
    return mean_rpa, mean_rca


def format_summary(rpa: float, rca: float) -> str:
    return f"RPA/RCA: {100 * rpa:.2f}/{100 * rca:.2f}"
