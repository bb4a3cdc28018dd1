"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) and
then asserts at the criterion's tolerance and time budget.
"""

import math
import time

import numpy as np
import pytest

from cfpmelody.audio_io import PitchContour
from cfpmelody.cfp import CfpConfig, cfp_representation, to_log_frequency
from cfpmelody.dsp import StftConfig, TimeFrequencyMap, autocorr_pitch, stft_frames
from cfpmelody.evaluation import evaluate
from cfpmelody.models import (
    DenseClassifier,
    FrameClassifier,
    PatchCnn,
    QuantizerConfig,
    extract_melody_patchcnn,
    hz_to_label,
    label_to_hz,
    patch_cnn_network,
)
from cfpmelody.neural import gradient_check, relative_error
from cfpmelody.synth import random_harmonic_tone, vocal_corpus, white_noise
from cfpmelody.training import (
    TrainConfig,
    agreement,
    clip_patches,
    generate_pseudo_labels,
    patch_dataset,
    teacher_student_loss,
    train_student,
    train_supervised,
)
from cfpmelody.neural import numerical_gradient

pytestmark = pytest.mark.slow

CFG = CfpConfig()


def _log_bin(f):
    return CFG.log_bins_per_octave * np.log2(np.asarray(f) / CFG.log_f_low)


def _tones(seed, n=50):
    rng = np.random.default_rng(seed)
    return [random_harmonic_tone(rng) for _ in range(n)]


def _gradient_errors(model, x, seed):
    rng = np.random.default_rng(seed)
    upstream = rng.normal(size=model.network.forward(x).shape)
    results = gradient_check(model.network, x, upstream, samples_per_param=10, h=1e-4, rng=rng)
    requested = sum(min(10, p.value.size) for p in model.network.params.values()) + 10
    return [relative_error(a, n) for _, _, a, n in results], requested


def test_gradient_integrity(acceptance_line):
    start = time.perf_counter()
    worst = {"patch_cnn": 0.0, "frame_classifier": 0.0}
    checked = requested = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cnn = PatchCnn(patch_cnn_network(seed))
        errs, asked = _gradient_errors(cnn, rng.uniform(0, 1, (1, 1, 25, 25)), seed)
        worst["patch_cnn"] = max(worst["patch_cnn"], max(errs))
        checked, requested = checked + len(errs), requested + asked
        fc = FrameClassifier(seed=seed)
        errs, asked = _gradient_errors(fc, rng.uniform(0, 3, (1, 1, 31, 513)), seed)
        worst["frame_classifier"] = max(worst["frame_classifier"], max(errs))
        checked, requested = checked + len(errs), requested + asked
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and checked >= 0.8 * requested and elapsed < 120
    acceptance_line("gradient integrity (FD h=1e-4, rel err < 1e-4, 20 seeds)", ok,
                    f"max rel err cnn {worst['patch_cnn']:.2e}, frame {worst['frame_classifier']:.2e}, "
                    f"{checked} of {requested} sampled entries, the rest straddle a ReLU kink; {elapsed:.1f}s")
    assert ok


def _spectrogram_log_argmax(clip):
    padded = StftConfig(n_fft=CFG.n_fft)
    mag = np.abs(stft_frames(clip, padded))
    freqs = np.arange(mag.shape[0]) * padded.sample_rate / padded.fft_size
    m = TimeFrequencyMap(mag, "linear_frequency", freqs, padded.hop_seconds)
    return np.argmax(to_log_frequency(m, CFG).values, axis=0)


def test_cfp_fundamental_recovery(acceptance_line):
    start = time.perf_counter()
    hits = frames = spec_fail = 0
    for clip, f0 in _tones(seed=2024):
        target = _log_bin(f0)
        y = cfp_representation(clip)
        near = np.abs(np.argmax(y.values, axis=0) - target) <= 1
        hits += int(near.sum())
        frames += len(near)
        spec_near = np.abs(_spectrogram_log_argmax(clip) - target) <= 1
        spec_fail += spec_near.mean() < 0.95
    elapsed = time.perf_counter() - start
    frac, fail_frac = hits / frames, spec_fail / 50
    ok = frac >= 0.95 and fail_frac >= 0.30 and elapsed < 60
    acceptance_line("CFP argmax within 1 log bin of f0", ok,
                    f"{100 * frac:.1f}% of {frames} frames; spectrogram argmax fails on "
                    f"{100 * fail_frac:.0f}% of tones; {elapsed:.1f}s")
    assert ok


def test_sp_autocorrelation(acceptance_line):
    start = time.perf_counter()
    rpas = []
    for clip, f0 in _tones(seed=7):
        est = autocorr_pitch(clip)
        truth = PitchContour(np.full(len(est), f0), est.hop_seconds, est.start_seconds)
        rpas.append(evaluate(est, truth).rpa)
    unvoiced = np.concatenate([autocorr_pitch(white_noise(0.5, seed=s), voicing_threshold=0.5).f0 == 0
                               for s in range(50)])
    elapsed = time.perf_counter() - start
    rpa, unv = float(np.mean(rpas)), float(unvoiced.mean())
    ok = rpa >= 0.95 and unv >= 0.90 and elapsed < 60
    acceptance_line("SP autocorrelation pitch", ok,
                    f"RPA {100 * rpa:.1f}% on 50 tones, {100 * unv:.1f}% of noise frames unvoiced, {elapsed:.1f}s")
    assert ok


def test_patch_cnn_end_to_end(acceptance_line):
    start = time.perf_counter()
    train_clips, train_truths = vocal_corpus(200, seed=1)
    x, y = patch_dataset(train_clips, train_truths, nonvocal_rate=0.1, seed=0)
    model, _ = train_supervised(PatchCnn(patch_cnn_network(0)), x, y,
                                TrainConfig(epochs=5, batch_size=64, learning_rate=1e-3, seed=0))
    test_clips, test_truths = vocal_corpus(50, seed=2)
    rpas = [evaluate(extract_melody_patchcnn(c, model), t).rpa for c, t in zip(test_clips, test_truths)]
    elapsed = time.perf_counter() - start
    rpa = float(np.mean(rpas))
    ok = rpa >= 0.85 and elapsed < 15 * 60
    acceptance_line("patch CNN end to end on synthetic vocals", ok,
                    f"held-out RPA {100 * rpa:.1f}% over 50 clips, {len(x)} training patches, {elapsed:.0f}s")
    assert ok


def test_teacher_student(acceptance_line):
    start = time.perf_counter()
    cfg = TrainConfig(epochs=4, batch_size=64, learning_rate=1e-3, seed=0)
    labeled = vocal_corpus(60, seed=11)
    x_d, y_d = patch_dataset(*labeled, nonvocal_rate=0.1, seed=0)
    teacher, _ = train_supervised(PatchCnn(patch_cnn_network(0)), x_d, y_d, cfg)

    # the unlabeled set comes from a different generator seed than the labeled one
    x_u = clip_patches(vocal_corpus(60, seed=12)[0])
    pseudo = generate_pseudo_labels(teacher, x_u)
    student, _ = train_student(PatchCnn(patch_cnn_network(1)), x_u, pseudo, cfg=cfg)
    x_held = clip_patches(vocal_corpus(30, seed=13)[0])
    agree = agreement(student, teacher, x_held)

    # the H(y_u, y_t) term does not depend on the student: FD gradient is zero
    rng = np.random.default_rng(0)
    small = DenseClassifier((8, 8, 4), seed=0)
    n_params = small.network.params.count()
    xs = rng.normal(size=(16, 8))
    y_u, y_t = rng.integers(0, 4, 16), rng.integers(0, 4, 16)
    max_grad = 0.0
    for p in small.network.params.values():
        for i in range(p.value.size):
            idx = np.unravel_index(i, p.shape)
            g = numerical_gradient(lambda: teacher_student_loss(small, xs, y_u, y_t)[2], p.value, idx)
            max_grad = max(max_grad, abs(g))
    elapsed = time.perf_counter() - start
    ok = agree >= 0.90 and max_grad == 0.0 and elapsed < 600
    acceptance_line("teacher-student", ok,
                    f"student/teacher agreement {100 * agree:.1f}% on {len(x_held)} held-out patches; "
                    f"max |dH2/dw| {max_grad:g} over {n_params} params; {elapsed:.0f}s")
    assert ok


def _brute_force(est, ref, tol=50.0):
    voiced = hp = hc = 0
    for e, r in zip(est, ref):
        if r <= 0:
            continue
        voiced += 1
        if e <= 0:
            continue
        c = 1200.0 * math.log2(e / r)
        hp += abs(c) <= tol
        hc += min(abs(c + 1200 * k) for k in range(-5, 6)) <= tol
    return hp / voiced, hc / voiced


def test_evaluation_oracle(acceptance_line):
    rng = np.random.default_rng(42)
    exact = ordered = 0
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        ref = np.where(rng.random(n) < 0.7, np.exp(rng.uniform(np.log(60), np.log(1800), n)), 0.0)
        if not np.any(ref > 0):
            ref[0] = 220.0
        # mix of near hits, octave errors, wild guesses and unvoiced estimates
        kind = rng.integers(0, 4, n)
        est = np.select([kind == 0, kind == 1, kind == 2],
                        [ref * 2 ** (rng.normal(0, 40, n) / 1200),
                         ref * 2.0 ** rng.integers(-3, 4, n) * 2 ** (rng.normal(0, 40, n) / 1200),
                         np.exp(rng.uniform(np.log(60), np.log(1800), n))], 0.0)
        est = np.where(ref > 0, est, np.exp(rng.uniform(np.log(60), np.log(1800), n)) * (kind < 2))
        est = np.where(est > 0, np.clip(est, 25.0, 3990.0), 0.0)
        r = evaluate(PitchContour(est, 0.01), PitchContour(ref, 0.01))
        exact += (r.rpa, r.rca) == _brute_force(est, ref)
        ordered += r.rca >= r.rpa
    hand = evaluate(PitchContour(np.array([221.0, 440.0, 0.0, 300.0]), 0.01),
                    PitchContour(np.array([220.0, 220.0, 220.0, 0.0]), 0.01))
    hand_ok = math.isclose(hand.rpa, 1 / 3) and math.isclose(hand.rca, 2 / 3)
    ok = exact == 1000 and ordered == 1000 and hand_ok
    acceptance_line("evaluation matches brute-force oracle", ok,
                    f"{exact}/1000 exact, RCA >= RPA on {ordered}/1000, hand example "
                    f"RPA {hand.rpa:.4f} RCA {hand.rca:.4f}")
    assert ok


def test_quantizer_round_trip(acceptance_line):
    q = QuantizerConfig()
    f = np.random.default_rng(5).uniform(q.f_min, q.f_min * 2 ** (440 / 96), 10_000)
    err = np.abs(1200 * np.log2(label_to_hz(hz_to_label(f, q), q) / f))
    ok = float(err.max()) <= 6.25
    acceptance_line("quantizer round trip", ok, f"max |error| {err.max():.4f} cents over 10000 frequencies")
    assert ok


def test_real_dataset_results(acceptance_line):
    acceptance_line("real-dataset RPA (informational)", None, "no MIR-1K / MIREX05 audio available")
    pytest.skip("informational only: MIR-1K / MIREX05 audio is not available offline")
