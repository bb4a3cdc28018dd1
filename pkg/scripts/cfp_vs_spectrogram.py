"""How often the per-frame argmax lands on f0: CFP vs plain spectrogram vs autocorrelation.

Uses random harmonic tones whose overtones may be louder than the fundamental.
"""

import argparse

import numpy as np

from cfpmelody.cfp import CfpConfig, cfp_representation, to_log_frequency
from cfpmelody.dsp import StftConfig, TimeFrequencyMap, autocorr_pitch, stft_frames
from cfpmelody.synth import random_harmonic_tone


def spectrogram_log(clip, cfg):
    padded = StftConfig(n_fft=cfg.n_fft)
    mag = np.abs(stft_frames(clip, padded))
    freqs = np.arange(mag.shape[0]) * padded.sample_rate / padded.fft_size
    return to_log_frequency(TimeFrequencyMap(mag, "linear_frequency", freqs, padded.hop_seconds), cfg)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tones", type=int, default=50)
    ap.add_argument("--max-gain", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    cfg = CfpConfig()
    rng = np.random.default_rng(args.seed)
    hits = {"cfp": [], "spectrogram": [], "autocorr": []}
    for _ in range(args.tones):
        clip, f0 = random_harmonic_tone(rng, max_gain=args.max_gain)
        target = cfg.log_bins_per_octave * np.log2(f0 / cfg.log_f_low)
        hits["cfp"].append(np.mean(np.abs(np.argmax(cfp_representation(clip).values, axis=0) - target) <= 1))
        hits["spectrogram"].append(np.mean(np.abs(np.argmax(spectrogram_log(clip, cfg).values, axis=0) - target) <= 1))
        est = autocorr_pitch(clip).f0
        hits["autocorr"].append(np.mean((est > 0) & (np.abs(1200 * np.log2(np.maximum(est, 1e-9) / f0)) <= 50)))
    for name, h in hits.items():
        h = np.array(h)
        print(f"{name:12s} mean frame hit rate {100 * h.mean():6.2f}%   tones below 95%: {np.mean(h < 0.95) * 100:5.1f}%")


if __name__ == "__main__":
    main()
