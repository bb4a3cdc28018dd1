"""Vocal melody extraction from CFP patches, with an autocorrelation baseline,
teacher-student training and RPA/RCA evaluation."""

from .audio_io import AudioClip, PitchContour, load_wav, prepare_clip, resample_to_8k, write_contour_csv
from .cfp import CfpConfig, cfp_representation, select_patches
from .dsp import StftConfig, TimeFrequencyMap, autocorr_pitch, stft_magnitude
from .evaluation import MetricsReport, evaluate
from .models import (FrameClassifier, PatchCnn, QuantizerConfig, extract_melody_patchcnn, hz_to_label,
                     label_to_hz, load_model, save_model)

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "PitchContour", "load_wav", "prepare_clip", "resample_to_8k", "write_contour_csv",
    "CfpConfig", "cfp_representation", "select_patches",
    "StftConfig", "TimeFrequencyMap", "autocorr_pitch", "stft_magnitude",
    "MetricsReport", "evaluate",
    "FrameClassifier", "PatchCnn", "QuantizerConfig", "extract_melody_patchcnn", "hz_to_label", "label_to_hz",
    "load_model", "save_model",
]
