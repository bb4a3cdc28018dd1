import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfpmelody.audio_io import AudioClip
from cfpmelody.cfp import Patch
from cfpmelody.dsp import StftConfig
from cfpmelody.models import (
    CONTEXT_FRAMES,
    DenseClassifier,
    FrameClassifier,
    ModelShapeError,
    PatchCnn,
    QuantizerConfig,
    context_windows,
    extract_melody_frame_classifier,
    extract_melody_patchcnn,
    frame_classifier_predict,
    hz_to_label,
    label_to_hz,
    load_model,
    patch_cnn_network,
    patch_cnn_predict,
    save_model,
)
from cfpmelody.neural import CheckpointError
from cfpmelody.synth import steady_tone_clip
from cfpmelody.training import TrainConfig, frame_dataset, train_supervised

Q = QuantizerConfig()


def test_quantizer_reference_values():
    assert hz_to_label(73.416) == 1
    assert hz_to_label(2 * 73.416) == 97
    # 96 log2(440 / 73.416) = 248.00036
    assert hz_to_label(440.0) == 249
    assert hz_to_label(0.0) == 0
    assert hz_to_label(10.0) == 1
    assert hz_to_label(4000.0) == 441
    assert Q.num_classes == 442
    assert Q.f_max == pytest.approx(1759.9954, abs=1e-3)


def test_label_to_hz():
    assert label_to_hz(0) == 0.0
    assert label_to_hz(1) == pytest.approx(73.416)
    assert label_to_hz(97) == pytest.approx(146.832)
    with pytest.raises(ValueError):
        label_to_hz(442)
    with pytest.raises(ValueError):
        hz_to_label(-1.0)


@given(st.floats(73.416, 1759.99))
def test_quantizer_round_trip(f):
    assert abs(1200 * np.log2(label_to_hz(hz_to_label(f)) / f)) <= 6.25 + 1e-9


@given(st.floats(1.0, 3000.0), st.floats(1.0, 3000.0))
def test_quantizer_monotone(a, b):
    lo, hi = sorted((a, b))
    assert hz_to_label(lo) <= hz_to_label(hi)


def test_quantizer_array():
    np.testing.assert_array_equal(hz_to_label(np.array([0.0, 73.416, 440.0])), [0, 1, 249])


def test_patch_cnn_shapes():
    model = PatchCnn(patch_cnn_network(0))
    assert model.network.params["fc1.weight"].shape == (128, 16 * 19 * 19)
    logits = model.logits(np.zeros((3, 1, 25, 25)))
    assert logits.shape == (3, 2)
    with pytest.raises(ModelShapeError):
        model.logits(np.zeros((1, 1, 24, 25)))


def test_patch_cnn_predict():
    model = PatchCnn(patch_cnn_network(1))
    rng = np.random.default_rng(0)
    values = rng.uniform(0, 1, (25, 25))
    p = patch_cnn_predict(model, values)
    assert 0 <= p <= 1
    assert patch_cnn_predict(model, Patch(values, 0, 0, 100.0)) == p
    probs = np.array([1 - p, p])
    np.testing.assert_allclose(probs.sum(), 1.0)
    # all-zero patch: the output depends on the biases only
    zero = patch_cnn_predict(model, np.zeros((25, 25)))
    assert zero == pytest.approx(0.5)
    with pytest.raises(ValueError):
        patch_cnn_predict(model, np.full((25, 25), np.nan))


def _blob(rng, centred):
    yy, xx = np.mgrid[:25, :25]
    cy, cx = (12, 12) if centred else rng.choice([3, 21], 2)
    img = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 6.0)
    return img + rng.uniform(0, 0.1, (25, 25))


def test_patch_cnn_learns_separable_task():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, 300)
    x = np.stack([_blob(rng, bool(l)) for l in labels])[:, None]
    model, report = train_supervised(PatchCnn(patch_cnn_network(0)), x, labels,
                                     TrainConfig(epochs=4, batch_size=32, seed=0))
    assert report.losses[-1] < report.losses[0]
    test_labels = rng.integers(0, 2, 100)
    xt = np.stack([_blob(rng, bool(l)) for l in test_labels])[:, None]
    acc = np.mean((model.probabilities(xt) > 0.5) == test_labels)
    assert acc >= 0.95


def test_patchcnn_silence_unvoiced():
    clip = AudioClip(np.zeros(8000), 8000)
    contour = extract_melody_patchcnn(clip, PatchCnn(patch_cnn_network(0), decision_threshold=0.0))
    assert np.all(contour.f0 == 0)
    assert len(contour) == StftConfig().num_frames(8000)
    assert contour.start_seconds == pytest.approx(0.064)


def test_context_windows_replicate_edges():
    spec = np.arange(5 * 40, dtype=float).reshape(5, 40)
    w = context_windows(spec)
    assert w.shape == (40, 1, CONTEXT_FRAMES, 5)
    np.testing.assert_array_equal(w[20, 0, 15], spec[:, 20])
    np.testing.assert_array_equal(w[0, 0, 0], spec[:, 0])
    np.testing.assert_array_equal(w[39, 0, -1], spec[:, 39])


def test_frame_classifier_predict():
    model = FrameClassifier(seed=0)
    window = np.random.default_rng(0).uniform(0, 1, (CONTEXT_FRAMES, 513))
    out = frame_classifier_predict(model, window)
    assert out.shape == (442,)
    assert np.all(np.isfinite(out))
    # stateless: same input, same output
    np.testing.assert_array_equal(out, frame_classifier_predict(model, window))
    with pytest.raises(ModelShapeError):
        frame_classifier_predict(model, window[:30])
    with pytest.raises(ModelShapeError):
        model.logits(np.zeros((1, 1, CONTEXT_FRAMES, 512)))


def test_frame_classifier_learns_three_tones_and_silence():
    rng = np.random.default_rng(0)
    pairs = [steady_tone_clip(rng, f, duration=0.6) for f in (130.81, 261.63, 392.0, 0.0)]
    clips, truths = [p[0] for p in pairs], [p[1] for p in pairs]
    x, y = frame_dataset(clips, truths)
    model, _ = train_supervised(FrameClassifier(seed=0), x, y,
                                TrainConfig(epochs=15, batch_size=16, learning_rate=1e-3, seed=0))
    pred = np.argmax(model.logits(x), axis=1)
    assert np.mean(pred == y) >= 0.95
    contour = extract_melody_frame_classifier(clips[3], model)
    assert np.mean(contour.f0 == 0) >= 0.95


def test_dense_classifier():
    m = DenseClassifier((5, 7, 3), seed=1)
    assert m.network.params.count() == 5 * 7 + 7 + 7 * 3 + 3
    assert m.probabilities(np.zeros(5)).shape == (1, 3)
    with pytest.raises(ModelShapeError):
        m.logits(np.zeros((2, 4)))


@pytest.mark.parametrize("make", [lambda: PatchCnn(patch_cnn_network(2), 0.3),
                                  lambda: FrameClassifier(num_bins=64, hidden=16, seed=2),
                                  lambda: DenseClassifier((4, 6, 3), seed=2)])
def test_save_load_round_trip(tmp_path, make):
    model = make()
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    loaded = load_model(path)
    assert type(loaded) is type(model)
    assert loaded.kind == model.kind
    for k, p in model.network.params.items():
        np.testing.assert_array_equal(loaded.network.params[k].value, p.value)
    if isinstance(model, PatchCnn):
        assert loaded.decision_threshold == 0.3


def test_load_rejects_unknown_kind(tmp_path):
    from cfpmelody.neural import save_checkpoint
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, DenseClassifier().network.params, {"kind": "rnn"})
    with pytest.raises(CheckpointError):
        load_model(path)
    save_checkpoint(path, DenseClassifier((3, 3)).network.params, {"kind": "dense_classifier", "sizes": [8, 8, 4]})
    with pytest.raises(CheckpointError):
        load_model(path)
