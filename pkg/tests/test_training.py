import math

import numpy as np
import pytest

from cfpmelody.models import DenseClassifier, PatchCnn, patch_cnn_network
from cfpmelody.neural import numerical_gradient
from cfpmelody.synth import vocal_corpus, VocalSpec
from cfpmelody.training import (
    LossReport,
    EpochLoss,
    PseudoLabelSet,
    TrainConfig,
    agreement,
    clip_patches,
    frame_dataset,
    generate_pseudo_labels,
    parameter_digest,
    patch_dataset,
    pseudo_label_entropy,
    teacher_student_loss,
    train_student,
    train_supervised,
)

MISMATCH = 16.11809565095832  # -ln(1e-7)


def blobs(seed, n=200, dim=8, k=4):
    rng = np.random.default_rng(seed)
    centres = np.random.default_rng(99).normal(0, 3, (k, dim))
    y = rng.integers(0, k, n)
    return centres[y] + rng.normal(0, 0.5, (n, dim)), y


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_memorizes_small_set():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 8))
    y = rng.integers(0, 4, 20)
    model, report = train_supervised(DenseClassifier((8, 32, 4), seed=0), x, y,
                                     TrainConfig(epochs=300, batch_size=20, learning_rate=1e-2))
    assert np.all(np.argmax(model.logits(x), axis=1) == y)
    assert report.losses[-1] < 0.05


def test_loss_decreases():
    x, y = blobs(0)
    _, report = train_supervised(DenseClassifier(seed=0), x, y, TrainConfig(epochs=10))
    assert report.losses[-1] < report.losses[0]
    assert len(report.epochs) == 10


def test_training_deterministic():
    x, y = blobs(1)
    a, ra = train_supervised(DenseClassifier(seed=3), x, y, TrainConfig(epochs=3, seed=7))
    b, rb = train_supervised(DenseClassifier(seed=3), x, y, TrainConfig(epochs=3, seed=7))
    c, _ = train_supervised(DenseClassifier(seed=3), x, y, TrainConfig(epochs=3, seed=8))
    assert parameter_digest(a) == parameter_digest(b)
    assert ra.losses == rb.losses
    assert parameter_digest(a) != parameter_digest(c)


def test_label_validation():
    x, _ = blobs(0, n=4)
    with pytest.raises(ValueError):
        train_supervised(DenseClassifier(), x, np.array([0, 1, 2, 4]))
    with pytest.raises(ValueError):
        train_supervised(DenseClassifier(), x, np.array([0.0, 1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        train_supervised(DenseClassifier(), x, np.array([0, 1, 2]))


def test_pseudo_labels_tie_to_lower_class():
    model = DenseClassifier((3, 4), seed=0)
    for p in model.network.params.values():
        p.value[:] = 0.0
    pseudo = generate_pseudo_labels(model, np.ones((5, 3)))
    np.testing.assert_array_equal(pseudo.labels, 0)
    np.testing.assert_allclose(pseudo.confidence, 0.25)
    assert pseudo.source == parameter_digest(model)


def test_pseudo_labels_binary_head():
    model = PatchCnn(patch_cnn_network(0))
    x = np.random.default_rng(0).uniform(0, 1, (6, 1, 25, 25))
    pseudo = generate_pseudo_labels(model, x)
    p1 = model.probabilities(x)
    np.testing.assert_array_equal(pseudo.labels, (p1 > 0.5).astype(int))
    np.testing.assert_allclose(pseudo.confidence, np.maximum(p1, 1 - p1))


def test_pseudo_label_set_validation():
    with pytest.raises(ValueError):
        PseudoLabelSet(np.array([0, 1]), np.array([0.5]), "x")
    with pytest.raises(ValueError):
        PseudoLabelSet(np.array([0]), np.array([0.0]), "x")


def test_pseudo_label_entropy_values():
    np.testing.assert_allclose(pseudo_label_entropy([1, 2, 3], [1, 0, 3]), [0.0, MISMATCH, 0.0])
    assert MISMATCH == pytest.approx(-math.log(1e-7))


def test_loss_decomposition():
    x, y_t = blobs(2, n=10)
    student = DenseClassifier(seed=1)
    y_u = y_t.copy()
    y_u[:3] = (y_u[:3] + 1) % 4
    lb, h1, h2 = teacher_student_loss(student, x, y_u, y_t)
    assert h2 == pytest.approx(3 * MISMATCH / 10)
    assert lb == pytest.approx(h1 + h2)
    logp = np.log(student.probabilities(x))
    assert h1 == pytest.approx(-np.mean(logp[np.arange(10), y_u]))
    # no true labels: L_b is H1 alone
    assert teacher_student_loss(student, x, y_u) == (h1, h1, None)
    # agreeing labels: the second term vanishes
    assert teacher_student_loss(student, x, y_t, y_t)[2] == 0.0


def test_second_term_has_zero_gradient():
    x, y_t = blobs(3, n=12)
    student = DenseClassifier((8, 8, 4), seed=0)
    assert 90 <= student.network.params.count() <= 120
    y_u = (y_t + np.arange(12) % 2) % 4
    for name, p in student.network.params.items():
        for i in range(p.value.size):
            idx = np.unravel_index(i, p.shape)
            g = numerical_gradient(lambda: teacher_student_loss(student, x, y_u, y_t)[2], p.value, idx)
            assert g == 0.0, (name, idx)


def test_true_labels_do_not_change_training():
    x, y_t = blobs(4)
    teacher, _ = train_supervised(DenseClassifier(seed=0), x, y_t, TrainConfig(epochs=2))
    pseudo = generate_pseudo_labels(teacher, x)
    cfg = TrainConfig(epochs=3, seed=5)
    a, ra = train_student(DenseClassifier(seed=9), x, pseudo, None, cfg)
    b, rb = train_student(DenseClassifier(seed=9), x, pseudo, y_t, cfg)
    assert parameter_digest(a) == parameter_digest(b)
    assert [e.h1 for e in ra.epochs] == [e.h1 for e in rb.epochs]
    assert all(e.h2 is None for e in ra.epochs)
    assert all(e.h2 is not None for e in rb.epochs)


def test_true_label_target_changes_training():
    x, y_t = blobs(4)
    teacher, _ = train_supervised(DenseClassifier(seed=0), x, y_t, TrainConfig(epochs=1))
    pseudo = generate_pseudo_labels(teacher, x)
    cfg = TrainConfig(epochs=2)
    a, _ = train_student(DenseClassifier(seed=9), x, pseudo, y_t, cfg)
    b, _ = train_student(DenseClassifier(seed=9), x, pseudo, y_t, cfg, true_label_target=True)
    assert parameter_digest(a) != parameter_digest(b)
    with pytest.raises(ValueError):
        train_student(DenseClassifier(seed=9), x, pseudo, None, cfg, true_label_target=True)


def test_min_confidence_filter():
    x, y = blobs(5, n=6)
    pseudo = PseudoLabelSet(y, np.array([0.9, 0.2, 0.9, 0.2, 0.9, 0.9]), "t")
    _, report = train_student(DenseClassifier(), x, pseudo, None, TrainConfig(epochs=1), min_confidence=0.5)
    assert len(report.epochs) == 1
    with pytest.raises(ValueError):
        train_student(DenseClassifier(), x, pseudo, None, TrainConfig(epochs=1), min_confidence=0.95)
    with pytest.raises(ValueError):
        train_student(DenseClassifier(), x[:5], pseudo)


def test_student_matches_teacher():
    x, y = blobs(6, n=400)
    teacher, _ = train_supervised(DenseClassifier(seed=0), x, y, TrainConfig(epochs=20))
    u, _ = blobs(7, n=400)
    student, _ = train_student(DenseClassifier(seed=1), u, generate_pseudo_labels(teacher, u),
                               cfg=TrainConfig(epochs=20))
    held, _ = blobs(8, n=200)
    assert agreement(student, teacher, held) >= 0.9


def test_loss_report_write(tmp_path):
    report = LossReport([EpochLoss(1, 0.5, 0.5), EpochLoss(2, 1.25, 0.25, 1.0)], batch_size=8)
    path = tmp_path / "log.tsv"
    report.write(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch\tloss\th1\th2"
    assert lines[1] == "1\t0.5\t0.5\tnan"
    assert lines[2] == "2\t1.25\t0.25\t1"


def test_patch_and_frame_datasets():
    spec = VocalSpec(duration=0.8)
    clips, truths = vocal_corpus(2, seed=0, spec=spec)
    x, y = patch_dataset(clips, truths, nonvocal_rate=1.0)
    assert x.shape[1:] == (1, 25, 25)
    assert set(np.unique(y)) <= {0, 1}
    assert len(x) == len(clip_patches(clips))
    x_sub, y_sub = patch_dataset(clips, truths, nonvocal_rate=0.1, seed=0)
    assert np.sum(y_sub == 1) == np.sum(y == 1)
    assert len(x_sub) < len(x)
    fx, fy = frame_dataset(clips, truths)
    assert fx.shape[1:] == (1, 31, 513)
    assert len(fx) == len(fy)
    assert fy.min() >= 0 and fy.max() <= 441
    fx2, none = frame_dataset(clips)
    assert none is None and len(fx2) == len(fx)
