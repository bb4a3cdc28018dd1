"""Teacher-student run on synthetic vocals with disjoint labeled/unlabeled sets.

Trains a patch-CNN teacher on the labeled clips, pseudo-labels every frame
patch of the unlabeled clips, trains a fresh student on them and reports
teacher/student agreement plus both models' held-out RPA/RCA.
"""

import argparse

from cfpmelody.evaluation import evaluate, format_summary, mean_report
from cfpmelody.models import PatchCnn, extract_melody_patchcnn, patch_cnn_network
from cfpmelody.synth import vocal_corpus
from cfpmelody.training import (
    TrainConfig,
    agreement,
    clip_patches,
    generate_pseudo_labels,
    patch_dataset,
    train_student,
    train_supervised,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--labeled", type=int, default=60)
    ap.add_argument("--unlabeled", type=int, default=60)
    ap.add_argument("--test", type=int, default=30)
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--min-confidence", type=float, default=0.0)
    args = ap.parse_args()

    cfg = TrainConfig(epochs=args.epochs, batch_size=64)
    x_d, y_d = patch_dataset(*vocal_corpus(args.labeled, seed=11), nonvocal_rate=0.1)
    teacher, _ = train_supervised(PatchCnn(patch_cnn_network(0)), x_d, y_d, cfg)

    u_clips, u_truths = vocal_corpus(args.unlabeled, seed=12)
    x_u, y_t = patch_dataset(u_clips, u_truths, nonvocal_rate=1.0)
    pseudo = generate_pseudo_labels(teacher, x_u)
    print(f"{len(x_u)} unlabeled patches, pseudo labels agree with truth on {100 * (pseudo.labels == y_t).mean():.1f}%")
    student, report = train_student(PatchCnn(patch_cnn_network(1)), x_u, pseudo, y_t, cfg,
                                    min_confidence=args.min_confidence)
    for e in report.epochs:
        print(f"epoch {e.epoch}: L_b {e.loss:.4f} (H1 {e.h1:.4f}, H2 {e.h2:.4f})")

    test_clips, test_truths = vocal_corpus(args.test, seed=13)
    print(f"agreement on held-out patches: {100 * agreement(student, teacher, clip_patches(test_clips)):.1f}%")
    for name, model in (("teacher", teacher), ("student", student)):
        reports = [evaluate(extract_melody_patchcnn(c, model), t) for c, t in zip(test_clips, test_truths)]
        print(name, format_summary(*mean_report(reports)))


if __name__ == "__main__":
    main()
