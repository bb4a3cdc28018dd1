"""Train the patch CNN on a synthetic vocal corpus and report held-out RPA/RCA.

Example:
    python scripts/patch_cnn_experiment.py --train 200 --test 50 --epochs 5 --save out/cnn.ckpt
"""

import argparse
import time

from cfpmelody.evaluation import evaluate, format_summary, mean_report
from cfpmelody.models import PatchCnn, extract_melody_patchcnn, patch_cnn_network, save_model
from cfpmelody.synth import vocal_corpus
from cfpmelody.training import TrainConfig, patch_dataset, train_supervised


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train", type=int, default=200)
    ap.add_argument("--test", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--nonvocal-rate", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save")
    args = ap.parse_args()

    start = time.perf_counter()
    clips, truths = vocal_corpus(args.train, seed=1)
    x, y = patch_dataset(clips, truths, nonvocal_rate=args.nonvocal_rate, seed=args.seed)
    print(f"{len(x)} patches ({int(y.sum())} vocal)")
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed)
    model, report = train_supervised(PatchCnn(patch_cnn_network(args.seed)), x, y, cfg)
    for e in report.epochs:
        print(f"epoch {e.epoch}: loss {e.loss:.4f}")
    if args.save:
        save_model(model, args.save)

    test_clips, test_truths = vocal_corpus(args.test, seed=2)
    reports = [evaluate(extract_melody_patchcnn(c, model), t) for c, t in zip(test_clips, test_truths)]
    print(format_summary(*mean_report(reports)), f"({time.perf_counter() - start:.0f}s)")


if __name__ == "__main__":
    main()
