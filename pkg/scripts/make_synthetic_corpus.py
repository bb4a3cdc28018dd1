"""Write a seeded synthetic vocal corpus (WAV + Hz labels + manifest.tsv).

Example:
    python scripts/make_synthetic_corpus.py out/corpus --labeled 200 --unlabeled 200 --eval 50
"""

import argparse

from cfpmelody.synth import VocalSpec, vocal_corpus, write_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--labeled", type=int, default=200)
    ap.add_argument("--unlabeled", type=int, default=200)
    ap.add_argument("--eval", type=int, default=50)
    ap.add_argument("--duration", type=float, default=1.5)
    ap.add_argument("--noise-db", type=float, default=-20.0)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    spec = VocalSpec(duration=args.duration, noise_db=args.noise_db)
    clips, truths, tags = [], [], []
    # one generator seed per split keeps the splits disjoint
    for offset, (tag, n) in enumerate((("labeled", args.labeled), ("unlabeled", args.unlabeled),
                                       ("eval", args.eval))):
        if n:
            c, t = vocal_corpus(n, args.seed + offset, spec)
            clips += c
            truths += t
            tags += [tag] * n
    manifest = write_corpus(args.out_dir, clips, truths, tags)
    print(f"wrote {len(clips)} clips, manifest {manifest}")


if __name__ == "__main__":
    main()
