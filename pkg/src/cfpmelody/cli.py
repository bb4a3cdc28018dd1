"""Batch command line: ``extract``, ``train``, ``evaluate`` and ``cfp-dump``.

Exit codes: 0 success, 2 bad arguments or configuration, 3 file I/O or
parse failure, 4 model or shape errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .audio_io import (
    LabelFormatError,
    UnsupportedEncodingError,
    WavFormatError,
    load_contour_csv,
    load_manifest,
    load_pitch_labels,
    prepare_clip,
    write_contour_csv,
)
from .cfp import cfp_representation, write_cfp_csv
from .config import ConfigError, RunConfig, load_run_config
from .dsp import autocorr_pitch
from .evaluation import NoVoicedFramesError, evaluate, format_summary, write_report_csv
from .models import (
    FrameClassifier,
    ModelShapeError,
    PatchCnn,
    extract_melody_frame_classifier,
    extract_melody_patchcnn,
    load_model,
    patch_cnn_network,
    save_model,
)
from .neural import CheckpointError
from .training import (
    clip_patches,
    frame_dataset,
    generate_pseudo_labels,
    patch_dataset,
    train_student,
    train_supervised,
)

log = logging.getLogger("cfpmelody")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MODEL = 0, 2, 3, 4

METHODS = ("sp", "patch_cnn", "frame_classifier")


class UsageError(Exception):
    pass


def _load_checkpoint(path, method):
    model = load_model(path)
    if model.kind != method:
        raise CheckpointError(f"checkpoint holds a {model.kind} model, not {method}")
    return model


def _extract(clip, method, model, cfg: RunConfig):
    if method == "sp":
        return autocorr_pitch(clip, cfg.stft, cfg.sp.f_min, cfg.sp.f_max, cfg.sp.voicing_threshold)
    if method == "patch_cnn":
        return extract_melody_patchcnn(clip, model, cfg.stft, cfg.cfp)
    return extract_melody_frame_classifier(clip, model, cfg.stft)


def _need_checkpoint(args):
    if args.method != "sp" and not getattr(args, "checkpoint", None):
        raise UsageError(f"--method {args.method} requires --checkpoint")


def _truth(entry, cfg: RunConfig):
    if entry.label_path is None:
        raise UsageError(f"{entry.audio_path}: no label file in manifest")
    lc = cfg.labels
    return load_pitch_labels(entry.label_path, lc.format, lc.hop_seconds, lc.start_seconds)


def cmd_extract(args, cfg: RunConfig) -> int:
    _need_checkpoint(args)
    clip = prepare_clip(args.audio)
    model = None if args.method == "sp" else _load_checkpoint(args.checkpoint, args.method)
    write_contour_csv(_extract(clip, args.method, model, cfg), args.out_csv)
    return EXIT_OK


def _new_model(kind, cfg: RunConfig, seed):
    if kind == "patch_cnn":
        return PatchCnn(patch_cnn_network(seed), cfg.patch.decision_threshold)
    fm = cfg.frame_model
    return FrameClassifier(cfg.stft.fft_size // 2 + 1, cfg.quantizer, fm.channels, fm.kernel_width,
                           fm.hidden, seed)


def cmd_train(args, cfg: RunConfig) -> int:
    manifest = load_manifest(args.manifest)
    seed = cfg.train.seed
    if args.mode == "teacher":
        entries = manifest.split("labeled")
        if not entries:
            raise UsageError("manifest has no 'labeled' entries to train a teacher on")
        clips = [prepare_clip(e.audio_path) for e in entries]
        truths = [_truth(e, cfg) for e in entries]
        model = _new_model(args.model, cfg, seed)
        if args.model == "patch_cnn":
            x, y = patch_dataset(clips, truths, cfg.stft, cfg.cfp, tolerance_cents=cfg.patch.tolerance_cents,
                                 nonvocal_rate=cfg.patch.nonvocal_rate, seed=seed)
        else:
            x, y = frame_dataset(clips, truths, cfg.stft, cfg.quantizer)
        if len(x) == 0:
            raise UsageError("labeled split yields no training examples")
        model, report = train_supervised(model, x, y, cfg.train)
    else:
        if not args.teacher:
            raise UsageError("--mode student requires --teacher CHECKPOINT")
        entries = manifest.split("unlabeled")
        if not entries:
            raise UsageError("manifest has no 'unlabeled' entries to train a student on")
        teacher = _load_checkpoint(args.teacher, args.model)
        clips = [prepare_clip(e.audio_path) for e in entries]
        have_truth = all(e.label_path is not None for e in entries)
        truths = [_truth(e, cfg) for e in entries] if have_truth else None
        y_t = None
        if args.model == "patch_cnn":
            if have_truth:
                x, y_t = patch_dataset(clips, truths, cfg.stft, cfg.cfp,
                                       tolerance_cents=cfg.patch.tolerance_cents, nonvocal_rate=1.0)
            else:
                x = clip_patches(clips, cfg.stft, cfg.cfp)
        else:
            x, y_t = frame_dataset(clips, truths, cfg.stft, cfg.quantizer)
        if len(x) == 0:
            raise UsageError("unlabeled split yields no training examples")
        pseudo = generate_pseudo_labels(teacher, x)
        log.info("pseudo labels from teacher %s", pseudo.source)
        model = _new_model(args.model, cfg, seed)
        model, report = train_student(model, x, pseudo, y_t, cfg.train,
                                      min_confidence=cfg.student.min_confidence,
                                      true_label_target=cfg.student.true_label_target)
    save_model(model, args.out_checkpoint)
    report.write(args.log or f"{args.out_checkpoint}.log")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if args.method == "precomputed":
        if not args.estimates_dir:
            raise UsageError("--method precomputed requires --estimates-dir")
    else:
        _need_checkpoint(args)
    manifest = load_manifest(args.manifest)
    entries = manifest.split("eval")
    if not entries:
        raise UsageError("manifest has no 'eval' entries")
    model = None
    if args.method not in ("sp", "precomputed"):
        model = _load_checkpoint(args.checkpoint, args.method)

    rows = []
    for entry in entries:
        truth = _truth(entry, cfg)
        clip_id = Path(entry.audio_path).stem
        if args.method == "precomputed":
            est = load_contour_csv(Path(args.estimates_dir) / f"{clip_id}.csv")
        else:
            est = _extract(prepare_clip(entry.audio_path), args.method, model, cfg)
        try:
            rows.append((clip_id, evaluate(est, truth, cfg.eval.tolerance_cents)))
        except NoVoicedFramesError as exc:
            raise UsageError(f"{entry.label_path}: {exc}") from None
    rpa, rca = write_report_csv(rows, args.report_csv)
    print(format_summary(rpa, rca))
    return EXIT_OK


def cmd_cfp_dump(args, cfg: RunConfig) -> int:
    clip = prepare_clip(args.audio)
    write_cfp_csv(cfp_representation(clip, cfg.stft, cfg.cfp), args.out_csv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="training seed")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="cfpmelody", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="write the melody contour of one file")
    p.add_argument("audio")
    p.add_argument("out_csv")
    p.add_argument("--method", choices=METHODS, default="sp")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train a teacher or student model")
    p.add_argument("manifest")
    p.add_argument("out_checkpoint")
    p.add_argument("--model", choices=("patch_cnn", "frame_classifier"), default="patch_cnn")
    p.add_argument("--mode", choices=("teacher", "student"), default="teacher")
    p.add_argument("--teacher", help="teacher checkpoint (student mode)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--log", help="training log path (default: OUT_CHECKPOINT.log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="RPA/RCA over a manifest's eval split")
    p.add_argument("manifest")
    p.add_argument("report_csv")
    p.add_argument("--method", choices=METHODS + ("precomputed",), default="sp")
    p.add_argument("--checkpoint")
    p.add_argument("--estimates-dir", help="directory of <clip_id>.csv contours (precomputed)")
    p.add_argument("--tolerance", type=float, help="pitch tolerance in cents")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cfp-dump", parents=[common], help="write the CFP map of one file as CSV")
    p.add_argument("audio")
    p.add_argument("out_csv")
    p.set_defaults(func=cmd_cfp_dump)
    return parser


def _overrides(args) -> dict:
    out: dict = {}
    train = {}
    if getattr(args, "seed", None) is not None:
        train["seed"] = args.seed
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "learning_rate")):
        val = getattr(args, flag, None)
        if val is not None:
            train[key] = val
    if train:
        out["train"] = train
    if getattr(args, "tolerance", None) is not None:
        out["eval"] = {"tolerance_cents": args.tolerance}
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(getattr(args, "config", None), _overrides(args))
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"cfpmelody: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, ModelShapeError) as exc:
        print(f"cfpmelody: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, WavFormatError, UnsupportedEncodingError, LabelFormatError) as exc:
        print(f"cfpmelody: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # audio too short for one window, bad sample rates and similar input problems
        print(f"cfpmelody: invalid input: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
