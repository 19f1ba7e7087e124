"""Command-line entry point: synth, prepare, augment, train, predict, eval."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import data
from .augment import expand_dataset
from .config import PipelineConfig, load_config
from .evaluation import (HIGHER_IS_MATCH, LOWER_IS_MATCH, ScoreSet, gar_at_far, load_scores,
                         nice1_error, roc_points, write_report)
from .infer import (confidence_bands, export_bands, export_mask, export_overlay, postprocess,
                    predict_confidence, predict_mask, render_overlay)
from .model import build_model, load_checkpoint
from .train import run_training

log = logging.getLogger("segdense")


class CLIError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=None, help="pipeline config (INI); falls back to $SEGDENSE_CONFIG")
    p.add_argument("--seed", type=int, default=None, help="overrides run.seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="segdense", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate synthetic eye images and masks")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--phase", choices=data.PHASES + ("mixed",), default="mixed")
    p.add_argument("--no-occlusion", action="store_true")
    p.add_argument("--no-specular", action="store_true")

    p = sub.add_parser("prepare", parents=[common], help="subject-disjoint train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-fraction", type=float, default=None)

    p = sub.add_parser("augment", parents=[common], help="resize to model size and materialise the x10 set")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("train", parents=[common], help="pretrain or finetune a model")
    p.add_argument("--phase", choices=("pretrain", "finetune"), required=True)
    p.add_argument("--manifest", required=True, help="training manifest (masks required)")
    p.add_argument("--init-checkpoint", default=None)
    p.add_argument("--epochs", type=int, default=None, help="overrides train.<phase>.epochs")

    p = sub.add_parser("predict", parents=[common], help="segment images with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="PNG file, directory of PNGs, or manifest")
    p.add_argument("--postprocess", action="store_true")
    p.add_argument("--overlay", action="store_true", help="also write colour overlays with confidence bands")

    p = sub.add_parser("eval", help="score segmentations or verification scores")
    esub = p.add_subparsers(dest="eval_command", required=True, metavar="KIND")
    q = esub.add_parser("seg", parents=[common], help="NICE-I error between two mask directories")
    q.add_argument("--pred", required=True)
    q.add_argument("--gt", required=True)
    q = esub.add_parser("roc", parents=[common], help="GAR at fixed FAR and ROC points")
    q.add_argument("--genuine", required=True)
    q.add_argument("--impostor", required=True)
    q.add_argument("--far", type=float, default=0.001)
    q.add_argument("--polarity", choices=(HIGHER_IS_MATCH, LOWER_IS_MATCH), default=HIGHER_IS_MATCH)
    return parser


def _out_dir(args, cfg: PipelineConfig) -> Path:
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _relative_to(path: Path, base: Path) -> str:
    return Path(os.path.relpath(path.resolve(), base.resolve())).as_posix()


def cmd_synth(args, cfg: PipelineConfig) -> None:
    if args.count < 0:
        raise CLIError("--count must be non-negative")
    out = _out_dir(args, cfg)
    params = data.SynthConfig(occlusion=not args.no_occlusion, specular=not args.no_specular)
    phases = data.PHASES if args.phase == "mixed" else (args.phase,)
    samples = data.synthesize_dataset(args.count, seed=cfg.seed, params=params, phases=phases)
    path = data.write_samples(samples, out)
    print(f"wrote {len(samples)} samples and {path}")


def cmd_prepare(args, cfg: PipelineConfig) -> None:
    out = _out_dir(args, cfg)
    src = Path(args.manifest)
    entries = data.load_manifest(src)
    frac = args.train_fraction if args.train_fraction is not None else cfg.train_fraction
    train, test = data.split_by_subject(entries, frac, cfg.seed)

    def rebase(e):
        mask = None if e.mask_path is None else _relative_to(data.resolve(e.mask_path, src), out)
        return replace(e, image_path=_relative_to(data.resolve(e.image_path, src), out), mask_path=mask)

    data.write_manifest([rebase(e) for e in train], out / "train.tsv")
    data.write_manifest([rebase(e) for e in test], out / "test.tsv")
    n_tr = len({e.subject_id for e in train})
    n_te = len({e.subject_id for e in test})
    print(f"train: {len(train)} images / {n_tr} subjects; test: {len(test)} images / {n_te} subjects")


def cmd_augment(args, cfg: PipelineConfig) -> None:
    out = _out_dir(args, cfg)
    samples = [data.to_model_resolution(s) for s in data.load_samples(args.manifest)]
    expanded = expand_dataset(samples, cfg.augment)
    path = data.write_samples(expanded, out)
    print(f"wrote {len(expanded)} augmented samples and {path}")


def cmd_train(args, cfg: PipelineConfig) -> None:
    if args.phase == "finetune" and args.init_checkpoint is None:
        raise CLIError("--init-checkpoint is required for --phase finetune")
    out = _out_dir(args, cfg)
    tcfg = cfg.train_config(args.phase)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    samples = [data.to_model_resolution(s) for s in data.load_samples(args.manifest)]
    if not samples:
        raise CLIError(f"{args.manifest}: no training samples")
    missing = [s.name for s in samples if s.mask is None]
    if missing:
        raise CLIError(f"{args.manifest}: {len(missing)} entries lack masks, e.g. {missing[0]}")
    model = build_model(cfg.backbone, cfg.branches, cfg.fusion_weights, seed=cfg.seed, preprocess=cfg.preprocess)

    def report(stats):
        log.info("epoch %d/%d loss %.6f", stats.epoch + 1, tcfg.epochs, stats.mean_loss)

    final = run_training(model, samples, tcfg, out, init_checkpoint=args.init_checkpoint, callback=report)
    print(f"wrote {final}")


def _inputs(path: Path):
    if path.is_dir():
        for p in sorted(path.glob("*.png")):
            yield p.stem, data.load_image(p)
    elif path.suffix.lower() == ".png":
        yield path.stem, data.load_image(path)
    else:
        for e in data.load_manifest(path):
            yield Path(e.image_path).stem, data.load_image(data.resolve(e.image_path, path))


def cmd_predict(args, cfg: PipelineConfig) -> None:
    out = _out_dir(args, cfg)
    src = Path(args.input)
    if not src.exists():
        raise CLIError(f"input not found: {src}")
    model = load_checkpoint(args.checkpoint)
    th = cfg.thresholds
    n = 0
    for stem, image in _inputs(src):
        conf = predict_confidence(model, image)
        mask = predict_mask(model, image, threshold=th.binarize, confidence=conf)
        if args.postprocess:
            mask = postprocess(mask, th.max_hole_fraction)
        export_mask(mask, out / "masks" / f"{stem}.png")
        if args.overlay:
            bands = confidence_bands(conf, th.band_low, th.band_high)
            export_bands(bands, out / "bands" / f"{stem}.png")
            export_overlay(render_overlay(image, mask, bands), out / "overlays" / f"{stem}.png")
        n += 1
    if n == 0:
        raise CLIError(f"no input images found in {src}")
    print(f"wrote {n} masks to {out / 'masks'}")


def cmd_eval(args, cfg: PipelineConfig) -> None:
    out = _out_dir(args, cfg)
    if args.eval_command == "seg":
        pred_dir, gt_dir = Path(args.pred), Path(args.gt)
        for d in (pred_dir, gt_dir):
            if not d.is_dir():
                raise CLIError(f"not a directory: {d}")
        gt_files = sorted(gt_dir.glob("*.png"))
        if not gt_files:
            raise CLIError(f"no ground-truth masks in {gt_dir}")
        missing = [p.name for p in gt_files if not (pred_dir / p.name).is_file()]
        if missing:
            raise CLIError(f"{len(missing)} predictions missing in {pred_dir}, e.g. {missing[0]}")
        preds = [data.load_mask(pred_dir / p.name) for p in gt_files]
        gts = [data.load_mask(p) for p in gt_files]
        score = nice1_error(preds, gts, ids=[p.stem for p in gt_files])
        path = write_report(score, out / "seg_report.tsv")
        print(f"average NICE-I error {score.average_error:.6f} over {len(gts)} images -> {path}")
    else:
        scores = ScoreSet(load_scores(args.genuine), load_scores(args.impostor), args.polarity)
        gar, thr = gar_at_far(scores, args.far)
        path = write_report(None, out / "roc_report.tsv", roc=roc_points(scores), gar=(args.far, gar, thr))
        print(f"GAR {gar:.6f} at FAR {args.far:g} (threshold {thr:.10g}) -> {path}")


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "augment": cmd_augment,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        COMMANDS[args.command](args, cfg)
    except (CLIError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"segdense {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
