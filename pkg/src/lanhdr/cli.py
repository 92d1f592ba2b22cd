"""Command line: ``lanhdr train | infer | eval | profile``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import engine
from .config import load_config
from .datapipe import load_manifest, load_sequence, read_hdr, write_hdr
from .errors import DataError, InvalidInputError, LanHdrError
from .metrics import MetricReport, frame_metrics, temporal_profile

HDR_SUFFIXES = (".exr", ".hdr")


def _hdr_files(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in HDR_SUFFIXES)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    sequences = engine.sequences_from_manifest(cfg)
    trainer = engine.Trainer(cfg, sequences)
    if args.resume:
        trainer.resume(args.resume)
    for path in trainer.run():
        print(path)
    return 0


def cmd_infer(args) -> int:
    cfg = load_config(args.config, args.set)
    model = engine.build_model(cfg)
    engine.load_checkpoint(args.ckpt, model, cfg)
    records = load_manifest(args.seq)
    if args.sequence_id:
        records = [r for r in records if r.id == args.sequence_id]
        if not records:
            raise DataError(f"no sequence {args.sequence_id!r} in {args.seq}")
    out = Path(args.out)
    for rec in records:
        if len(rec.pattern) != cfg.model.exposures:
            raise DataError(f"sequence {rec.id} alternates {len(rec.pattern)} exposures, "
                            f"model expects {cfg.model.exposures}")
        seq = load_sequence(rec, with_ground_truth=False)
        for t, hdr in engine.infer_sequence(model, seq, cfg.infer.tile, cfg.infer.tile_overlap):
            path = out / rec.id / f"{t:05d}.exr"
            write_hdr(hdr, path)
            print(path)
    return 0


def cmd_eval(args) -> int:
    preds, gts = _hdr_files(args.pred), _hdr_files(args.gt)
    if not preds or not gts:
        raise InvalidInputError(f"no HDR frames found in {args.pred if not preds else args.gt}")
    if len(preds) != len(gts):
        raise DataError(f"{len(preds)} predicted frames but {len(gts)} ground-truth frames")
    report = MetricReport([frame_metrics(p.name, read_hdr(p), read_hdr(g).clamp(0, 1))
                           for p, g in zip(preds, gts)])
    report.write(args.out)
    print(report.summary())
    return 0


def cmd_profile(args) -> int:
    import cv2

    frames = [read_hdr(p) for p in _hdr_files(args.frames)]
    profile = temporal_profile(frames, args.row)
    img = np.round(np.clip(profile, 0, 1) * 255).astype(np.uint8)[..., ::-1]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(args.out), img):
        raise DataError(f"cannot write {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanhdr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. --set train.lr=2e-4")

    p = sub.add_parser("train", help="train from a dataset manifest")
    with_config(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="reconstruct HDR frames for every full window")
    with_config(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seq", required=True, help="manifest listing the sequence(s)")
    p.add_argument("--sequence-id", help="only process this sequence id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM report for predicted vs ground-truth HDR frames")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="temporal profile image of one pixel row")
    p.add_argument("--frames", required=True)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except LanHdrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
