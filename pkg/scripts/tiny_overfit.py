"""Overfit a small model on one synthetic 2-exposure clip and report PSNR_T.

    python scripts/tiny_overfit.py --steps 2000 --size 64 --out runs/overfit.json

The clip has six frames so that windows exist at both t-1 and t and the
temporal loss term is active. The perceptual term is off (no VGG weights are
shipped); pass ``--vgg PATH`` to enable it.
"""
from __future__ import annotations

import argparse
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from lanhdr.config import ModelConfig, RunConfig
from lanhdr.datapipe import make_window, moving_scene, synthesize_sequence
from lanhdr.engine import Trainer
from lanhdr.metrics import psnr_t
from lanhdr.radiometry import reexpose

TINY_MODEL = dict(kq_channels=16, value_channels=16, extractor_layers=2, hal_channels=8, feat_channels=16,
                  lan_out_channels=8, merge_channels=16, fft_blocks=2)


@dataclass
class OverfitResult:
    steps: int
    seconds: float
    psnr_t: dict[int, float]
    losses: list[float] = field(repr=False)
    bin_means: list[float] = field(default_factory=list)
    blend_clean: float = math.nan
    blend_saturated: float = math.nan
    supervised_t: int = 3

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.bin_means, self.bin_means[1:]))

    @property
    def train_psnr_t(self) -> float:
        """PSNR_T of the frame the reconstruction terms supervise; t-1 only sees the temporal term."""
        return self.psnr_t[self.supervised_t]

    def to_dict(self) -> dict:
        return {"steps": self.steps, "seconds": self.seconds, "psnr_t": self.psnr_t,
                "train_psnr_t": self.train_psnr_t, "monotone": self.monotone, "bin_means": self.bin_means,
                "blend_clean": self.blend_clean, "blend_saturated": self.blend_saturated}


def make_config(size: int, steps: int, seed: int, ckpt_dir: str, vgg: str | None = None) -> RunConfig:
    cfg = RunConfig(model=ModelConfig(**TINY_MODEL))
    cfg.loss.lambda_per = 0.1 if vgg else 0.0
    cfg.loss.vgg_weights = vgg
    cfg.data.crop_size = size
    cfg.data.augment = False
    cfg.train.batch_size = 1
    cfg.train.max_steps = steps
    cfg.train.seed = seed
    cfg.train.ckpt_dir = ckpt_dir
    cfg.train.ckpt_every = max(steps, 1)
    return cfg.validate()


def blend_probe(model, seq, t: int) -> tuple[float, float]:
    """Mean blend map for neighbour == reference versus a saturated neighbour of the same reference."""
    win = make_window(seq, t, with_ground_truth=False)
    ref = win.frames[win.reference_index]
    e = torch.tensor([ref.exposure])
    ldr = ref.pixels[None]
    lin = ldr ** model.cfg.gamma / e
    sat_e = e * 16
    sat = reexpose(ldr, 16.0, model.cfg.gamma)
    sat_lin = sat ** model.cfg.gamma / sat_e
    model.eval()
    with torch.no_grad():
        clean = model.lan(ldr, lin, e, ldr, lin, e).blend_map.mean().item()
        saturated = model.lan(sat, sat_lin, sat_e, ldr, lin, e).blend_map.mean().item()
    return clean, saturated


def run(steps: int = 2000, size: int = 64, seed: int = 0, ckpt_dir: str = "runs/overfit_ckpt",
        vgg: str | None = None, bin_size: int = 100, log_every: int = 0) -> OverfitResult:
    clean = moving_scene(6, (size, size), velocity=(0, 2), seed=seed)
    seq = synthesize_sequence(clean, 2, stops=2.0)
    cfg = make_config(size, steps, seed, ckpt_dir, vgg)
    trainer = Trainer(cfg, [seq])
    losses = []
    t0 = time.time()
    while trainer.step < steps:
        rec = trainer.train_step()
        losses.append(rec.loss)
        if log_every and rec.step % log_every == 0:
            print(f"step {rec.step:5d} loss {rec.loss:.5f} ({time.time() - t0:.0f}s)", flush=True)
    seconds = time.time() - t0
    trainer.checkpoint()

    model = trainer.model.eval()
    scores = {}
    with torch.no_grad():
        for t in (2, 3):
            win = make_window(seq, t)
            pred = model(win.ldr[None], win.exposures[None]).hdr[0]
            scores[t] = psnr_t(pred, win.ground_truth)
    bins = [float(np.mean(losses[i:i + bin_size])) for i in range(0, len(losses) - bin_size + 1, bin_size)]
    blend_clean, blend_sat = blend_probe(model, seq, 3)
    return OverfitResult(steps, seconds, scores, losses, bins, blend_clean, blend_sat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--vgg", help="local VGG-19 state dict to enable the perceptual term")
    ap.add_argument("--ckpt-dir", default="runs/overfit_ckpt")
    ap.add_argument("--out", default="runs/overfit.json")
    ap.add_argument("--log-every", type=int, default=100)
    args = ap.parse_args()
    res = run(args.steps, args.size, args.seed, args.ckpt_dir, args.vgg, log_every=args.log_every)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(res.to_dict(), indent=2))
    print(json.dumps(res.to_dict(), indent=2))


if __name__ == "__main__":
    main()
