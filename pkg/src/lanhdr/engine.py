"""Training loop, checkpoints and (optionally tiled) inference."""
from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .config import RunConfig, model_hash
from .datapipe import FrameSequence, PairSampler, batch_windows, load_manifest, load_sequence, make_window, NoiseConfig
from .errors import ConfigError, DataError, TrainingDivergenceError
from .fusion_merge import LanHdrNet
from .losses import LossSuite, LossWeights, VGGFeatures
from .radiometry import TonemapParams

log = logging.getLogger(__name__)


def set_determinism(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic)


def build_model(cfg: RunConfig) -> LanHdrNet:
    return LanHdrNet(cfg.model)


def build_losses(cfg: RunConfig) -> LossSuite:
    lc = cfg.loss
    weights = LossWeights(lc.lambda_1, lc.lambda_per, lc.lambda_freq, lc.lambda_temp, lc.epsilon)
    extractor = VGGFeatures(lc.vgg_weights, lc.vgg_layer) if lc.lambda_per > 0 else None
    return LossSuite(weights, TonemapParams(lc.mu), extractor)


def build_optimizer(model: torch.nn.Module, cfg: RunConfig) -> torch.optim.AdamW:
    t = cfg.train
    return torch.optim.AdamW(model.parameters(), lr=t.lr, betas=tuple(t.betas), weight_decay=t.weight_decay)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path: str | Path, model: LanHdrNet, cfg: RunConfig, step: int,
                    optimizer: torch.optim.Optimizer | None = None) -> Path:
    """One archive: named parameter groups, config + architecture hash, step counter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "params": {name: mod.state_dict() for name, mod in model.parameter_groups().items()},
        "config": cfg.to_dict(),
        "config_hash": model_hash(cfg.model),
        "step": step,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "rng": torch.get_rng_state(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, model: LanHdrNet, cfg: RunConfig,
                    optimizer: torch.optim.Optimizer | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    expected = model_hash(cfg.model)
    if blob.get("config_hash") != expected:
        raise ConfigError(f"checkpoint {path} was trained with model hash {blob.get('config_hash')}, "
                          f"but the configured model hashes to {expected}")
    for name, mod in model.parameter_groups().items():
        mod.load_state_dict(blob["params"][name])
    if optimizer is not None and blob.get("optimizer") is not None:
        optimizer.load_state_dict(blob["optimizer"])
    return blob


# ---------------------------------------------------------------- training

@dataclass
class StepRecord:
    step: int
    loss: float
    components: dict[str, float]
    lr: float


class Trainer:
    """Per step: a batch of (t-1, t) window pairs, two forwards, full loss, one AdamW update."""

    def __init__(self, cfg: RunConfig, sequences: list[FrameSequence], model: LanHdrNet | None = None,
                 losses: LossSuite | None = None):
        self.cfg = cfg
        set_determinism(cfg.train.seed, cfg.train.deterministic)
        self.model = model if model is not None else build_model(cfg)
        self.losses = losses if losses is not None else build_losses(cfg)
        self.optimizer = build_optimizer(self.model, cfg)
        self.sampler = PairSampler(sequences, cfg.data.crop_size, cfg.data.augment,
                                   tuple(cfg.data.gain_jitter), cfg.train.seed)
        self.step = 0
        self.last_checkpoint: Path | None = None
        self.history: list[StepRecord] = []

    def _batch(self):
        pairs = [self.sampler.sample() for _ in range(self.cfg.train.batch_size)]
        prev = batch_windows([p[0] for p in pairs])
        cur = batch_windows([p[1] for p in pairs])
        if cur[2] is None or prev[2] is None:
            raise DataError("training windows need ground truth")
        return prev, cur

    def train_step(self) -> StepRecord:
        self.model.train()
        (ldr_p, exp_p, gt_p), (ldr_t, exp_t, gt_t) = self._batch()
        pred_prev = self.model(ldr_p, exp_p).hdr
        pred_t = self.model(ldr_t, exp_t).hdr
        try:
            loss, comps = self.losses(pred_t, gt_t, pred_prev, gt_p)
        except TrainingDivergenceError as exc:
            exc.last_checkpoint = self.last_checkpoint
            raise
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        self.step += 1
        rec = StepRecord(self.step, float(loss.detach()), {k: float(v.detach()) for k, v in comps.items()},
                         self.optimizer.param_groups[0]["lr"])
        self.history.append(rec)
        return rec

    def checkpoint(self) -> Path:
        path = Path(self.cfg.train.ckpt_dir) / f"step_{self.step:07d}.pt"
        self.last_checkpoint = save_checkpoint(path, self.model, self.cfg, self.step, self.optimizer)
        return self.last_checkpoint

    def resume(self, path: str | Path) -> None:
        blob = load_checkpoint(path, self.model, self.cfg, self.optimizer)
        self.step = int(blob["step"])
        self.last_checkpoint = Path(path)

    def run(self, max_steps: int | None = None) -> list[Path]:
        max_steps = self.cfg.train.max_steps if max_steps is None else max_steps
        log_path = self.cfg.train.log_path
        written = [self.checkpoint()] if self.step == 0 else []
        t0 = time.time()
        while self.step < max_steps:
            rec = self.train_step()
            if log_path:
                with open(log_path, "a") as fh:
                    fh.write(json.dumps({"step": rec.step, "loss": rec.loss, **rec.components,
                                         "lr": rec.lr, "elapsed": time.time() - t0}) + "\n")
            if self.step % self.cfg.train.ckpt_every == 0 or self.step == max_steps:
                written.append(self.checkpoint())
                log.info("step %d loss %.5f -> %s", self.step, rec.loss, self.last_checkpoint)
        return written


def sequences_from_manifest(cfg: RunConfig) -> list[FrameSequence]:
    if not cfg.data.manifest:
        raise ConfigError("data.manifest is required")
    noise = NoiseConfig(cfg.data.shot_noise, cfg.data.read_noise)
    gen = torch.Generator().manual_seed(cfg.train.seed)
    seqs = []
    for rec in load_manifest(cfg.data.manifest):
        if len(rec.pattern) != cfg.model.exposures:
            raise ConfigError(f"sequence {rec.id} alternates {len(rec.pattern)} exposures, "
                              f"model expects {cfg.model.exposures}")
        seqs.append(load_sequence(rec, noise, gen))
    return seqs


# ---------------------------------------------------------------- inference

@torch.no_grad()
def reconstruct(model: LanHdrNet, ldr: Tensor, exposures: Tensor, tile: int | None = None,
                overlap: int = 32) -> Tensor:
    """HDR frame for one padded window ``[F, 3, H, W]``; optional overlapping tiles with linear blending."""
    model.eval()
    h, w = ldr.shape[-2:]
    if tile is None or (h <= tile and w <= tile):
        return model(ldr[None], exposures[None]).hdr[0]
    out = torch.zeros(3, h, w, dtype=ldr.dtype)
    weight = torch.zeros(1, h, w, dtype=ldr.dtype)
    ramp = _tile_weight(tile, overlap, ldr.dtype)
    for top in _tile_starts(h, tile, overlap):
        for left in _tile_starts(w, tile, overlap):
            th, tw = min(tile, h), min(tile, w)
            patch = ldr[..., top:top + th, left:left + tw]
            pred = model(patch[None], exposures[None]).hdr[0]
            wgt = ramp[..., :th, :tw]
            out[:, top:top + th, left:left + tw] += pred * wgt
            weight[:, top:top + th, left:left + tw] += wgt
    return out / weight


def _tile_starts(size: int, tile: int, overlap: int) -> list[int]:
    if size <= tile:
        return [0]
    stride = tile - overlap
    starts = list(range(0, size - tile, stride))
    starts.append(size - tile)
    return sorted(set(starts))


def _tile_weight(tile: int, overlap: int, dtype) -> Tensor:
    ramp = torch.ones(tile, dtype=dtype)
    if overlap > 0:
        edge = (torch.arange(overlap, dtype=dtype) + 1) / (overlap + 1)
        ramp[:overlap] = edge
        ramp[-overlap:] = edge.flip(0)
    return (ramp[:, None] * ramp[None, :])[None]


def infer_sequence(model: LanHdrNet, sequence: FrameSequence, tile: int | None = None, overlap: int = 32):
    """Yield ``(t, hdr)`` for every frame with a full window; ground truth is never touched."""
    n = sequence.half_window
    bare = FrameSequence(sequence.frames, None, n)
    for t in range(n, len(bare) - n):
        win = make_window(bare, t, with_ground_truth=False)
        hdr = reconstruct(model, win.ldr, win.exposures, tile, overlap)
        yield t, win.crop_to_size(hdr)
