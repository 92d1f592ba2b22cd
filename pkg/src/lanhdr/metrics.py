"""PSNR/SSIM on mu-law and PU21 encoded frames, per-sequence reports, temporal profiles."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from skimage.metrics import structural_similarity
from torch import Tensor

from .errors import ContractError, DegenerateInputError, InvalidInputError
from .radiometry import PEAK_LUMINANCE, TonemapParams, mu_law, pu21_scalar, pu_encode

SSIM_SIGMA = 1.5  # 11x11 Gaussian window at truncate=3.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _np(x) -> np.ndarray:
    if isinstance(x, Tensor):
        x = x.detach().cpu().double().numpy()
    return np.asarray(x, dtype=np.float64)


def _check(pred, gt):
    if pred.shape != gt.shape:
        raise ContractError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")


def psnr(pred, gt, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; ``math.inf`` when the inputs are identical."""
    a, b = _np(pred), _np(gt)
    _check(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(pred, gt, data_range: float = 1.0) -> float:
    """Single-scale Gaussian SSIM over a ``[C, H, W]`` frame, averaged over channels."""
    a, b = _np(pred), _np(gt)
    _check(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    return float(structural_similarity(
        a, b, data_range=data_range, channel_axis=0, gaussian_weights=True, sigma=SSIM_SIGMA,
        use_sample_covariance=False, K1=SSIM_K1, K2=SSIM_K2))


def psnr_t(pred, gt, tm: TonemapParams = TonemapParams()) -> float:
    return psnr(mu_law(torch.as_tensor(pred), tm), mu_law(torch.as_tensor(gt), tm))


def ssim_t(pred, gt, tm: TonemapParams = TonemapParams()) -> float:
    return ssim(mu_law(torch.as_tensor(pred), tm), mu_law(torch.as_tensor(gt), tm))


def _pu_pair(pred, gt):
    pred, gt = torch.as_tensor(pred).double(), torch.as_tensor(gt).double()
    _check(pred, gt)
    peak = gt.max()
    if not peak > 0:
        raise DegenerateInputError("ground truth is all zero; PU normalisation is undefined")
    return pu_encode(pred.clamp_min(0), reference_peak=peak), pu_encode(gt, reference_peak=peak)


def pu_peak() -> float:
    return pu21_scalar(PEAK_LUMINANCE)


def psnr_pu(pred, gt) -> float:
    """PSNR after PU21 encoding; both frames share the ground truth's peak -> 4000 cd/m^2 scaling."""
    a, b = _pu_pair(pred, gt)
    return psnr(a, b, peak=pu_peak())


def ssim_pu(pred, gt) -> float:
    a, b = _pu_pair(pred, gt)
    return ssim(a, b, data_range=pu_peak())


@dataclass
class FrameMetrics:
    frame: str
    psnr_t: float | None
    psnr_t_infinite: bool
    ssim_t: float
    psnr_pu: float | None
    psnr_pu_infinite: bool
    ssim_pu: float
    hdr_vdp2: float | None = None


def frame_metrics(name: str, pred, gt, tm: TonemapParams = TonemapParams()) -> FrameMetrics:
    pt, pp = psnr_t(pred, gt, tm), psnr_pu(pred, gt)
    return FrameMetrics(
        frame=name,
        psnr_t=None if math.isinf(pt) else pt,
        psnr_t_infinite=math.isinf(pt),
        ssim_t=ssim_t(pred, gt, tm),
        psnr_pu=None if math.isinf(pp) else pp,
        psnr_pu_infinite=math.isinf(pp),
        ssim_pu=ssim_pu(pred, gt),
    )


@dataclass
class MetricReport:
    frames: list[FrameMetrics] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def summary(self) -> dict:
        if not self.frames:
            raise InvalidInputError("empty metric report")
        out: dict = {"frame_count": self.frame_count}
        for key in ("psnr_t", "psnr_pu"):
            finite = [getattr(f, key) for f in self.frames if getattr(f, key) is not None]
            inf = sum(getattr(f, f"{key}_infinite") for f in self.frames)
            out[f"{key}_mean"] = float(np.mean(finite)) if finite else None
            out[f"{key}_infinite_frames"] = inf
        for key in ("ssim_t", "ssim_pu"):
            out[f"{key}_mean"] = float(np.mean([getattr(f, key) for f in self.frames]))
        vdp = [f.hdr_vdp2 for f in self.frames if f.hdr_vdp2 is not None]
        out["hdr_vdp2_mean"] = float(np.mean(vdp)) if vdp else None
        return out

    def to_dict(self) -> dict:
        return {"frames": [asdict(f) for f in self.frames], "summary": self.summary()}

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))


def temporal_profile(frames, row: int, tm: TonemapParams = TonemapParams()) -> np.ndarray:
    """Stack row ``row`` of each tonemapped ``[3, H, W]`` frame in time order -> ``[T, W, 3]``."""
    frames = list(frames)
    if not frames:
        raise InvalidInputError("no frames for the temporal profile")
    width = frames[0].shape[-1]
    if any(f.shape[-1] != width for f in frames):
        raise ContractError("frames differ in width")
    rows = []
    for f in frames:
        f = torch.as_tensor(f)
        if not 0 <= row < f.shape[-2]:
            raise InvalidInputError(f"row {row} outside frame of height {f.shape[-2]}")
        rows.append(mu_law(f[:, row, :].clamp_min(0), tm).T)
    return torch.stack(rows).cpu().numpy()
