"""Pointwise radiometric transforms: gamma linearisation, re-exposure, luma,
mu-law tonemapping and PU21 perceptually uniform encoding.

All functions accept tensors with the colour axis at dim -3, so they work on
both single frames ``[3, H, W]`` and batches ``[B, 3, H, W]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import DegenerateInputError, InvalidInputError

GAMMA = 2.2
MU = 5000.0

# BT.601 full-range luma
LUMA_COEFFS = (0.299, 0.587, 0.114)

# PU21 "banding_glare" fit, Mantiuk & Azimi 2021 (pu21_encoder.m)
PU21_PARAMS = (
    0.353487901,
    0.3734658629,
    8.277049286e-05,
    0.9062562627,
    0.09150303166,
    0.9099517204,
    596.3148142,
)
PU21_L_MIN = 0.005
PU21_L_MAX = 10000.0
PEAK_LUMINANCE = 4000.0


@dataclass(frozen=True)
class ExposureFrame:
    """An LDR frame with values in [0, 1] and its relative exposure time."""

    pixels: Tensor
    exposure: float
    gamma: float = GAMMA

    def __post_init__(self):
        if not self.exposure > 0 or not math.isfinite(self.exposure):
            raise InvalidInputError(f"exposure time must be positive, got {self.exposure}")
        if self.pixels.shape[-3] != 3:
            raise InvalidInputError(f"expected 3 colour channels, got shape {tuple(self.pixels.shape)}")
        if not torch.isfinite(self.pixels).all():
            raise InvalidInputError("non-finite pixel values")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise InvalidInputError("LDR pixels must lie in [0, 1]")


@dataclass(frozen=True)
class TonemapParams:
    mu: float = MU

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidInputError(f"mu must be positive, got {self.mu}")


def gamma_to_linear(pixels: Tensor, exposure, gamma: float = GAMMA) -> Tensor:
    """``pixels ** gamma / exposure``; ``exposure`` may be a scalar or a per-sample tensor."""
    exposure = _as_broadcast(exposure, pixels)
    if not torch.isfinite(pixels).all():
        raise InvalidInputError("non-finite pixel values")
    if (exposure <= 0).any():
        raise InvalidInputError("exposure time must be positive")
    return pixels.clamp_min(0) ** gamma / exposure


def ldr_to_linear(frame: ExposureFrame) -> Tensor:
    return gamma_to_linear(frame.pixels, frame.exposure, frame.gamma)


def reexpose(pixels: Tensor, ratio, gamma: float = GAMMA) -> Tensor:
    """Scale LDR values as if the exposure time were multiplied by ``ratio``, then clip."""
    ratio = _as_broadcast(ratio, pixels)
    if (ratio <= 0).any():
        raise InvalidInputError("exposure ratio must be positive")
    return torch.clamp(pixels * ratio ** (1.0 / gamma), 0.0, 1.0)


def adjust_exposure(ref: ExposureFrame, target_exposure: float) -> ExposureFrame:
    if not target_exposure > 0:
        raise InvalidInputError(f"target exposure must be positive, got {target_exposure}")
    pixels = reexpose(ref.pixels, target_exposure / ref.exposure, ref.gamma)
    return ExposureFrame(pixels, float(target_exposure), ref.gamma)


def rgb_to_luma(pixels: Tensor) -> Tensor:
    """Y channel of BT.601 full-range YCbCr, keeping a singleton channel axis."""
    if pixels.shape[-3] != 3:
        raise InvalidInputError(f"expected 3 colour channels, got shape {tuple(pixels.shape)}")
    r, g, b = pixels.unbind(dim=-3)
    wr, wg, wb = LUMA_COEFFS
    return (wr * r + wg * g + wb * b).unsqueeze(-3)


def mu_law(hdr: Tensor, params: TonemapParams = TonemapParams()) -> Tensor:
    """Differentiable log compression log(1 + mu*H) / log(1 + mu)."""
    if (hdr < 0).any():
        raise InvalidInputError("mu-law expects non-negative radiance")
    mu = params.mu
    return torch.log1p(mu * hdr) / math.log1p(mu)


def pu21(luminance: Tensor) -> Tensor:
    """PU21 code values for absolute luminance in cd/m^2 (clamped to the fit's range)."""
    p1, p2, p3, p4, p5, p6, p7 = PU21_PARAMS
    y = luminance.clamp(PU21_L_MIN, PU21_L_MAX)
    yp = y ** p4
    return p7 * (((p1 + p2 * yp) / (1 + p3 * yp)) ** p5 - p6)


def pu21_scalar(luminance: float) -> float:
    p1, p2, p3, p4, p5, p6, p7 = PU21_PARAMS
    y = min(max(luminance, PU21_L_MIN), PU21_L_MAX)
    return p7 * (((p1 + p2 * y**p4) / (1 + p3 * y**p4)) ** p5 - p6)


def pu_encode(radiance: Tensor, peak_luminance: float = PEAK_LUMINANCE, reference_peak=None) -> Tensor:
    """Map the frame peak (or ``reference_peak``) to ``peak_luminance`` and PU21-encode.

    Passing the ground truth's peak as ``reference_peak`` for both prediction
    and ground truth keeps the two on a common luminance scale.
    """
    if (radiance < 0).any():
        raise InvalidInputError("radiance must be non-negative")
    peak = radiance.max() if reference_peak is None else torch.as_tensor(reference_peak, dtype=radiance.dtype)
    if not peak > 0:
        raise DegenerateInputError("cannot normalise an all-zero frame to display peak luminance")
    return pu21(radiance * (peak_luminance / peak))


def _as_broadcast(value, like: Tensor) -> Tensor:
    """Turn a scalar or per-sample ``[B]`` value into something broadcastable against ``like``."""
    t = torch.as_tensor(value, dtype=like.dtype, device=like.device)
    if t.ndim == 1 and like.ndim == 4:
        t = t.view(-1, 1, 1, 1)
    return t
