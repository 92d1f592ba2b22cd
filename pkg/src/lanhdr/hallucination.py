"""Gated-convolution encoder-decoder that fills saturated and dark regions."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ContractError
from .radiometry import ExposureFrame, rgb_to_luma


class GatedConv2d(nn.Module):
    """ELU(conv_f(x)) * sigmoid(conv_g(x)), with identical geometry for both kernels."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3, stride: int = 1):
        super().__init__()
        pad = kernel_size // 2
        self.feature = nn.Conv2d(in_ch, out_ch, kernel_size, stride, pad)
        self.gate = nn.Conv2d(in_ch, out_ch, kernel_size, stride, pad)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.feature.in_channels:
            raise ContractError(f"gated conv expects {self.feature.in_channels} channels, got {x.shape[1]}")
        return F.elu(self.feature(x)) * torch.sigmoid(self.gate(x))


def gated_conv(x: Tensor, layer: GatedConv2d) -> Tensor:
    return layer(x)


def make_luminance_mask(frame: ExposureFrame | Tensor) -> Tensor:
    """Continuous (unthresholded) luma mask; high in saturated areas, low in dark ones."""
    pixels = frame.pixels if isinstance(frame, ExposureFrame) else frame
    return rgb_to_luma(pixels)


class GatedUp(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = GatedConv2d(in_ch, out_ch)

    def interpolate(self, x: Tensor) -> Tensor:
        return F.interpolate(x, scale_factor=2, mode="nearest")

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(self.interpolate(x))


class HallucinationNet(nn.Module):
    """Full-resolution encoder-decoder split around the blending layer.

    ``encode`` maps [neighbour 6ch, reference 6ch, two luma masks] to half-scale
    features F_h; ``decode`` maps blended half-scale features back to full size.
    """

    IN_CHANNELS = 6 + 6 + 1 + 1

    def __init__(self, channels: int = 32, feat_channels: int = 64, out_channels: int = 32):
        super().__init__()
        c = channels
        self.stem = GatedConv2d(self.IN_CHANNELS, c)
        self.down1 = GatedConv2d(c, 2 * c, stride=2)
        self.down2 = GatedConv2d(2 * c, 4 * c, stride=2)
        self.bottleneck = nn.Sequential(GatedConv2d(4 * c, 4 * c), GatedConv2d(4 * c, 4 * c))
        self.up1 = GatedUp(4 * c, 2 * c)
        self.to_feat = GatedConv2d(2 * c, feat_channels)
        self.up2 = GatedUp(feat_channels, c)
        self.head = GatedConv2d(c, out_channels)

    def encode(self, nbr6: Tensor, ref6: Tensor, nbr_mask: Tensor, ref_mask: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (F_h at half scale, full-scale stem features for the decoder skip)."""
        x = torch.cat([nbr6, ref6, nbr_mask, ref_mask], dim=1)
        if x.shape[1] != self.IN_CHANNELS:
            raise ContractError(f"hallucination input has {x.shape[1]} channels, expected {self.IN_CHANNELS}")
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ContractError(f"spatial size {h}x{w} is not divisible by 4")
        s0 = self.stem(x)
        s1 = self.down1(s0)
        s2 = self.bottleneck(self.down2(s1))
        return self.to_feat(self.up1(s2) + s1), s0

    def decode(self, blended: Tensor, skip: Tensor | None = None) -> Tensor:
        x = self.up2(blended)
        if skip is not None:
            if skip.shape != x.shape:
                raise ContractError(f"decoder skip {tuple(skip.shape)} does not match {tuple(x.shape)}")
            x = x + skip
        return self.head(x)
