"""Adaptive blending, the weight-shared alignment network (LAN), and the
frequency-domain merging network that produces the HDR frame."""
from __future__ import annotations

from typing import NamedTuple

import torch
from torch import Tensor, nn

from .alignment import AlignmentModule, MatchResult
from .config import ModelConfig
from .errors import ContractError
from .hallucination import HallucinationNet, make_luminance_mask
from .radiometry import gamma_to_linear


class BlendResult(NamedTuple):
    fused: Tensor
    blend_map: Tensor  # [B, 1, h, w] in [0, 1]


def blend_features(aligned: Tensor, hallucinated: Tensor, blend_map: Tensor) -> Tensor:
    return (1 - blend_map) * hallucinated + blend_map * (hallucinated + aligned)


class AdaptiveBlend(nn.Module):
    """Predicts a per-pixel map M from both feature sets and blends them."""

    def __init__(self, channels: int):
        super().__init__()
        self.head = nn.Sequential(
            nn.Conv2d(2 * channels, channels, 3, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(channels, 1, 3, padding=1),
        )

    def forward(self, aligned: Tensor, hallucinated: Tensor, blend_map: Tensor | None = None) -> BlendResult:
        if aligned.shape != hallucinated.shape:
            raise ContractError(f"F_a {tuple(aligned.shape)} and F_h {tuple(hallucinated.shape)} differ")
        if blend_map is None:
            blend_map = torch.sigmoid(self.head(torch.cat([aligned, hallucinated], dim=1)))
        return BlendResult(blend_features(aligned, hallucinated, blend_map), blend_map)


def adaptive_blend(aligned: Tensor, hallucinated: Tensor, head: AdaptiveBlend, blend_map=None) -> BlendResult:
    return head(aligned, hallucinated, blend_map)


class LanOutput(NamedTuple):
    features: Tensor
    blend_map: Tensor
    match: MatchResult


class LAN(nn.Module):
    """Aligns one supporting frame to the reference and returns full-resolution features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.alignment = AlignmentModule(cfg.kq_channels, cfg.value_channels, cfg.feat_channels,
                                         cfg.extractor_layers, cfg.gamma, cfg.attention_tile)
        self.hallucination = HallucinationNet(cfg.hal_channels, cfg.feat_channels, cfg.lan_out_channels)
        self.blend = AdaptiveBlend(cfg.feat_channels)

    def forward(self, nbr_ldr, nbr_lin, nbr_exposure, ref_ldr, ref_lin, ref_exposure) -> LanOutput:
        nbr6 = torch.cat([nbr_ldr, nbr_lin], dim=1)
        ref6 = torch.cat([ref_ldr, ref_lin], dim=1)
        aligned, match = self.alignment(nbr6, ref_ldr, nbr_exposure, ref_exposure)
        hallucinated, skip = self.hallucination.encode(
            nbr6, ref6, make_luminance_mask(nbr_ldr), make_luminance_mask(ref_ldr))
        blended = self.blend(aligned, hallucinated)
        return LanOutput(self.hallucination.decode(blended.fused, skip), blended.blend_map, match)


class ResFFTConvBlock(nn.Module):
    """x + spatial 3x3 branch + spectral 1x1 branch on stacked real/imaginary rfft2 channels."""

    def __init__(self, channels: int, freq_act: nn.Module | None = None):
        super().__init__()
        self.spatial = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
        )
        self.freq_in = nn.Conv2d(2 * channels, 2 * channels, 1)
        self.freq_act = nn.ReLU() if freq_act is None else freq_act
        self.freq_out = nn.Conv2d(2 * channels, 2 * channels, 1)

    def frequency(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        spec = torch.fft.rfft2(x, norm="backward")
        z = torch.cat([spec.real, spec.imag], dim=1)
        z = self.freq_out(self.freq_act(self.freq_in(z)))
        real, imag = z.chunk(2, dim=1)
        return torch.fft.irfft2(torch.complex(real, imag), s=(h, w), norm="backward")

    def forward(self, x: Tensor) -> Tensor:
        return x + self.spatial(x) + self.frequency(x)


class MergeNet(nn.Module):
    def __init__(self, num_frames: int, in_channels: int, channels: int = 64, blocks: int = 5):
        super().__init__()
        self.num_frames = num_frames
        self.in_channels = in_channels
        self.head = nn.Conv2d(num_frames * in_channels, channels, 3, padding=1)
        self.blocks = nn.Sequential(*[ResFFTConvBlock(channels) for _ in range(blocks)])
        self.tail = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, features: list[Tensor]) -> Tensor:
        if len(features) != self.num_frames:
            raise ContractError(f"merge expects {self.num_frames} feature maps, got {len(features)}")
        if any(f.shape != features[0].shape for f in features):
            raise ContractError("aligned feature maps differ in shape")
        if features[0].shape[1] != self.in_channels:
            raise ContractError(f"merge expects {self.in_channels}-channel features")
        x = self.head(torch.cat(features, dim=1))
        return torch.sigmoid(self.tail(self.blocks(x)))


class ModelOutput(NamedTuple):
    hdr: Tensor
    blend_maps: list[Tensor]
    matches: list[MatchResult]


class LanHdrNet(nn.Module):
    """2N+1 LDR frames -> one HDR frame. Every frame, the reference included,
    goes through the same LAN against the reference."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.lan = LAN(cfg)
        self.merge = MergeNet(cfg.num_frames, cfg.lan_out_channels, cfg.merge_channels, cfg.fft_blocks)

    def parameter_groups(self) -> dict[str, nn.Module]:
        return {
            "alignment": self.lan.alignment,
            "hallucination": self.lan.hallucination,
            "blend": self.lan.blend,
            "merge": self.merge,
        }

    def forward(self, ldr: Tensor, exposures: Tensor) -> ModelOutput:
        """``ldr``: ``[B, F, 3, H, W]`` in [0, 1]; ``exposures``: ``[B, F]``."""
        if ldr.ndim != 5 or ldr.shape[2] != 3:
            raise ContractError(f"expected [B, F, 3, H, W] input, got {tuple(ldr.shape)}")
        frames = ldr.shape[1]
        if frames != self.cfg.num_frames:
            raise ContractError(f"{self.cfg.exposures}-exposure model consumes {self.cfg.num_frames} frames, got {frames}")
        exposures = torch.as_tensor(exposures, dtype=ldr.dtype, device=ldr.device).reshape(ldr.shape[0], frames)
        lin = gamma_to_linear(ldr, exposures[..., None, None, None], self.cfg.gamma)
        r = frames // 2
        outs = [self.lan(ldr[:, i], lin[:, i], exposures[:, i], ldr[:, r], lin[:, r], exposures[:, r])
                for i in range(frames)]
        hdr = self.merge([o.features for o in outs])
        return ModelOutput(hdr, [o.blend_map for o in outs], [o.match for o in outs])
