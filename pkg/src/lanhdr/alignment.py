"""Luminance-driven patch attention alignment at quarter resolution.

Keys come from the neighbour's luma, queries from the reference luma after it
has been re-exposed to the neighbour's exposure time. Each query patch picks
its single most similar key patch (cosine similarity); the neighbour's value
patches are rearranged accordingly, concatenated with the unaligned values,
weighted by the match confidence and upsampled one step to half resolution.
"""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ContractError, InvalidInputError
from .radiometry import GAMMA, reexpose, rgb_to_luma

NORM_EPS = 1e-8


class MatchResult(NamedTuple):
    index: Tensor  # [B, n] int64, best key for each query
    confidence: Tensor  # [B, n] cosine similarity of that pair


def downsample4(x: Tensor) -> Tensor:
    """Area-average 4x reduction of a ``[..., C, H, W]`` tensor."""
    h, w = x.shape[-2:]
    if h % 4 or w % 4:
        raise ContractError(f"spatial size {h}x{w} is not divisible by 4; pad before aligning")
    lead = x.shape[:-3]
    out = F.avg_pool2d(x.reshape(-1, *x.shape[-3:]), 4)
    return out.reshape(*lead, *out.shape[-3:])


def conv_stack(in_ch: int, ch: int, layers: int) -> nn.Sequential:
    mods: list[nn.Module] = []
    for i in range(layers):
        mods += [nn.Conv2d(in_ch if i == 0 else ch, ch, 3, padding=1), nn.LeakyReLU(0.1)]
    return nn.Sequential(*mods)


class KeyQueryExtractor(nn.Module):
    """Shared key/query embedding; accepts only single-channel (luma) input."""

    def __init__(self, channels: int = 64, layers: int = 3):
        super().__init__()
        self.body = conv_stack(1, channels, layers)

    def forward(self, y: Tensor) -> Tensor:
        if y.shape[1] != 1:
            raise ContractError(f"key/query extractor takes luma only, got {y.shape[1]} channels")
        return self.body(y)


class ValueExtractor(nn.Module):
    def __init__(self, in_channels: int = 6, channels: int = 64, layers: int = 3):
        super().__init__()
        self.body = conv_stack(in_channels, channels, layers)

    def forward(self, x: Tensor) -> Tensor:
        return self.body(x)


def unfold_patches(feat: Tensor) -> Tensor:
    """3x3 patches at unit stride with reflect padding: ``[B, C, h, w] -> [B, h*w, 9*C]``."""
    padded = F.pad(feat, (1, 1, 1, 1), mode="reflect")
    return F.unfold(padded, 3).transpose(1, 2)


def fold_average(patches: Tensor, size: tuple[int, int]) -> Tensor:
    """Inverse of :func:`unfold_patches`: overlap-add the patches and divide by coverage."""
    h, w = size
    cols = patches.transpose(1, 2)
    padded = (h + 2, w + 2)
    summed = F.fold(cols, padded, 3)
    count = F.fold(torch.ones_like(cols[:1]), padded, 3)
    return (summed / count)[..., 1:-1, 1:-1]


def match_top1(queries: Tensor, keys: Tensor, tile: int = 1024) -> MatchResult:
    """Top-1 cosine matching of query patches against key patches.

    ``queries`` and ``keys`` are ``[B, n, D]``. The n x n similarity matrix is
    evaluated in blocks of ``tile`` query rows. Ties resolve to the lowest
    key index.
    """
    if queries.ndim == 2:
        res = match_top1(queries[None], keys[None], tile)
        return MatchResult(res.index[0], res.confidence[0])
    if queries.shape[1] == 0 or keys.shape[1] == 0:
        raise InvalidInputError("empty patch set")
    if queries.shape[0] != keys.shape[0] or queries.shape[2] != keys.shape[2]:
        raise ContractError(f"query/key patch sets disagree: {tuple(queries.shape)} vs {tuple(keys.shape)}")
    qn = queries / queries.norm(dim=-1, keepdim=True).clamp_min(NORM_EPS)
    kn = keys / keys.norm(dim=-1, keepdim=True).clamp_min(NORM_EPS)
    kt = kn.transpose(1, 2)
    indices = []
    with torch.no_grad():
        for start in range(0, qn.shape[1], tile):
            indices.append(torch.bmm(qn[:, start:start + tile], kt).argmax(dim=-1))
    index = torch.cat(indices, 1)
    # re-evaluate the winning pairs row-wise: identical for any tiling, and differentiable
    best = torch.gather(kn, 1, index.unsqueeze(-1).expand(-1, -1, kn.shape[-1]))
    return MatchResult(index, (qn * best).sum(-1))


def rearrange_values(values: Tensor, index: Tensor, size: tuple[int, int]) -> Tensor:
    """Place value patch ``index[i]`` at location ``i`` and fold back to ``[B, C, h, w]``."""
    n = values.shape[1]
    if index.numel() and (index.min() < 0 or index.max() >= n):
        raise RuntimeError("match index out of range for value patch set")
    gathered = torch.gather(values, 1, index.unsqueeze(-1).expand(-1, -1, values.shape[-1]))
    return fold_average(gathered, size)


def fuse_confidence(values: Tensor, rearranged: Tensor, confidence: Tensor) -> Tensor:
    if values.shape != rearranged.shape:
        raise ContractError(f"value maps disagree: {tuple(values.shape)} vs {tuple(rearranged.shape)}")
    b, _, h, w = values.shape
    if confidence.numel() != b * h * w:
        raise ContractError("confidence map does not match the value grid")
    return torch.cat([values, rearranged], dim=1) * confidence.reshape(b, 1, h, w)


class UpsampleBlock(nn.Module):
    """Nearest 2x interpolation, 3x3 convolution, LeakyReLU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.act = nn.LeakyReLU(0.1)

    def interpolate(self, x: Tensor) -> Tensor:
        return F.interpolate(x, scale_factor=2, mode="nearest")

    def forward(self, x: Tensor) -> Tensor:
        return self.act(self.conv(self.interpolate(x)))


class AlignmentModule(nn.Module):
    def __init__(self, kq_channels=64, value_channels=64, out_channels=64, layers=3,
                 gamma=GAMMA, tile=1024):
        super().__init__()
        self.gamma = gamma
        self.tile = tile
        self.key_query = KeyQueryExtractor(kq_channels, layers)
        self.value = ValueExtractor(6, value_channels, layers)
        self.upsample = UpsampleBlock(2 * value_channels, out_channels)

    def key_query_features(self, nbr_ldr: Tensor, ref_ldr: Tensor, nbr_exposure, ref_exposure):
        """Keys from the neighbour luma, queries from the re-exposed reference luma (quarter scale)."""
        y_nbr = downsample4(rgb_to_luma(nbr_ldr))
        y_ref = downsample4(rgb_to_luma(ref_ldr))
        ratio = torch.as_tensor(nbr_exposure, dtype=y_ref.dtype) / torch.as_tensor(ref_exposure, dtype=y_ref.dtype)
        y_ref = reexpose(y_ref, ratio.reshape(-1) if ratio.ndim else ratio, self.gamma)
        return self.key_query(y_nbr), self.key_query(y_ref)

    def forward(self, nbr6: Tensor, ref_ldr: Tensor, nbr_exposure, ref_exposure):
        """``nbr6`` is the neighbour's [LDR, linear] stack ``[B, 6, H, W]``; returns (F_a at H/2, match)."""
        if nbr6.shape[1] != 6 or ref_ldr.shape[1] != 3:
            raise ContractError("expected a 6-channel neighbour and a 3-channel reference")
        if nbr6.shape[-2:] != ref_ldr.shape[-2:]:
            raise ContractError("neighbour and reference differ in size")
        keys, queries = self.key_query_features(nbr6[:, :3], ref_ldr, nbr_exposure, ref_exposure)
        values = self.value(downsample4(nbr6))
        match = match_top1(unfold_patches(queries), unfold_patches(keys), self.tile)
        size = values.shape[-2:]
        rearranged = rearrange_values(unfold_patches(values), match.index, size)
        fused = fuse_confidence(values, rearranged, match.confidence)
        return self.upsample(fused), match
