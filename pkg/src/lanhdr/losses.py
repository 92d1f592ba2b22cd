"""Training losses, all evaluated on mu-law tonemapped frames."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor, nn

from .errors import ConfigError, ContractError, InvalidInputError, TrainingDivergenceError
from .radiometry import TonemapParams, mu_law

# torchvision vgg19().features indices of each ReLU
VGG19_RELU = {
    "relu1_1": 1, "relu1_2": 3,
    "relu2_1": 6, "relu2_2": 8,
    "relu3_1": 11, "relu3_2": 13, "relu3_3": 15, "relu3_4": 17,
    "relu4_1": 20, "relu4_2": 22, "relu4_3": 24, "relu4_4": 26,
    "relu5_1": 29, "relu5_2": 31, "relu5_3": 33, "relu5_4": 35,
}
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class LossWeights:
    lambda_1: float = 1.0
    lambda_per: float = 0.1
    lambda_freq: float = 0.1
    lambda_temp: float = 0.1
    epsilon: float = 1e-3

    def __post_init__(self):
        if min(self.lambda_1, self.lambda_per, self.lambda_freq, self.lambda_temp) < 0:
            raise InvalidInputError("loss weights must be non-negative")
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")


def _same_shape(*tensors: Tensor):
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors[1:]):
        raise ContractError(f"shape mismatch: {[tuple(t.shape) for t in tensors]}")


def l1_loss(pred: Tensor, gt: Tensor, tm: TonemapParams = TonemapParams()) -> Tensor:
    _same_shape(pred, gt)
    return (mu_law(pred, tm) - mu_law(gt, tm)).abs().mean()


class VGGFeatures(nn.Module):
    """Frozen VGG-19 trunk truncated at one ReLU layer, with ImageNet input normalisation.

    ``weights`` is a local torchvision state-dict file. ``allow_random=True``
    skips loading and exists for tests that only need a fixed differentiable
    feature map.
    """

    def __init__(self, weights: str | Path | None = None, layer: str = "relu4_4", allow_random: bool = False):
        super().__init__()
        from torchvision.models import vgg19

        if layer not in VGG19_RELU:
            raise ConfigError(f"unknown VGG-19 layer {layer!r}; choose one of {sorted(VGG19_RELU)}")
        net = vgg19(weights=None)
        if weights is not None:
            path = Path(weights)
            if not path.is_file():
                raise ConfigError(f"VGG-19 weights not found at {path}")
            state = torch.load(path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        elif not allow_random:
            raise ConfigError("perceptual loss needs pretrained VGG-19 weights (loss.vgg_weights)")
        self.features = net.features[: VGG19_RELU[layer] + 1].eval()
        for p in self.features.parameters():
            p.requires_grad_(False)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    def train(self, mode: bool = True):
        super().train(mode)
        self.features.eval()
        return self

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim == 3:
            x = x[None]
        return self.features((x - self.mean.to(x.dtype)) / self.std.to(x.dtype))


def perceptual_loss(pred: Tensor, gt: Tensor, tm: TonemapParams = TonemapParams(), feature_extractor=None) -> Tensor:
    if feature_extractor is None:
        raise ConfigError("perceptual loss requires a feature extractor")
    _same_shape(pred, gt)
    diff = feature_extractor(mu_law(pred, tm)) - feature_extractor(mu_law(gt, tm))
    return diff.pow(2).mean()


def frequency_loss(pred: Tensor, gt: Tensor, tm: TonemapParams = TonemapParams()) -> Tensor:
    """Mean |real| and |imag| difference of the 2-D FFTs of the tonemapped frames."""
    _same_shape(pred, gt)
    diff = torch.fft.fft2(mu_law(pred, tm)) - torch.fft.fft2(mu_law(gt, tm))
    return torch.view_as_real(diff).abs().mean()


def temporal_loss(pred_t: Tensor, pred_prev: Tensor, gt_t: Tensor, gt_prev: Tensor,
                  tm: TonemapParams = TonemapParams(), eps: float = 1e-3) -> Tensor:
    """Per-pixel Charbonnier penalty on the mismatch of consecutive-frame differences."""
    _same_shape(pred_t, pred_prev, gt_t, gt_prev)
    d = (mu_law(pred_t, tm) - mu_law(pred_prev, tm)) - (mu_law(gt_t, tm) - mu_law(gt_prev, tm))
    return torch.sqrt(d * d + eps * eps).mean()


def total_loss(components: dict[str, Tensor | float], weights: LossWeights = LossWeights()) -> Tensor | float:
    """Weighted sum of the ``l1``, ``per``, ``freq`` and ``temp`` components (missing ones count as 0)."""
    for name, value in components.items():
        v = float(value.detach()) if isinstance(value, Tensor) else float(value)
        if not math.isfinite(v):
            raise TrainingDivergenceError(
                f"loss component {name!r} is not finite",
                components={k: float(torch.as_tensor(c).detach()) for k, c in components.items()})
    coeff = {"l1": weights.lambda_1, "per": weights.lambda_per,
             "freq": weights.lambda_freq, "temp": weights.lambda_temp}
    unknown = set(components) - set(coeff)
    if unknown:
        raise InvalidInputError(f"unknown loss components: {sorted(unknown)}")
    return sum(coeff[k] * v for k, v in components.items())


class LossSuite(nn.Module):
    """Bundles the four losses for the training loop."""

    def __init__(self, weights: LossWeights = LossWeights(), tm: TonemapParams = TonemapParams(),
                 feature_extractor: nn.Module | None = None):
        super().__init__()
        if weights.lambda_per > 0 and feature_extractor is None:
            raise ConfigError("lambda_per > 0 but no VGG-19 feature extractor was configured")
        self.weights = weights
        self.tm = tm
        self.feature_extractor = feature_extractor

    def forward(self, pred_t, gt_t, pred_prev=None, gt_prev=None) -> tuple[Tensor, dict[str, Tensor]]:
        comps = {"l1": l1_loss(pred_t, gt_t, self.tm), "freq": frequency_loss(pred_t, gt_t, self.tm)}
        if self.weights.lambda_per > 0:
            comps["per"] = perceptual_loss(pred_t, gt_t, self.tm, self.feature_extractor)
        if pred_prev is not None:
            comps["temp"] = temporal_loss(pred_t, pred_prev, gt_t, gt_prev, self.tm, self.weights.epsilon)
        return total_loss(comps, self.weights), comps
