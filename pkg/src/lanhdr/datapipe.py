"""Alternating-exposure data: synthesis from clean video, windows, augmentation, image I/O."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
import yaml
from torch import Tensor

from .errors import ConfigError, DataError, InvalidInputError
from .radiometry import GAMMA, ExposureFrame, gamma_to_linear

FRAMES_PER_PATTERN = {2: 5, 3: 7}


def exposure_levels(num_exposures: int, stops: float = 2.0) -> tuple[float, ...]:
    """Relative exposure times ``1, 2**stops, 2**(2*stops)`` truncated to ``num_exposures``."""
    if num_exposures not in FRAMES_PER_PATTERN:
        raise ConfigError(f"only 2 or 3 alternating exposures are supported, got {num_exposures}")
    if not stops > 0:
        raise ConfigError(f"exposure gap must be positive, got {stops} stops")
    return tuple(2.0 ** (stops * k) for k in range(num_exposures))


@dataclass(frozen=True)
class NoiseConfig:
    shot: float = 0.0
    read: float = 0.0


def quantize8(x: Tensor) -> Tensor:
    return torch.round(x * 255.0) / 255.0


def synthesize_exposures(clean: Tensor, exposure: float, stops: float = 2.0, noise: NoiseConfig | None = None,
                         generator: torch.Generator | None = None, gamma: float = GAMMA) -> ExposureFrame:
    """Render an 8-bit LDR frame of ``clean`` (treated as the e=1 rendition) at exposure ``exposure``."""
    if not stops > 0:
        raise ConfigError(f"exposure gap must be positive, got {stops} stops")
    if not exposure > 0:
        raise InvalidInputError(f"exposure must be positive, got {exposure}")
    linear = clean.clamp(0, 1) ** gamma * exposure
    if noise is not None and (noise.shot > 0 or noise.read > 0):
        std = torch.sqrt(noise.shot * linear.clamp_min(0) + noise.read**2)
        linear = linear + std * torch.randn(linear.shape, generator=generator, dtype=linear.dtype)
    ldr = quantize8(linear.clamp(0, 1) ** (1.0 / gamma))
    return ExposureFrame(ldr, float(exposure), gamma)


def ground_truth_from_clean(clean: Tensor, gamma: float = GAMMA) -> Tensor:
    """Linear radiance of the clean frame; already within [0, 1] because the clean frame is."""
    return clean.clamp(0, 1) ** gamma


@dataclass
class SequenceRecord:
    id: str
    frame_paths: list[Path]
    pattern: tuple[float, ...]
    stops: float = 2.0
    ground_truth_paths: list[Path] | None = None
    source: str = "ldr"  # "ldr": captured frames; "clean": frames to synthesise from

    def __post_init__(self):
        if self.source not in ("ldr", "clean"):
            raise DataError(f"sequence {self.id}: source must be 'ldr' or 'clean'")
        if len(self.pattern) not in FRAMES_PER_PATTERN:
            raise DataError(f"sequence {self.id}: pattern must have 2 or 3 exposures")
        if self.ground_truth_paths is not None and len(self.ground_truth_paths) != len(self.frame_paths):
            raise DataError(f"sequence {self.id}: {len(self.frame_paths)} frames but "
                            f"{len(self.ground_truth_paths)} ground-truth files")
        for p in list(self.frame_paths) + list(self.ground_truth_paths or []):
            if not Path(p).is_file():
                raise DataError(f"sequence {self.id}: missing file {p}")

    @property
    def half_window(self) -> int:
        return FRAMES_PER_PATTERN[len(self.pattern)] // 2

    def exposure(self, i: int) -> float:
        return self.pattern[i % len(self.pattern)]

    def __len__(self):
        return len(self.frame_paths)


def load_manifest(path: str | Path) -> list[SequenceRecord]:
    """Read a YAML manifest: ``sequences: [{id, frames, pattern | exposures, stops, ground_truth, source}]``.

    ``frames``/``ground_truth`` are lists of paths or glob patterns, relative to the manifest.
    ``exposures`` (2 or 3) with ``stops`` may replace an explicit ``pattern``; ``phase`` rotates it.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"manifest not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise DataError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("sequences"), list):
        raise DataError(f"manifest {path} must contain a 'sequences' list")
    root = path.parent
    records = []
    for entry in raw["sequences"]:
        try:
            stops = float(entry.get("stops", 2.0))
            if "pattern" in entry:
                pattern = tuple(float(e) for e in entry["pattern"])
            else:
                pattern = exposure_levels(int(entry["exposures"]), stops)
            phase = int(entry.get("phase", 0)) % len(pattern)
            pattern = pattern[phase:] + pattern[:phase]
            gt = entry.get("ground_truth")
            records.append(SequenceRecord(
                id=str(entry["id"]),
                frame_paths=_expand(root, entry["frames"]),
                pattern=pattern,
                stops=stops,
                ground_truth_paths=_expand(root, gt) if gt is not None else None,
                source=entry.get("source", "ldr"),
            ))
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise DataError(f"bad manifest entry {entry!r} in {path}: {exc}") from exc
    return records


def _expand(root: Path, spec) -> list[Path]:
    if isinstance(spec, str):
        matches = sorted(root.glob(spec))
        if not matches:
            raise DataError(f"glob {spec!r} matched no files under {root}")
        return matches
    return [root / p for p in spec]


@dataclass
class FrameSequence:
    """An in-memory alternating-exposure clip, optionally with linear ground truth."""

    frames: list[ExposureFrame]
    ground_truth: list[Tensor] | None = None
    half_window: int = 2

    def __len__(self):
        return len(self.frames)


def synthesize_sequence(clean_frames: Sequence[Tensor], num_exposures: int = 2, stops: float = 2.0,
                        phase: int = 0, noise: NoiseConfig | None = None,
                        generator: torch.Generator | None = None, gamma: float = GAMMA) -> FrameSequence:
    levels = exposure_levels(num_exposures, stops)
    frames = [synthesize_exposures(c, levels[(i + phase) % num_exposures], stops, noise, generator, gamma)
              for i, c in enumerate(clean_frames)]
    gts = [ground_truth_from_clean(c, gamma) for c in clean_frames]
    return FrameSequence(frames, gts, FRAMES_PER_PATTERN[num_exposures] // 2)


def load_sequence(record: SequenceRecord, noise: NoiseConfig | None = None,
                  generator: torch.Generator | None = None, with_ground_truth: bool = True) -> FrameSequence:
    n = record.half_window
    if record.source == "clean":
        clean = [read_frame(p) for p in record.frame_paths]
        frames = [synthesize_exposures(c, record.exposure(i), record.stops, noise, generator)
                  for i, c in enumerate(clean)]
        gts = [ground_truth_from_clean(c) for c in clean] if with_ground_truth else None
        return FrameSequence(frames, gts, n)
    frames = [ExposureFrame(read_frame(p), record.exposure(i)) for i, p in enumerate(record.frame_paths)]
    gts = None
    if with_ground_truth and record.ground_truth_paths is not None:
        gts = [read_hdr(p) for p in record.ground_truth_paths]
    return FrameSequence(frames, gts, n)


@dataclass
class FrameWindow:
    """2N+1 consecutive frames centred on the reference, padded to multiples of 4."""

    frames: list[ExposureFrame]
    reference_index: int
    size: tuple[int, int]  # unpadded (H, W)
    ground_truth: Tensor | None = None
    t: int = 0

    @property
    def ldr(self) -> Tensor:
        return torch.stack([f.pixels for f in self.frames])

    @property
    def exposures(self) -> Tensor:
        return torch.tensor([f.exposure for f in self.frames])

    @property
    def linear(self) -> Tensor:
        return torch.stack([gamma_to_linear(f.pixels, f.exposure, f.gamma) for f in self.frames])

    @property
    def six_channel(self) -> Tensor:
        """Per-frame ``[LDR, linear]`` channel stacks, ``[F, 6, H, W]``."""
        return torch.cat([self.ldr, self.linear], dim=1)

    def crop_to_size(self, x: Tensor) -> Tensor:
        h, w = self.size
        return x[..., :h, :w]


def pad_to_multiple(x: Tensor, multiple: int = 4) -> Tensor:
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not ph and not pw:
        return x
    mode = "reflect" if ph < h and pw < w else "replicate"
    flat = x.reshape(-1, *x.shape[-3:])
    return F.pad(flat, (0, pw, 0, ph), mode=mode).reshape(*x.shape[:-2], h + ph, w + pw)


def make_window(sequence: FrameSequence | SequenceRecord, t: int, with_ground_truth: bool = True) -> FrameWindow:
    if isinstance(sequence, SequenceRecord):
        sequence = load_sequence(sequence, with_ground_truth=with_ground_truth)
    n = sequence.half_window
    if t - n < 0 or t + n >= len(sequence):
        raise DataError(f"frame {t} lacks {n} neighbours on each side in a {len(sequence)}-frame sequence")
    frames = sequence.frames[t - n:t + n + 1]
    for a, b in zip(frames, frames[1:]):
        if a.exposure == b.exposure:
            raise DataError(f"consecutive frames near t={t} share exposure {a.exposure}")
        if a.pixels.shape != b.pixels.shape:
            raise DataError("frames in a window differ in size")
    size = tuple(frames[0].pixels.shape[-2:])
    padded = [ExposureFrame(pad_to_multiple(f.pixels), f.exposure, f.gamma) for f in frames]
    gt = None
    if with_ground_truth and sequence.ground_truth is not None:
        gt = pad_to_multiple(sequence.ground_truth[t])
    return FrameWindow(padded, n, size, gt, t)


@dataclass(frozen=True)
class AugmentDraw:
    flip: bool = False
    rot: int = 0
    perm: tuple[int, int, int] = (0, 1, 2)
    gain: float = 1.0

    @property
    def is_identity(self):
        return not self.flip and self.rot == 0 and self.perm == (0, 1, 2) and self.gain == 1.0


def draw_augment(rng: np.random.Generator, square: bool = True,
                 gain_range: tuple[float, float] = (0.8, 1.0)) -> AugmentDraw:
    rot = int(rng.integers(4)) if square else 2 * int(rng.integers(2))
    return AugmentDraw(bool(rng.integers(2)), rot, tuple(int(i) for i in rng.permutation(3)),
                       float(rng.uniform(*gain_range)))


def _geometric(x: Tensor, draw: AugmentDraw) -> Tensor:
    if draw.flip:
        x = x.flip(-1)
    return torch.rot90(x, draw.rot, dims=(-2, -1)) if draw.rot else x


def apply_augment(window: FrameWindow, draw: AugmentDraw) -> FrameWindow:
    """Apply one geometric map and one colour change to every frame (and the ground truth).

    The gain acts on linear radiance: LDR values are re-exposed by ``gain**(1/gamma)``
    and clipped, the ground truth is scaled by ``gain``.
    """
    if draw.rot % 2 and window.frames[0].pixels.shape[-1] != window.frames[0].pixels.shape[-2]:
        raise InvalidInputError("odd 90-degree rotations need square frames")
    perm = list(draw.perm)
    frames = []
    for f in window.frames:
        x = _geometric(f.pixels, draw)[perm]
        if draw.gain != 1.0:
            x = torch.clamp(x * draw.gain ** (1.0 / f.gamma), 0.0, 1.0)
        frames.append(ExposureFrame(x.contiguous(), f.exposure, f.gamma))
    gt = window.ground_truth
    if gt is not None:
        gt = (_geometric(gt, draw)[perm] * draw.gain).contiguous()
    h, w = window.size
    size = (w, h) if draw.rot % 2 else (h, w)
    return replace(window, frames=frames, ground_truth=gt, size=size)


def augment(window: FrameWindow, rng: np.random.Generator, gain_range=(0.8, 1.0)) -> FrameWindow:
    square = window.frames[0].pixels.shape[-1] == window.frames[0].pixels.shape[-2]
    return apply_augment(window, draw_augment(rng, square, gain_range))


def crop_window(window: FrameWindow, top: int, left: int, size: int) -> FrameWindow:
    frames = [ExposureFrame(f.pixels[..., top:top + size, left:left + size], f.exposure, f.gamma)
              for f in window.frames]
    gt = window.ground_truth
    if gt is not None:
        gt = gt[..., top:top + size, left:left + size]
    return replace(window, frames=frames, ground_truth=gt, size=(size, size))


def batch_windows(windows: Sequence[FrameWindow]) -> tuple[Tensor, Tensor, Tensor | None]:
    ldr = torch.stack([w.ldr for w in windows])
    exposures = torch.stack([w.exposures for w in windows])
    gts = [w.ground_truth for w in windows]
    gt = torch.stack(gts) if all(g is not None for g in gts) else None
    return ldr, exposures, gt


@dataclass
class PairSampler:
    """Draws (window at t-1, window at t) training pairs with a shared crop and augmentation.

    The random state is the only shared mutable piece; it is advanced under a lock
    so several loader threads may call :meth:`sample` concurrently.
    """

    sequences: list[FrameSequence]
    crop_size: int | None = 256
    augment: bool = True
    gain_range: tuple[float, float] = (0.8, 1.0)
    seed: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._choices = [(s, t) for s, seq in enumerate(self.sequences)
                         for t in range(seq.half_window + 1, len(seq) - seq.half_window)]
        if not self._choices:
            raise DataError("no sequence is long enough for a (t-1, t) window pair")

    def _draw(self):
        with self._lock:
            s, t = self._choices[int(self.rng.integers(len(self._choices)))]
            h, w = self.sequences[s].frames[0].pixels.shape[-2:]
            top = left = 0
            crop = self.crop_size
            if crop is not None:
                if crop > h or crop > w:
                    raise DataError(f"crop {crop} exceeds frame size {h}x{w}")
                top = int(self.rng.integers(h - crop + 1))
                left = int(self.rng.integers(w - crop + 1))
            draw = draw_augment(self.rng, crop is not None or h == w, self.gain_range) if self.augment else AugmentDraw()
        return s, t, top, left, draw

    def sample(self) -> tuple[FrameWindow, FrameWindow]:
        s, t, top, left, draw = self._draw()
        seq = self.sequences[s]
        pair = []
        for tt in (t - 1, t):
            win = make_window(seq, tt)
            if self.crop_size is not None:
                win = crop_window(win, top, left, self.crop_size)
            pair.append(apply_augment(win, draw))
        return pair[0], pair[1]


# ---------------------------------------------------------------- image I/O

def read_frame(path: str | Path) -> Tensor:
    """Decode an 8- or 16-bit image to a ``[3, H, W]`` float32 tensor in [0, 1]."""
    import cv2

    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError(f"cannot decode image: {path}")
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DataError(f"unsupported LDR sample type {img.dtype} in {path}")
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img = img[..., :3][..., ::-1].astype(np.float32) / scale
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))


def write_frame(pixels: Tensor, path: str | Path) -> None:
    """Write a [0, 1] ``[3, H, W]`` tensor as an 8-bit image."""
    import cv2

    arr = np.round(pixels.detach().clamp(0, 1).cpu().numpy().transpose(1, 2, 0) * 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), arr[..., ::-1]):
        raise DataError(f"cannot write image: {path}")


def write_hdr(frame: Tensor, path: str | Path) -> None:
    """Write linear ``[3, H, W]`` radiance as half-float EXR (``.exr``) or Radiance RGBE (``.hdr``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = frame.detach().float().cpu().numpy().transpose(1, 2, 0)
    suffix = path.suffix.lower()
    try:
        if suffix == ".exr":
            import OpenEXR

            header = {"compression": OpenEXR.ZIP_COMPRESSION, "type": OpenEXR.scanlineimage}
            with OpenEXR.File(header, {"RGB": np.ascontiguousarray(arr.astype(np.float16))}) as f:
                f.write(str(path))
        elif suffix == ".hdr":
            import cv2

            if not cv2.imwrite(str(path), np.ascontiguousarray(arr[..., ::-1])):
                raise DataError(f"cannot write {path}")
        else:
            raise DataError(f"unsupported HDR extension {suffix!r} for {path}")
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def read_hdr(path: str | Path) -> Tensor:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"HDR file not found: {path}")
    suffix = path.suffix.lower()
    try:
        if suffix == ".exr":
            import OpenEXR

            with OpenEXR.File(str(path)) as f:
                channels = f.channels()
                if "RGB" in channels:
                    arr = channels["RGB"].pixels
                else:
                    arr = np.stack([channels[c].pixels for c in "RGB"], axis=-1)
            arr = arr.astype(np.float32)
        elif suffix == ".hdr":
            import cv2

            arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
            if arr is None:
                raise DataError(f"cannot decode {path}")
            arr = arr[..., ::-1].astype(np.float32)
        else:
            raise DataError(f"unsupported HDR extension {suffix!r} for {path}")
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


# ---------------------------------------------------------------- synthetic scenes

def smooth_texture(size: tuple[int, int], generator: torch.Generator, octaves: int = 4,
                   dtype=torch.float32) -> Tensor:
    """Band-limited random RGB texture in [0, 1], periodic so that ``roll`` translates it cleanly."""
    h, w = size
    out = torch.zeros(3, h, w, dtype=dtype)
    for k in range(octaves):
        cells = 2 ** (k + 2)
        coarse = torch.rand(3, cells, cells, generator=generator, dtype=dtype)
        tiled = coarse.repeat(1, 3, 3)[None]
        up = F.interpolate(tiled, size=(3 * h, 3 * w), mode="bicubic", align_corners=False)[0]
        out += up[:, h:2 * h, w:2 * w] / 2 ** k
    out -= out.amin(dim=(-2, -1), keepdim=True)
    out /= out.amax(dim=(-2, -1), keepdim=True).clamp_min(1e-8)
    return out


def moving_scene(num_frames: int, size: tuple[int, int], velocity: tuple[int, int] = (0, 4),
                 seed: int = 0, brightness: float = 1.0) -> list[Tensor]:
    """Clean frames of a periodic texture translating by ``velocity`` pixels per frame."""
    g = torch.Generator().manual_seed(seed)
    base = smooth_texture(size, g) * brightness
    return [torch.roll(base, shifts=(velocity[0] * i, velocity[1] * i), dims=(-2, -1)).clamp(0, 1)
            for i in range(num_frames)]
