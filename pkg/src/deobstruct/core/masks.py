# deobstruct.core.masks
#
# Mask side of the pipeline: an initial mask from the obstructed image, then
# either a hard threshold (opaque obstructions) or the tunable adapter (semi-
# transparent ones).
#
#   MaskDetectorBackend - anything that turns an image into an initial mask.
#   UNetMaskDetector    - the bundled detector: a small U-Net with a sigmoid
#                         head. A segmentation service (SAM2 and friends) would
#                         be another MaskDetectorBackend subclass.
#   MaskAdapter         - entry conv + BN + ReLU over 8x8 patches, K transformer
#                         blocks on the patch tokens, pixel-shuffle back to full
#                         resolution, exit conv over [features, initial], sigmoid.
#
# resolve_mask routes on the transparency class: the adapter runs if and only
# if the class is semi-transparent.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import abc
import logging
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .errors import ParameterError, ShapeError
from .imaging import AlphaMask, MaskKind, SceneImage, TransparencyClass
from .tensors import (
    check_finite,
    crop_to,
    eval_mode,
    image_to_tensor,
    mask_to_tensor,
    pad_to_multiple,
    tensor_to_mask,
)

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.5
DETECTOR_VERSION = "unet-v1"


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"threshold tau must lie in (0, 1), got {tau}")
    return tau


# -- detector ----------------------------------------------------------------

class MaskDetectorBackend(abc.ABC):
    """Abstract source of initial occlusion masks."""

    name: str = "abstract"

    @abc.abstractmethod
    def predict(self, image: SceneImage) -> AlphaMask:
        """Soft H x W mask in [0, 1] for ``image``."""


class _DoubleConv(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int) -> None:
        super().__init__(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.ReLU(inplace=True),
        )


class UNetMaskDetector(nn.Module, MaskDetectorBackend):
    """U-Net with ``depth`` pooling stages and ``base_channels`` at full scale.

    No normalisation layers, so training and eval forwards are identical.
    """

    name = "unet"

    def __init__(self, depth: int = 3, base_channels: int = 16) -> None:
        super().__init__()
        if depth < 1 or base_channels < 1:
            raise ParameterError(f"detector needs depth >= 1 and channels >= 1, got {depth}, {base_channels}")
        self.depth = int(depth)
        self.base_channels = int(base_channels)
        self.version = DETECTOR_VERSION
        widths = [base_channels * 2**i for i in range(depth + 1)]
        self.down = nn.ModuleList()
        in_ch = 3
        for width in widths[:-1]:
            self.down.append(_DoubleConv(in_ch, width))
            in_ch = width
        self.bottleneck = _DoubleConv(widths[-2], widths[-1])
        self.up = nn.ModuleList()
        self.fuse = nn.ModuleList()
        for width in reversed(widths[:-1]):
            self.up.append(nn.ConvTranspose2d(width * 2, width, 2, stride=2))
            self.fuse.append(_DoubleConv(width * 2, width))
        self.head = nn.Conv2d(widths[0], 1, 1)

    @property
    def stride(self) -> int:
        return 2**self.depth

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-sigmoid logits for an N x 3 x H x W batch (any H, W)."""
        x, size = pad_to_multiple(x, self.stride)
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for up, fuse, skip in zip(self.up, self.fuse, reversed(skips)):
            x = fuse(torch.cat([up(x), skip], dim=1))
        return crop_to(self.head(x), size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.sigmoid(self.logits(x))
        return check_finite(out, "detector output", detector=self.version)

    def predict(self, image: SceneImage) -> AlphaMask:
        dtype = next(self.parameters()).dtype
        with eval_mode(self):
            out = self(image_to_tensor(image, dtype))
        return tensor_to_mask(out, MaskKind.SOFT)


def detect_mask(image: SceneImage, detector: MaskDetectorBackend) -> AlphaMask:
    """M̄ = D(I). Always a soft mask of the image's size."""
    mask = detector.predict(image)
    if mask.size != image.size:
        raise ShapeError(f"detector {detector.name} returned {mask.size} for a {image.size} image")
    if mask.kind is not MaskKind.SOFT:
        mask = AlphaMask(mask.alpha, MaskKind.SOFT)
    return mask


# -- adapter -----------------------------------------------------------------

class _AdapterBlock(nn.Module):
    def __init__(self, width: int, heads: int) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, 2 * width), nn.GELU(), nn.Linear(2 * width, width))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        h = self.norm1(tokens)
        tokens = tokens + self.attn(h, h, h, need_weights=False)[0]
        return tokens + self.mlp(self.norm2(tokens))


class MaskAdapter(nn.Module):
    """Tunable soft-mask adapter A(·): N x 1 x H x W in, same shape out, in [0, 1]."""

    def __init__(self, blocks: int = 2, patch: int = 8, width: int = 64, heads: int = 4) -> None:
        super().__init__()
        if blocks < 1:
            raise ParameterError(f"adapter needs at least one transformer block, got {blocks}")
        if width % (patch * patch) or width % heads:
            raise ParameterError(f"adapter width {width} must divide by patch^2 ({patch * patch}) and heads ({heads})")
        self.patch = int(patch)
        self.width = int(width)
        self.entry = nn.Sequential(
            nn.Conv2d(1, width, patch, stride=patch),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.ModuleList(_AdapterBlock(width, heads) for _ in range(blocks))
        self.exit = nn.Conv2d(width // (patch * patch) + 1, 1, 3, padding=1)
        # Start near the identity: sigmoid(6m - 3) tracks the initial mask.
        with torch.no_grad():
            self.exit.weight.mul_(0.1)
            self.exit.weight[0, -1, 1, 1] = 6.0
            self.exit.bias.fill_(-3.0)

    @property
    def stride(self) -> int:
        return self.patch

    def forward(self, mask: torch.Tensor) -> torch.Tensor:
        height, width = mask.shape[-2:]
        if height % self.patch or width % self.patch:
            raise ShapeError(f"adapter needs H and W divisible by {self.patch}, got {height}x{width}")
        feats = self.entry(mask)
        h = feats.shape[-2]
        tokens = rearrange(feats, "n c h w -> n (h w) c")
        for block in self.blocks:
            tokens = block(tokens)
        feats = rearrange(tokens, "n (h w) c -> n c h w", h=h)
        feats = F.pixel_shuffle(feats, self.patch)
        out = torch.sigmoid(self.exit(torch.cat([feats, mask], dim=1)))
        return check_finite(out, "adapter output")

    def forward_padded(self, mask: torch.Tensor) -> torch.Tensor:
        padded, size = pad_to_multiple(mask, self.patch)
        return crop_to(self(padded), size)


def adapt_mask(initial: AlphaMask, adapter: MaskAdapter) -> AlphaMask:
    """Soft mask from the adapter. Spatial dims must divide the adapter patch."""
    dtype = next(adapter.parameters()).dtype
    with eval_mode(adapter):
        out = adapter(mask_to_tensor(initial, dtype))
    return tensor_to_mask(out, MaskKind.SOFT)


# -- thresholding and routing ------------------------------------------------

def binarize(mask: AlphaMask, tau: float = DEFAULT_TAU) -> AlphaMask:
    """Values >= tau become 1, the rest 0."""
    tau = _check_tau(tau)
    return AlphaMask((mask.alpha >= tau).astype(np.float64), MaskKind.HARD)


def binarize_tensor(mask: torch.Tensor, tau: float = DEFAULT_TAU) -> torch.Tensor:
    return (mask >= _check_tau(tau)).to(mask.dtype)


def resolve_mask(
    image: SceneImage,
    mode: TransparencyClass,
    detector: MaskDetectorBackend,
    adapter: Optional[MaskAdapter],
    override: Optional[AlphaMask] = None,
    tau: float = DEFAULT_TAU,
) -> AlphaMask:
    """M̂: binarized initial mask for opaque, adapted mask for semi-transparent.

    ``override`` replaces the detector output. With ``adapter=None`` the
    semi-transparent path falls back to the soft initial mask unchanged.
    """
    mode = TransparencyClass(mode)
    if override is not None:
        if override.size != image.size:
            raise ShapeError(f"override mask is {override.size}, image is {image.size}")
        initial = override
    else:
        initial = detect_mask(image, detector)
    if mode is TransparencyClass.OPAQUE:
        return binarize(initial, tau)
    if adapter is None:
        return AlphaMask(initial.alpha, MaskKind.SOFT)
    dtype = next(adapter.parameters()).dtype
    with eval_mode(adapter):
        out = adapter.forward_padded(mask_to_tensor(initial, dtype))
    logger.debug("adapter ran on %dx%d mask", *image.size)
    return tensor_to_mask(out, MaskKind.SOFT)

