# deobstruct.core.tensors
#
# The seam between the numpy value types and torch. Models see N x C x H x W
# tensors only; everything above them speaks SceneImage / AlphaMask.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import contextlib
import math
from typing import Iterator, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NumericError
from .imaging import AlphaMask, MaskKind, SceneImage


def image_to_tensor(image: SceneImage, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """SceneImage -> 1 x 3 x H x W."""
    return torch.from_numpy(np.array(image.pixels.transpose(2, 0, 1))).to(dtype)[None]


def mask_to_tensor(mask: AlphaMask, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """AlphaMask -> 1 x 1 x H x W."""
    return torch.from_numpy(np.array(mask.alpha)).to(dtype)[None, None]


def tensor_to_image(tensor: torch.Tensor) -> SceneImage:
    """First element of an N x 3 x H x W tensor, clamped to [0, 1]."""
    array = tensor.detach()[0].clamp(0.0, 1.0).to(torch.float64).cpu().numpy()
    return SceneImage(array.transpose(1, 2, 0))


def tensor_to_mask(tensor: torch.Tensor, kind: MaskKind = MaskKind.SOFT) -> AlphaMask:
    array = tensor.detach()[0, 0].clamp(0.0, 1.0).to(torch.float64).cpu().numpy()
    return AlphaMask(array, kind)


def pad_to_multiple(tensor: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad the bottom/right edges so H and W divide ``multiple``.

    Returns the padded tensor and the original (H, W) for cropping back.
    """
    height, width = tensor.shape[-2:]
    pad_h = (-height) % multiple
    pad_w = (-width) % multiple
    if pad_h or pad_w:
        mode = "reflect" if pad_h < height and pad_w < width else "replicate"
        tensor = F.pad(tensor, (0, pad_w, 0, pad_h), mode=mode)
    return tensor, (height, width)


def crop_to(tensor: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    height, width = size
    return tensor[..., :height, :width]


def stride_multiple(*strides: Optional[int]) -> int:
    """Smallest size multiple satisfying every component's stride."""
    out = 1
    for stride in strides:
        if stride:
            out = math.lcm(out, int(stride))
    return out


@contextlib.contextmanager
def seeded(seed: int) -> Iterator[None]:
    """Seed torch for the block; the caller's CPU RNG state comes back afterwards."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield


@contextlib.contextmanager
def eval_mode(*modules: nn.Module) -> Iterator[None]:
    """Run ``modules`` in evaluation mode, restoring their previous modes after."""
    previous = [m.training for m in modules]
    for m in modules:
        m.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        for m, was_training in zip(modules, previous):
            m.train(was_training)


def check_finite(tensor: torch.Tensor, what: str, **context) -> torch.Tensor:
    """Raise NumericError with tensor statistics when ``tensor`` holds NaN/inf."""
    if torch.isfinite(tensor).all():
        return tensor
    finite = tensor[torch.isfinite(tensor)]
    diagnostics = {
        "what": what,
        "shape": list(tensor.shape),
        "non_finite": int((~torch.isfinite(tensor)).sum()),
        "finite_min": float(finite.min()) if finite.numel() else None,
        "finite_max": float(finite.max()) if finite.numel() else None,
        **context,
    }
    raise NumericError(f"non-finite values in {what}", diagnostics)
