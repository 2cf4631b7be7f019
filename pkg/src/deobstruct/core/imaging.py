# deobstruct.core.imaging
#
# Image and mask value types plus the unified compositing model.
#
#     I(x) = B(x) * (1 - M(x)) + R(x) * M(x)        compose
#     Î(x) = I(x) * (1 - M(x))                       cutout
#
# Cutout attenuates masked content to zero instead of subtracting R * M:
# at inference R is unknown, and for hard masks the two agree on every
# unmasked pixel.
#
# Everything here is immutable. Arrays are copied on construction and marked
# read-only, so a SceneImage can be handed to any thread.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError, ValidationError

MIN_SIDE = 8
COMPOSE_TOLERANCE = 1e-6


class MaskKind(str, Enum):
    HARD = "hard"
    SOFT = "soft"


class TransparencyClass(str, Enum):
    OPAQUE = "opaque"
    SEMI_TRANSPARENT = "semi_transparent"


OBSTRUCTION_KINDS = ("fence", "raindrop", "flare", "stroke", "rain_streak", "snow", "custom")


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


def _check_unit_range(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{what} contains non-finite values")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ValidationError(
            f"{what} values must lie in [0, 1] (got {values.min():.6g}..{values.max():.6g})"
        )


@dataclass(frozen=True, eq=False)
class SceneImage:
    """H x W x 3 RGB image with float values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ShapeError(f"SceneImage needs H x W x 3 pixels, got shape {pixels.shape}")
        if pixels.shape[0] < MIN_SIDE or pixels.shape[1] < MIN_SIDE:
            raise ShapeError(f"SceneImage must be at least {MIN_SIDE}x{MIN_SIDE}, got {pixels.shape[:2]}")
        frozen = _frozen(pixels)
        _check_unit_range(frozen, "SceneImage")
        object.__setattr__(self, "pixels", frozen)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def size(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def zeros(cls, height: int, width: int) -> "SceneImage":
        return cls(np.zeros((height, width, 3)))

    @classmethod
    def from_uint8(cls, data: np.ndarray) -> "SceneImage":
        return cls(np.asarray(data, dtype=np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)

    def allclose(self, other: "SceneImage", atol: float = COMPOSE_TOLERANCE) -> bool:
        return self.size == other.size and bool(np.allclose(self.pixels, other.pixels, rtol=0.0, atol=atol))


@dataclass(frozen=True, eq=False)
class AlphaMask:
    """H x W per-pixel occlusion weights in [0, 1].

    A HARD mask holds only exact 0.0 and 1.0; a SOFT mask may hold anything in
    between (and may still happen to be binary).
    """

    alpha: np.ndarray
    kind: MaskKind = MaskKind.SOFT

    def __post_init__(self) -> None:
        alpha = np.asarray(self.alpha)
        if alpha.ndim != 2:
            raise ShapeError(f"AlphaMask needs an H x W array, got shape {alpha.shape}")
        frozen = _frozen(alpha)
        _check_unit_range(frozen, "AlphaMask")
        kind = MaskKind(self.kind)
        if kind is MaskKind.HARD and not np.all((frozen == 0.0) | (frozen == 1.0)):
            raise ValidationError("hard AlphaMask must contain only 0 and 1")
        object.__setattr__(self, "alpha", frozen)
        object.__setattr__(self, "kind", kind)

    @property
    def height(self) -> int:
        return int(self.alpha.shape[0])

    @property
    def width(self) -> int:
        return int(self.alpha.shape[1])

    @property
    def size(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.alpha == 0.0) | (self.alpha == 1.0)))

    @classmethod
    def full(cls, height: int, width: int, value: float, kind: MaskKind = MaskKind.SOFT) -> "AlphaMask":
        return cls(np.full((height, width), float(value)), kind)

    def coverage(self, tau: float = 0.5) -> float:
        """Fraction of pixels at or above ``tau``."""
        return float(np.mean(self.alpha >= tau))

    def flipped(self, axis: int) -> "AlphaMask":
        return AlphaMask(np.flip(self.alpha, axis=axis), self.kind)


@dataclass(frozen=True, eq=False)
class ScenePair:
    """A composite together with the layers it was composed from."""

    composite: SceneImage
    background: SceneImage
    obstruction: SceneImage
    mask_gt: AlphaMask
    obstruction_kind: str
    transparency: TransparencyClass
    seed: int = 0

    def __post_init__(self) -> None:
        sizes = {self.composite.size, self.background.size, self.obstruction.size, self.mask_gt.size}
        if len(sizes) != 1:
            raise ShapeError(f"ScenePair layers disagree in size: {sorted(sizes)}")
        if not self.obstruction_kind:
            raise ValidationError("ScenePair needs an obstruction_kind tag")
        object.__setattr__(self, "transparency", TransparencyClass(self.transparency))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFF_FFFF_FFFF_FFFF)
        expected = compose(self.background, self.obstruction, self.mask_gt)
        if not self.composite.allclose(expected):
            worst = float(np.max(np.abs(self.composite.pixels - expected.pixels)))
            raise ValidationError(f"composite does not match compose(B, R, M): max error {worst:.3g}")

    @property
    def size(self) -> tuple[int, int]:
        return self.composite.size

    def map_layers(self, fn) -> "ScenePair":
        """Apply one spatial transform to every layer. ``fn`` maps arrays to arrays."""
        background = SceneImage(fn(self.background.pixels))
        obstruction = SceneImage(fn(self.obstruction.pixels))
        mask = AlphaMask(fn(self.mask_gt.alpha), self.mask_gt.kind)
        return ScenePair(
            composite=compose(background, obstruction, mask),
            background=background,
            obstruction=obstruction,
            mask_gt=mask,
            obstruction_kind=self.obstruction_kind,
            transparency=self.transparency,
            seed=self.seed,
        )


def _require_same_size(*items) -> None:
    sizes = {item.size for item in items}
    if len(sizes) != 1:
        raise ShapeError(f"inputs disagree in size: {sorted(sizes)}")


def compose(background: SceneImage, obstruction: SceneImage, mask: AlphaMask) -> SceneImage:
    """I = B * (1 - M) + R * M, per channel."""
    _require_same_size(background, obstruction, mask)
    alpha = mask.alpha[..., None]
    out = background.pixels * (1.0 - alpha) + obstruction.pixels * alpha
    return SceneImage(np.clip(out, 0.0, 1.0))


def cutout(image: SceneImage, mask: AlphaMask) -> SceneImage:
    """Î = I * (1 - M): masked content attenuated towards zero."""
    _require_same_size(image, mask)
    return SceneImage(image.pixels * (1.0 - mask.alpha[..., None]))
