# deobstruct.core.synth
#
# Procedural scene pairs. Every generator is a pure function of its inputs and
# an explicit integer seed: each call builds its own numpy Generator, so no RNG
# state is shared between calls or threads.
#
#   synth_background   smooth colour fields + a few flat shapes + fine texture
#   synth_fence        opaque rotated bar lattice             -> hard mask
#   synth_stroke       opaque brush polylines                 -> hard mask
#   synth_soft         raindrop / flare / snow / rain_streak  -> feathered mask
#   generate_pairs     seeded batches of the above, one child seed per pair
#   ingest_pair        wraps a user-supplied (composite, background[, mask])
#
# The obstruction geometry is invented: it stands in for the external fence /
# flare / raindrop datasets and only has to exercise the same code paths.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter

from .errors import ParameterError, ShapeError
from .imaging import (
    AlphaMask,
    MaskKind,
    SceneImage,
    ScenePair,
    TransparencyClass,
    compose,
)

SOFT_KINDS = ("raindrop", "flare", "snow", "rain_streak")
HARD_KINDS = ("fence", "stroke")
SYNTH_KINDS = HARD_KINDS + SOFT_KINDS

# Peak alpha of semi-transparent layers; < 1 keeps soft masks non-binary.
SOFT_OPACITY = 0.85

RGB = tuple[float, float, float]


def _canvas(height: int, width: int) -> tuple[Image.Image, ImageDraw.ImageDraw]:
    layer = Image.new("L", (width, height), 0)
    return layer, ImageDraw.Draw(layer)


def _layer_array(layer: Image.Image) -> np.ndarray:
    return np.asarray(layer, dtype=np.float64) / 255.0


# -- backgrounds -------------------------------------------------------------

def synth_background(height: int, width: int, seed: int) -> SceneImage:
    """A clean, textured scene to occlude."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height, width)
    xx /= max(height, width)

    pixels = np.empty((height, width, 3))
    pixels[:] = rng.uniform(0.25, 0.75, size=3)
    for _ in range(4):
        fy, fx = rng.uniform(0.5, 4.0, size=2)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amplitude = rng.uniform(0.04, 0.12, size=3)
        wave = np.sin(2.0 * math.pi * (fy * yy + fx * xx) + phase)
        pixels += wave[..., None] * amplitude

    for _ in range(int(rng.integers(3, 7))):
        layer, draw = _canvas(height, width)
        x0, x1 = sorted(rng.integers(0, width, size=2))
        y0, y1 = sorted(rng.integers(0, height, size=2))
        box = (int(x0), int(y0), int(x1) + 2, int(y1) + 2)
        if rng.random() < 0.5:
            draw.ellipse(box, fill=255)
        else:
            draw.rectangle(box, fill=255)
        coverage = _layer_array(layer)[..., None] * rng.uniform(0.5, 0.9)
        pixels = pixels * (1.0 - coverage) + rng.uniform(0.05, 0.95, size=3) * coverage

    pixels += rng.normal(0.0, 0.015, size=pixels.shape)
    pixels = gaussian_filter(pixels, sigma=(0.6, 0.6, 0.0))
    return SceneImage(np.clip(pixels, 0.0, 1.0))


# -- opaque obstructions -----------------------------------------------------

def _opaque_pair(background: SceneImage, obstruction: np.ndarray, mask: np.ndarray,
                 kind: str, seed: int) -> ScenePair:
    layer = SceneImage(np.clip(obstruction, 0.0, 1.0))
    alpha = AlphaMask(mask.astype(np.float64), MaskKind.HARD)
    return ScenePair(
        composite=compose(background, layer, alpha),
        background=background,
        obstruction=layer,
        mask_gt=alpha,
        obstruction_kind=kind,
        transparency=TransparencyClass.OPAQUE,
        seed=seed,
    )


def synth_fence(
    background: SceneImage,
    bar_width: int = 2,
    spacing: int = 10,
    angle: float = 0.0,
    color: RGB = (0.36, 0.30, 0.24),
    seed: int = 0,
    noise: float = 0.03,
    crossed: bool = False,
) -> ScenePair:
    """Rotated bars of constant colour with optional per-pixel noise.

    One family of parallel bars by default; ``crossed`` adds the perpendicular
    family for a wire-mesh lattice.
    """
    if bar_width < 1:
        raise ParameterError(f"bar_width must be >= 1, got {bar_width}")
    if spacing <= bar_width:
        raise ParameterError(f"spacing ({spacing}) must exceed bar_width ({bar_width})")
    rng = np.random.default_rng(seed)
    height, width = background.size
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    theta = math.radians(angle)
    offset = rng.uniform(0.0, spacing, size=2)

    u = xx * math.cos(theta) + yy * math.sin(theta) + offset[0]
    mask = np.mod(u, spacing) < bar_width
    if crossed:
        v = -xx * math.sin(theta) + yy * math.cos(theta) + offset[1]
        mask |= np.mod(v, spacing) < bar_width

    obstruction = np.empty((height, width, 3))
    obstruction[:] = np.asarray(color, dtype=np.float64)
    if noise > 0:
        obstruction += rng.normal(0.0, noise, size=obstruction.shape)
    return _opaque_pair(background, obstruction, mask, "fence", seed)


def synth_stroke(
    background: SceneImage,
    count: int = 3,
    width: int = 5,
    seed: int = 0,
) -> ScenePair:
    """Opaque brush strokes: random polylines of a single colour each."""
    if count < 1 or width < 1:
        raise ParameterError("stroke count and width must be >= 1")
    rng = np.random.default_rng(seed)
    height, img_width = background.size
    layer, draw = _canvas(height, img_width)
    paint = Image.new("RGB", (img_width, height), (0, 0, 0))
    paint_draw = ImageDraw.Draw(paint)
    for _ in range(count):
        vertices = int(rng.integers(3, 7))
        points = [(int(rng.integers(0, img_width)), int(rng.integers(0, height))) for _ in range(vertices)]
        color = tuple(int(c) for c in rng.integers(0, 256, size=3))
        draw.line(points, fill=255, width=width, joint="curve")
        paint_draw.line(points, fill=color, width=width, joint="curve")
    mask = np.asarray(layer) > 0
    obstruction = np.asarray(paint, dtype=np.float64) / 255.0
    return _opaque_pair(background, obstruction, mask, "stroke", seed)


# -- semi-transparent obstructions -------------------------------------------

def _raindrop_layer(background: SceneImage, density: float, rng) -> tuple[np.ndarray, np.ndarray]:
    height, width = background.size
    layer, draw = _canvas(height, width)
    max_radius = max(3, min(height, width) // 10)
    for _ in range(max(1, round(density * height * width / 120))):
        cx, cy = rng.integers(0, width), rng.integers(0, height)
        rx, ry = rng.integers(2, max_radius + 1, size=2)
        draw.ellipse((int(cx - rx), int(cy - ry), int(cx + rx), int(cy + ry)), fill=255)
    blurred = gaussian_filter(background.pixels, sigma=(2.0, 2.0, 0.0))
    return _layer_array(layer), 0.5 * blurred + 0.5


def _flare_layer(background: SceneImage, density: float, rng) -> tuple[np.ndarray, np.ndarray]:
    height, width = background.size
    cy, cx = rng.uniform(0, height), rng.uniform(0, width)
    spread = (0.15 + 0.35 * density) * min(height, width)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    falloff = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * spread**2))
    tint = np.array([1.0, 0.92, 0.74]) * rng.uniform(0.9, 1.0)
    return falloff, tint * (0.7 + 0.3 * falloff[..., None])


def _snow_layer(background: SceneImage, density: float, rng) -> tuple[np.ndarray, np.ndarray]:
    height, width = background.size
    layer, draw = _canvas(height, width)
    for _ in range(max(1, round(density * height * width / 40))):
        cx, cy = rng.integers(0, width), rng.integers(0, height)
        r = int(rng.integers(0, 2))
        draw.ellipse((int(cx - r), int(cy - r), int(cx + r), int(cy + r)), fill=255)
    flecks = np.full((height, width, 3), 0.95) + rng.normal(0.0, 0.02, size=(height, width, 1))
    return _layer_array(layer), flecks


def _rain_streak_layer(background: SceneImage, density: float, rng) -> tuple[np.ndarray, np.ndarray]:
    height, width = background.size
    layer, draw = _canvas(height, width)
    slant = math.radians(rng.uniform(-20.0, 20.0))
    for _ in range(max(1, round(density * height * width / 80))):
        x0, y0 = rng.uniform(0, width), rng.uniform(0, height)
        length = rng.uniform(6.0, 16.0)
        x1, y1 = x0 + length * math.sin(slant), y0 + length * math.cos(slant)
        draw.line([(x0, y0), (x1, y1)], fill=255, width=1)
    return _layer_array(layer), np.full((height, width, 3), 0.85)


_SOFT_LAYERS = {
    "raindrop": _raindrop_layer,
    "flare": _flare_layer,
    "snow": _snow_layer,
    "rain_streak": _rain_streak_layer,
}


def synth_soft(
    background: SceneImage,
    kind: str,
    density: float = 0.3,
    feather_sigma: float = 1.5,
    seed: int = 0,
) -> ScenePair:
    """Semi-transparent obstruction with a Gaussian-feathered alpha.

    The support drawn for a given (kind, density, seed) does not depend on
    ``feather_sigma``; only the feathering does.
    """
    if kind not in _SOFT_LAYERS:
        raise ParameterError(f"unknown soft obstruction kind {kind!r}; expected one of {SOFT_KINDS}")
    if not (0.0 < density <= 1.0):
        raise ParameterError(f"density must lie in (0, 1], got {density}")
    if feather_sigma <= 0:
        raise ParameterError(f"feather_sigma must be > 0, got {feather_sigma}")
    rng = np.random.default_rng(seed)
    support, obstruction = _SOFT_LAYERS[kind](background, density, rng)
    alpha = SOFT_OPACITY * gaussian_filter(support, sigma=feather_sigma, mode="reflect")
    layer = SceneImage(np.clip(obstruction, 0.0, 1.0))
    mask = AlphaMask(np.clip(alpha, 0.0, 1.0), MaskKind.SOFT)
    return ScenePair(
        composite=compose(background, layer, mask),
        background=background,
        obstruction=layer,
        mask_gt=mask,
        obstruction_kind=kind,
        transparency=TransparencyClass.SEMI_TRANSPARENT,
        seed=seed,
    )


# -- batches -----------------------------------------------------------------

def child_seeds(seed: int, count: int) -> list[int]:
    """Independent 64-bit seeds derived from one root seed."""
    return [
        int(child.generate_state(1, dtype=np.uint64)[0])
        for child in np.random.SeedSequence(seed).spawn(count)
    ]


def generate_pair(
    kind: str,
    size: int = 64,
    seed: int = 0,
    density: Optional[float] = None,
    feather_sigma: Optional[float] = None,
) -> ScenePair:
    """One pair of ``kind`` on a fresh background, obstruction params drawn from ``seed``."""
    if kind not in SYNTH_KINDS:
        raise ParameterError(f"unknown obstruction kind {kind!r}; expected one of {SYNTH_KINDS}")
    rng = np.random.default_rng(seed)
    background = synth_background(size, size, seed)
    if kind == "fence":
        bar = int(rng.integers(2, 4))
        return synth_fence(
            background,
            bar_width=bar,
            spacing=bar + int(rng.integers(6, 11)),
            angle=float(rng.uniform(-30.0, 30.0)),
            color=tuple(float(c) for c in rng.uniform(0.1, 0.6, size=3)),
            seed=seed,
            crossed=True,
        )
    if kind == "stroke":
        return synth_stroke(background, count=int(rng.integers(2, 5)),
                            width=int(rng.integers(3, 8)), seed=seed)
    return synth_soft(
        background,
        kind,
        density=density if density is not None else float(rng.uniform(0.2, 0.5)),
        feather_sigma=feather_sigma if feather_sigma is not None else float(rng.uniform(1.0, 2.5)),
        seed=seed,
    )


def generate_pairs(
    kind: str,
    count: int,
    size: int = 64,
    seed: int = 0,
    density: Optional[float] = None,
    feather_sigma: Optional[float] = None,
) -> list[ScenePair]:
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    return [
        generate_pair(kind, size, child, density, feather_sigma)
        for child in child_seeds(seed, count)
    ]


# -- user data ---------------------------------------------------------------

def ingest_pair(
    composite: SceneImage,
    background: SceneImage,
    mask: Optional[AlphaMask] = None,
    kind: str = "custom",
    transparency: Optional[TransparencyClass] = None,
    threshold: float = 2.0 / 255.0,
) -> ScenePair:
    """Wrap a real (obstructed, clean) image pair as a ScenePair.

    Without a mask, pixels whose largest channel difference exceeds
    ``threshold`` form a hard mask and R is the composite there. With a mask,
    R is solved from I = B(1 - M) + RM and clipped. In both cases the stored
    composite is recomposed from (B, R, M), so sub-threshold and clipped
    differences are attributed to the background.
    """
    if composite.size != background.size:
        raise ShapeError(f"composite {composite.size} and background {background.size} differ in size")
    if mask is None:
        diff = np.max(np.abs(composite.pixels - background.pixels), axis=2)
        mask = AlphaMask((diff > threshold).astype(np.float64), MaskKind.HARD)
    alpha = mask.alpha[..., None]
    safe = np.where(alpha > 1e-6, alpha, 1.0)
    solved = (composite.pixels - background.pixels * (1.0 - alpha)) / safe
    obstruction = SceneImage(np.clip(np.where(alpha > 1e-6, solved, composite.pixels), 0.0, 1.0))
    if transparency is None:
        transparency = (
            TransparencyClass.OPAQUE if mask.is_binary else TransparencyClass.SEMI_TRANSPARENT
        )
    return ScenePair(
        composite=compose(background, obstruction, mask),
        background=background,
        obstruction=obstruction,
        mask_gt=mask,
        obstruction_kind=kind,
        transparency=transparency,
        seed=0,
    )
