# deobstruct.core.metrics
#
# Full-reference quality metrics on SceneImages, plus mask IoU.
#
#   psnr   10 log10(1 / MSE), MAX = 1, identical images -> cap (100 dB)
#   ssim   single scale, luminance only (Rec. 601 weights), 11x11 Gaussian
#          window σ = 1.5, K1 = 0.01, K2 = 0.03, L = 1, 'valid' filtering,
#          mean of the SSIM map
#
# Metrics beyond these (LPIPS, CLIP-Score) plug in through register_metric.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import abc
import math
from typing import Callable

import numpy as np
from scipy.signal import convolve2d

from .errors import ParameterError, ShapeError
from .imaging import AlphaMask, SceneImage

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA = np.array([0.299, 0.587, 0.114])


def _same_size(a, b) -> None:
    if a.size != b.size:
        raise ShapeError(f"cannot compare {a.size} with {b.size}")


def psnr(reference: SceneImage, test: SceneImage, cap: float = PSNR_CAP) -> float:
    _same_size(reference, test)
    mse = float(np.mean((reference.pixels - test.pixels) ** 2))
    if mse == 0.0:
        return float(cap)
    return min(float(cap), 10.0 * math.log10(1.0 / mse))


def luminance(image: SceneImage) -> np.ndarray:
    return image.pixels @ LUMA


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(reference: SceneImage, test: SceneImage) -> float:
    _same_size(reference, test)
    if min(reference.size) < SSIM_WINDOW:
        raise ParameterError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {reference.size}")
    x, y = luminance(reference), luminance(test)
    window = gaussian_window()

    def filt(a: np.ndarray) -> np.ndarray:
        return convolve2d(a, window, mode="valid")

    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x**2
    var_y = filt(y * y) - mu_y**2
    cov = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def mask_iou(pred: AlphaMask, gt: AlphaMask, tau: float = 0.5) -> float:
    _same_size(pred, gt)
    p, g = pred.alpha >= tau, gt.alpha >= tau
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(p & g)) / union


# -- registry ----------------------------------------------------------------

class Metric(abc.ABC):
    """A full-reference image metric."""

    name: str
    higher_is_better: bool = True

    @abc.abstractmethod
    def __call__(self, reference: SceneImage, test: SceneImage) -> float:
        ...


class FunctionMetric(Metric):
    def __init__(self, name: str, fn: Callable[[SceneImage, SceneImage], float], higher_is_better: bool = True):
        self.name = name
        self._fn = fn
        self.higher_is_better = higher_is_better

    def __call__(self, reference: SceneImage, test: SceneImage) -> float:
        return float(self._fn(reference, test))


_REGISTRY: dict[str, Metric] = {}


def register_metric(metric: Metric) -> Metric:
    _REGISTRY[metric.name] = metric
    return metric


def get_metric(name: str) -> Metric:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ParameterError(f"unknown metric {name!r}; registered: {sorted(_REGISTRY)}") from None


def metric_names() -> list[str]:
    return list(_REGISTRY)


register_metric(FunctionMetric("psnr", psnr))
register_metric(FunctionMetric("ssim", ssim))
