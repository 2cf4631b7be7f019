"""Mask detector, adapter, thresholding and routing tests."""

import numpy as np
import pytest
import torch

from deobstruct.core.errors import ParameterError, ShapeError
from deobstruct.core.imaging import AlphaMask, MaskKind, SceneImage, TransparencyClass
from deobstruct.core.masks import (
    MaskAdapter,
    MaskDetectorBackend,
    UNetMaskDetector,
    adapt_mask,
    binarize,
    detect_mask,
    resolve_mask,
)
from deobstruct.core.training import l1_loss


class _FixedDetector(MaskDetectorBackend):
    name = "fixed"

    def __init__(self, alpha):
        self.alpha = np.asarray(alpha, dtype=float)
        self.calls = 0

    def predict(self, image):
        self.calls += 1
        return AlphaMask(self.alpha)


def _image(h=16, w=16, seed=0):
    return SceneImage(np.random.default_rng(seed).random((h, w, 3)))


# -- binarize -----------------------------------------------------------------

def test_binarize_ties_go_to_one():
    mask = AlphaMask(np.array([[0.49, 0.5, 0.51, 0.0]] * 8))
    out = binarize(mask, 0.5)
    assert out.kind is MaskKind.HARD
    assert out.alpha[0].tolist() == [0.0, 1.0, 1.0, 0.0]


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
def test_binarize_rejects_tau_outside_open_interval(tau):
    with pytest.raises(ParameterError):
        binarize(AlphaMask.full(8, 8, 0.3), tau)


# -- detector -----------------------------------------------------------------

def test_detector_output_shape_and_range_any_size():
    torch.manual_seed(0)
    detector = UNetMaskDetector(depth=2, base_channels=4)
    mask = detect_mask(_image(20, 28), detector)
    assert mask.size == (20, 28)
    assert mask.kind is MaskKind.SOFT
    assert 0.0 <= mask.alpha.min() and mask.alpha.max() <= 1.0



def test_detector_on_black_image_is_finite_and_bounded():
    mask = detect_mask(SceneImage.zeros(16, 16), UNetMaskDetector(depth=2, base_channels=4))
    assert np.all(np.isfinite(mask.alpha))
    assert 0.0 <= mask.alpha.min() and mask.alpha.max() <= 1.0

def test_detector_predict_restores_training_mode():
    detector = UNetMaskDetector(depth=1, base_channels=4)
    detector.train()
    detector.predict(_image())
    assert detector.training


def test_detector_rejects_bad_sizing():
    with pytest.raises(ParameterError):
        UNetMaskDetector(depth=0)


def test_detect_mask_rejects_wrong_size_backend():
    with pytest.raises(ShapeError):
        detect_mask(_image(16, 16), _FixedDetector(np.zeros((8, 8))))


# -- adapter ------------------------------------------------------------------

def test_adapter_shape_and_range():
    torch.manual_seed(0)
    adapter = MaskAdapter(blocks=2, patch=8, width=64, heads=4)
    out = adapter(torch.rand(2, 1, 16, 24))
    assert out.shape == (2, 1, 16, 24)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_adapter_rejects_indivisible_input():
    adapter = MaskAdapter()
    with pytest.raises(ShapeError):
        adapter(torch.rand(1, 1, 12, 16))


def test_adapter_padded_handles_any_size():
    adapter = MaskAdapter()
    out = adapter.forward_padded(torch.rand(1, 1, 12, 20))
    assert out.shape == (1, 1, 12, 20)


def test_adapter_starts_near_identity():
    torch.manual_seed(1)
    adapter = MaskAdapter()
    initial = AlphaMask((np.random.default_rng(0).random((16, 16)) > 0.5).astype(float))
    out = adapt_mask(initial, adapter)
    # 1 -> sigmoid(3) ~ 0.95, 0 -> sigmoid(-3) ~ 0.05, before the small feature term
    assert np.all((out.alpha >= 0.5) == (initial.alpha >= 0.5))


def test_adapt_mask_rejects_indivisible_mask():
    with pytest.raises(ShapeError):
        adapt_mask(AlphaMask.full(12, 16, 0.5), MaskAdapter())


def test_adapter_rejects_bad_width():
    with pytest.raises(ParameterError):
        MaskAdapter(width=48, patch=8)
    with pytest.raises(ParameterError):
        MaskAdapter(blocks=0)


def test_adapter_l1_gradcheck_double_precision():
    torch.manual_seed(0)
    adapter = MaskAdapter(blocks=2, patch=8, width=64, heads=4).double().eval()
    mask = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    target = torch.full((1, 1, 8, 8), 2.0, dtype=torch.float64)
    params = [p for p in adapter.parameters()]
    flat = torch.cat([p.detach().flatten() for p in params])
    rng = np.random.default_rng(0)
    sample = rng.choice(flat.numel(), size=max(1, flat.numel() // 100), replace=False)

    def loss():
        return l1_loss(adapter(mask), target)

    adapter.zero_grad()
    loss().backward()
    analytic = torch.cat([p.grad.flatten() for p in params])

    eps = 1e-6
    offsets = np.cumsum([0] + [p.numel() for p in params])
    for index in sample:
        which = int(np.searchsorted(offsets, index, side="right") - 1)
        param = params[which].data.view(-1)
        local = int(index - offsets[which])
        original = float(param[local])
        with torch.no_grad():
            param[local] = original + eps
            up = float(loss())
            param[local] = original - eps
            down = float(loss())
            param[local] = original
        numeric = (up - down) / (2 * eps)
        a = float(analytic[index])
        assert abs(a - numeric) <= 1e-4 * max(1.0, abs(a), abs(numeric))


# -- routing ------------------------------------------------------------------

def test_resolve_opaque_binarizes_and_skips_adapter():
    detector = _FixedDetector(np.full((16, 16), 0.7))
    adapter = MaskAdapter()
    called = []
    adapter.register_forward_hook(lambda *a: called.append(1))
    out = resolve_mask(_image(), TransparencyClass.OPAQUE, detector, adapter)
    assert out.kind is MaskKind.HARD
    assert np.all(out.alpha == 1.0)
    assert not called


def test_resolve_semi_runs_adapter():
    detector = _FixedDetector(np.full((16, 16), 0.3))
    adapter = MaskAdapter()
    called = []
    adapter.register_forward_hook(lambda *a: called.append(1))
    out = resolve_mask(_image(), TransparencyClass.SEMI_TRANSPARENT, detector, adapter)
    assert out.kind is MaskKind.SOFT
    assert called == [1]
    assert detector.calls == 1


def test_resolve_semi_without_adapter_keeps_soft_mask():
    detector = _FixedDetector(np.full((16, 16), 0.3))
    out = resolve_mask(_image(), TransparencyClass.SEMI_TRANSPARENT, detector, None)
    assert np.allclose(out.alpha, 0.3)


def test_resolve_override_bypasses_detector():
    detector = _FixedDetector(np.zeros((16, 16)))
    override = AlphaMask.full(16, 16, 0.9)
    out = resolve_mask(_image(), TransparencyClass.OPAQUE, detector, None, override=override)
    assert detector.calls == 0
    assert np.all(out.alpha == 1.0)


def test_resolve_override_size_mismatch():
    with pytest.raises(ShapeError):
        resolve_mask(_image(), TransparencyClass.OPAQUE, _FixedDetector(np.zeros((16, 16))), None,
                     override=AlphaMask.full(8, 8, 0.5))
