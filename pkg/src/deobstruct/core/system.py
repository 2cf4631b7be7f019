# deobstruct.core.system
#
# TrainConfig and the learnable system it describes.
#
#   TrainConfig        frozen; YAML keys are field names, unknown keys refuse.
#   RemovalSystem      Θ as one nn.Module: detector, adapter, removal network
#                      and the text / image encoders.
#   build_system       a fresh, seeded RemovalSystem for a config.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import torch
import torch.nn as nn
import yaml

from .encoders import ImageEncoder, TextEncoder, build_encoders
from .errors import LoadError, ParameterError, ShapeError
from .masks import MaskAdapter, UNetMaskDetector
from .network import RemovalNet, RemovalNetConfig
from .prompting import Anchors, PromptMode
from .tensors import seeded, stride_multiple


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    total_steps: int = 3000
    # (global step, patch size); warm-up steps count toward the thresholds
    patch_schedule: tuple[tuple[int, int], ...] = ((0, 64), (1000, 96), (2000, 128))
    flip_prob: float = 0.5
    seed: int = 0
    checkpoint_every: int = 500
    grad_accum: int = 1
    log_every: int = 50

    detector_warmup_steps: int = 500
    detector_lr: float = 1e-3
    use_adapter: bool = True
    prompt_mode: str = "both"
    use_cross_attention: bool = True
    train_text_projection: bool = True
    theta: float = 0.5
    tau: float = 0.5
    opaque_anchor: str = "opaque obstacle"
    semi_anchor: str = "semi-transparent obstacle"

    encoder: str = "toy"
    embed_dim: int = 512
    net_widths: tuple[int, ...] = (16, 32, 64)
    net_blocks: int = 2
    net_heads: int = 2
    detector_depth: int = 3
    detector_channels: int = 16
    adapter_blocks: int = 2
    adapter_patch: int = 8
    adapter_width: int = 64
    adapter_heads: int = 4

    def __post_init__(self) -> None:
        schedule = tuple((int(t), int(s)) for t, s in self.patch_schedule)
        object.__setattr__(self, "patch_schedule", schedule)
        object.__setattr__(self, "net_widths", tuple(int(w) for w in self.net_widths))
        try:
            object.__setattr__(self, "prompt_mode", PromptMode(self.prompt_mode).value)
        except ValueError as exc:
            raise ParameterError(f"unknown prompt_mode {self.prompt_mode!r}") from exc
        if not schedule:
            raise ParameterError("patch_schedule needs at least one entry")
        if schedule[0][0] != 0:
            raise ParameterError("patch_schedule must start at step 0")
        for (t0, s0), (t1, s1) in zip(schedule, schedule[1:]):
            if t1 <= t0:
                raise ParameterError(f"patch_schedule thresholds must strictly increase ({t0} then {t1})")
            if s1 < s0:
                raise ParameterError(f"patch_schedule sizes must not decrease ({s0} then {s1})")
        stride, smallest = self.stride, self.min_patch
        for _, size in schedule:
            if size <= 0 or size % stride:
                raise ParameterError(f"patch size {size} is not a positive multiple of the stride {stride}")
            if size < smallest:
                raise ParameterError(f"patch size {size} is below the minimum {smallest}")
        if self.learning_rate <= 0 or self.detector_lr <= 0:
            raise ParameterError("learning rates must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ParameterError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.total_steps < 0 or self.detector_warmup_steps < 0:
            raise ParameterError("step counts must be non-negative")
        if self.grad_accum < 1 or self.log_every < 1 or self.checkpoint_every < 0:
            raise ParameterError("grad_accum and log_every must be >= 1, checkpoint_every >= 0")
        for name in ("theta", "tau"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1)")

    @property
    def stride(self) -> int:
        return stride_multiple(
            2 ** (len(self.net_widths) - 1),
            2**self.detector_depth,
            self.adapter_patch if self.use_adapter else None,
        )

    @property
    def min_patch(self) -> int:
        """Smallest trainable patch: one stride, and at least 2x2 adapter tokens."""
        stride = self.stride
        if not self.use_adapter:
            return stride
        return -(-2 * self.adapter_patch // stride) * stride

    @property
    def anchors(self) -> Anchors:
        return Anchors(self.opaque_anchor, self.semi_anchor)

    def net_config(self) -> RemovalNetConfig:
        return RemovalNetConfig(
            widths=self.net_widths,
            blocks=self.net_blocks,
            heads=self.net_heads,
            prompt_dim=self.embed_dim,
            use_cross_attention=self.use_cross_attention,
        )

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["patch_schedule"] = [list(entry) for entry in self.patch_schedule]
        out["net_widths"] = list(self.net_widths)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown training config keys: {unknown}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ParameterError):
                raise
            raise ParameterError(f"bad training config: {exc}") from exc

    def with_overrides(self, **overrides: Any) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **overrides})

    def patch_size_at(self, step: int) -> int:
        size = self.patch_schedule[0][1]
        for threshold, scheduled in self.patch_schedule:
            if step >= threshold:
                size = scheduled
        return size

    def effective_patch_size(self, step: int, height: int, width: int) -> int:
        """Scheduled size at global ``step``, clamped to the largest stride multiple that fits."""
        fits = (min(height, width) // self.stride) * self.stride
        if fits < self.min_patch:
            raise ParameterError(
                f"{height}x{width} pair is smaller than the minimum training patch {self.min_patch}"
            )
        return min(self.patch_size_at(step), fits)


def load_train_config(path: Optional[Path] = None, **overrides: Any) -> TrainConfig:
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise LoadError(f"training config not found: {path}", path)
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise LoadError(f"corrupt training config {path}: {exc}", path) from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ParameterError(f"training config {path} must be a mapping")
        data = dict(loaded or {})
    data.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(data)


# -- the learnable system ----------------------------------------------------

class RemovalSystem(nn.Module):
    """Θ: detector, adapter, removal network and the two encoders."""

    def __init__(
        self,
        detector: UNetMaskDetector,
        adapter: Optional[MaskAdapter],
        net: RemovalNet,
        text_encoder: TextEncoder,
        image_encoder: ImageEncoder,
    ) -> None:
        super().__init__()
        self.detector = detector
        self.adapter = adapter
        self.net = net
        self.text_encoder = text_encoder
        self.image_encoder = image_encoder

    @property
    def stride(self) -> int:
        return stride_multiple(self.net.stride, self.detector.stride, self.adapter.stride if self.adapter else None)


def build_system(config: TrainConfig, text_encoder: Optional[TextEncoder] = None) -> RemovalSystem:
    """Fresh, seeded system for ``config``. ``text_encoder`` replaces the default text tower."""
    with seeded(config.seed):
        default_text, image_encoder = build_encoders(config.encoder, config.embed_dim, config.seed)
        text_encoder = text_encoder if text_encoder is not None else default_text
        if text_encoder.dim != config.embed_dim:
            raise ShapeError(f"text encoder embeds to {text_encoder.dim} dims, config says {config.embed_dim}")
        adapter = None
        if config.use_adapter:
            adapter = MaskAdapter(config.adapter_blocks, config.adapter_patch, config.adapter_width, config.adapter_heads)
        return RemovalSystem(
            detector=UNetMaskDetector(config.detector_depth, config.detector_channels),
            adapter=adapter,
            net=RemovalNet(config.net_config()),
            text_encoder=text_encoder,
            image_encoder=image_encoder,
        )


def build_optimizer(params, config: TrainConfig, lr: Optional[float] = None) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        [p for p in params if p.requires_grad],
        lr=lr if lr is not None else config.learning_rate,
        betas=(config.beta1, config.beta2),
        weight_decay=config.weight_decay,
    )


def joint_parameters(system: RemovalSystem, config: TrainConfig) -> list[nn.Parameter]:
    params = list(system.net.parameters()) + list(system.detector.parameters())
    if system.adapter is not None:
        params += list(system.adapter.parameters())
    if config.train_text_projection:
        params += system.text_encoder.projection_parameters()
    return params
