# deobstruct.core.pipeline
#
# End-to-end inference over a loaded RemovalSystem:
#
#   M̄ = D(I)                      (or the caller's override mask)
#   P_t = Γ_t(T), P_v = Γ_v(I)
#   mode = switch(T; anchors, θ)
#   M̂ = A(M̄) if semi-transparent and the adapter exists, else binarize(M̄)
#   Î = I (1 - M̂);  P = [P_t; P_v];  B̂ = f(Î, M̂, P)
#
# Every call returns an InferenceTrace with the switch scores, the routing
# decision, mask statistics, per-stage timings and process memory, so a wrong
# description shows up in the numbers rather than being corrected silently.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import psutil

from .checkpoint import Checkpoint, load_checkpoint
from .errors import ValidationError
from .imaging import AlphaMask, SceneImage, TransparencyClass, cutout
from .masks import detect_mask, resolve_mask
from .network import remove
from .prompting import Instruction, PromptMode, build_prompt, select_tokens, transparency_scores
from .system import RemovalSystem, TrainConfig

logger = logging.getLogger(__name__)


def rss_megabytes() -> float:
    return psutil.Process().memory_info().rss / (1024.0 * 1024.0)


@dataclass(frozen=True)
class InferenceTrace:
    instruction: str
    transparency: TransparencyClass
    s_o: float
    s_s: float
    p_o: float
    p_s: float
    theta: float
    adapter_ran: bool
    adapter_enabled: bool
    mask_override: bool
    mask_mean: float
    mask_coverage: float
    tau: float
    timings_ms: dict[str, float] = field(default_factory=dict)
    rss_mb: float = 0.0

    def __post_init__(self) -> None:
        semi = self.transparency is TransparencyClass.SEMI_TRANSPARENT
        if self.adapter_ran != (semi and self.adapter_enabled):
            raise ValidationError(
                f"trace routing is inconsistent: adapter_ran={self.adapter_ran}, class={self.transparency.value}"
            )

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["transparency"] = self.transparency.value
        return out


class Pipeline:
    """Inference over one RemovalSystem. Read-only; safe to share between threads."""

    def __init__(self, system: RemovalSystem, config: TrainConfig) -> None:
        self.system = system.eval()
        self.config = config

    @classmethod
    def from_checkpoint(cls, source: Union[Checkpoint, Path, str]) -> "Pipeline":
        checkpoint = source if isinstance(source, Checkpoint) else load_checkpoint(Path(source))
        return cls(checkpoint.system, checkpoint.config)

    @property
    def adapter_enabled(self) -> bool:
        return self.system.adapter is not None

    def detect(self, image: SceneImage) -> AlphaMask:
        return detect_mask(image, self.system.detector)

    def infer(
        self,
        image: SceneImage,
        instruction: Instruction,
        override_mask: Optional[AlphaMask] = None,
    ) -> tuple[SceneImage, InferenceTrace]:
        timings: dict[str, float] = {}
        clock = time.perf_counter()

        def lap(name: str) -> None:
            nonlocal clock
            now = time.perf_counter()
            timings[name] = round((now - clock) * 1000.0, 3)
            clock = now

        cfg = self.config
        scores = transparency_scores(instruction, self.system.text_encoder, cfg.anchors, cfg.theta)
        lap("switch")
        mode = scores.decision
        mask = resolve_mask(
            image, mode, self.system.detector, self.system.adapter, override=override_mask, tau=cfg.tau
        )
        lap("mask")
        prompt = build_prompt(instruction, image, self.system.text_encoder, self.system.image_encoder)
        tokens = select_tokens(prompt.to_tensor(), PromptMode(cfg.prompt_mode))
        lap("prompt")
        restored = remove(cutout(image, mask), mask, tokens, self.system.net)
        lap("remove")

        trace = InferenceTrace(
            instruction=instruction.text,
            transparency=mode,
            s_o=scores.s_o,
            s_s=scores.s_s,
            p_o=scores.p_o,
            p_s=scores.p_s,
            theta=scores.theta,
            adapter_ran=mode is TransparencyClass.SEMI_TRANSPARENT and self.adapter_enabled,
            adapter_enabled=self.adapter_enabled,
            mask_override=override_mask is not None,
            mask_mean=float(np.mean(mask.alpha)),
            mask_coverage=mask.coverage(cfg.tau),
            tau=cfg.tau,
            timings_ms=timings,
            rss_mb=round(rss_megabytes(), 2),
        )
        logger.debug("infer %r -> %s (p_s=%.4f)", instruction.text, mode.value, scores.p_s)
        return restored, trace

    def infer_sequence(
        self,
        image: SceneImage,
        steps: Sequence[tuple[Instruction, Optional[AlphaMask]]],
    ) -> tuple[SceneImage, list[InferenceTrace]]:
        """Remove several obstructions one after another, feeding each output forward."""
        if not steps:
            raise ValidationError("infer_sequence needs at least one step")
        traces = []
        for instruction, mask in steps:
            image, trace = self.infer(image, instruction, mask)
            traces.append(trace)
        return image, traces


def infer(
    image: SceneImage,
    instruction: Instruction,
    checkpoint: Union[Checkpoint, Path, str],
    override_mask: Optional[AlphaMask] = None,
) -> tuple[SceneImage, InferenceTrace]:
    return Pipeline.from_checkpoint(checkpoint).infer(image, instruction, override_mask)
