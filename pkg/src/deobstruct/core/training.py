# deobstruct.core.training
#
# The L1 objective, flip/crop augmentation and the training loop over a
# RemovalSystem. TrainConfig and the system itself live in core.system.
#
# One step (batch size 1):
#
#   sample pair -> augment -> crop to the scheduled patch
#   -> switch on the pair's instruction (classify_transparency)
#   -> M̄ = D(I); M̂ = binarize(M̄) or A(M̄)
#   -> Î = I (1 - M̂); P = [Γ_t(T); Γ_v(I)]; B̂ = f(Î, M̂, P)
#   -> loss = |B - B̂|_1 + BCE(M̄, M)
#
# The first `detector_warmup_steps` steps train the detector alone on BCE.
# Patch-schedule thresholds count global steps, warm-up included.
# The reported loss is always the L1 term (BCE during warm-up).
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import collections
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from .checkpoint import Checkpoint, save_checkpoint, save_tensors
from .encoders import TextEncoder
from .errors import NumericError, ParameterError, ShapeError
from .imaging import ScenePair, TransparencyClass
from .masks import binarize_tensor
from .prompting import (
    Instruction,
    InstructionCorpus,
    PromptMode,
    load_corpus,
    prompt_tokens,
    select_tokens,
    transparency_scores,
)
from .runlog import RunLog
from .system import (
    RemovalSystem,
    TrainConfig,
    build_optimizer,
    build_system,
    joint_parameters,
)
from .tensors import image_to_tensor, mask_to_tensor

logger = logging.getLogger(__name__)

MOVING_WINDOW = 100


# -- objective and augmentation ----------------------------------------------

def l1_loss(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-image mean |B - B̂|, averaged over the batch."""
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction {tuple(prediction.shape)} vs target {tuple(target.shape)}")
    return (prediction - target).abs().flatten(1).mean(dim=1).mean()


def l1_objective(target, prediction) -> float:
    """Mean absolute difference of two SceneImages."""
    if target.size != prediction.size:
        raise ShapeError(f"target is {target.size}, prediction is {prediction.size}")
    return float(np.mean(np.abs(target.pixels - prediction.pixels)))


def flip_pair(pair: ScenePair, horizontal: bool, vertical: bool) -> ScenePair:
    if not (horizontal or vertical):
        return pair

    def fn(array: np.ndarray) -> np.ndarray:
        if horizontal:
            array = np.flip(array, axis=1)
        if vertical:
            array = np.flip(array, axis=0)
        return array

    return pair.map_layers(fn)


def augment(pair: ScenePair, rng: np.random.Generator, flip_prob: float = 0.5) -> ScenePair:
    """Independent horizontal and vertical flips, each with ``flip_prob``."""
    draws = rng.random(2)
    return flip_pair(pair, bool(draws[0] < flip_prob), bool(draws[1] < flip_prob))


def crop_patch(pair: ScenePair, size: int, rng: np.random.Generator) -> ScenePair:
    height, width = pair.size
    if size < 1 or size > min(height, width):
        raise ParameterError(f"cannot crop {size}x{size} from a {height}x{width} pair")
    if size == height == width:
        return pair
    y = int(rng.integers(0, height - size + 1))
    x = int(rng.integers(0, width - size + 1))
    return pair.map_layers(lambda a: a[y : y + size, x : x + size])


# -- the loop ----------------------------------------------------------------

@dataclass(frozen=True)
class StepTrace:
    step: int
    phase: str  # "warmup" | "joint"
    patch_size: int
    mode: Optional[TransparencyClass]
    adapter_ran: bool
    loss: float
    pair_index: int


@dataclass
class TrainState:
    """Mutable loop state; exposed to checkpointing."""

    step: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    losses: collections.deque = field(default_factory=lambda: collections.deque(maxlen=MOVING_WINDOW))

    @property
    def moving_average(self) -> float:
        return float(np.mean(self.losses)) if self.losses else math.nan


Sample = tuple[ScenePair, Optional[Instruction]]


def assign_instructions(
    dataset: Sequence[Sample], corpus: InstructionCorpus, seed: int
) -> list[tuple[ScenePair, Instruction]]:
    """Fill missing instructions from the corpus by each pair's transparency class."""
    rng = np.random.default_rng([seed, 0x1A57])
    out = []
    for pair, instruction in dataset:
        if instruction is None:
            instruction = corpus.sample(pair.transparency, rng)
        out.append((pair, instruction))
    return out


def _dump_step(out_dir: Optional[Path], step: int, tensors: dict[str, torch.Tensor]) -> Optional[str]:
    if out_dir is None:
        return None
    path = Path(out_dir) / f"nonfinite_step{step:06d}.pt"
    save_tensors({k: v.detach().cpu() for k, v in tensors.items()}, path)
    return str(path)


def _bce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy(pred.clamp(1e-6, 1 - 1e-6), target)


def train(
    dataset: Sequence[Sample],
    config: TrainConfig,
    *,
    corpus: Optional[InstructionCorpus] = None,
    system: Optional[RemovalSystem] = None,
    text_encoder: Optional[TextEncoder] = None,
    out_dir: Optional[Path] = None,
    on_step: Optional[Callable[[StepTrace], None]] = None,
    progress: bool = False,
):
    """Run the step loop and return the final Checkpoint.

    With ``out_dir`` set, checkpoints land in ``out_dir`` every
    ``checkpoint_every`` steps (plus ``last.pt``) and logged steps are appended
    to ``out_dir/train_log.jsonl``.
    """
    if not dataset:
        raise ParameterError("training needs at least one pair")
    samples = assign_instructions(dataset, corpus or load_corpus(), config.seed)
    system = system if system is not None else build_system(config, text_encoder)
    system.train()
    system.image_encoder.requires_grad_(False)
    system.text_encoder.requires_grad_(False)
    if config.train_text_projection:
        for param in system.text_encoder.projection_parameters():
            param.requires_grad_(True)

    state = TrainState(rng=np.random.default_rng(config.seed))
    warmup_opt = build_optimizer(system.detector.parameters(), config, lr=config.detector_lr)
    joint_opt = build_optimizer(joint_parameters(system, config), config)
    mode_choice = PromptMode(config.prompt_mode)
    runlog = RunLog(Path(out_dir) / "train_log.jsonl") if out_dir is not None else None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    total = config.detector_warmup_steps + config.total_steps
    if config.detector_warmup_steps:
        logger.info("detector warm-up for %d steps", config.detector_warmup_steps)

    for step in tqdm(range(total), desc="train", disable=not progress):
        warmup = step < config.detector_warmup_steps
        optimizer = warmup_opt if warmup else joint_opt
        optimizer.zero_grad(set_to_none=True)
        reported = 0.0
        for _ in range(config.grad_accum):
            index = int(state.rng.integers(len(samples)))
            pair, instruction = samples[index]
            pair = augment(pair, state.rng, config.flip_prob)
            size = config.effective_patch_size(step, *pair.size)
            pair = crop_patch(pair, size, state.rng)
            image = image_to_tensor(pair.composite)
            target_mask = mask_to_tensor(pair.mask_gt)
            initial = system.detector(image)
            det_loss = _bce(initial, target_mask)
            mode: Optional[TransparencyClass] = None
            adapter_ran = False
            if warmup:
                loss = det_loss
                value = det_loss
            else:
                scores = transparency_scores(instruction, system.text_encoder, config.anchors, config.theta)
                mode = scores.decision
                seed_mask = initial.detach()
                if mode is TransparencyClass.OPAQUE:
                    resolved = binarize_tensor(seed_mask, config.tau)
                elif system.adapter is not None:
                    resolved = system.adapter.forward_padded(seed_mask)
                    adapter_ran = True
                else:
                    resolved = seed_mask
                cut = image * (1.0 - resolved)
                tokens = select_tokens(
                    prompt_tokens([instruction.text], image, system.text_encoder, system.image_encoder),
                    mode_choice,
                )
                prediction = system.net(cut, resolved, tokens)
                value = l1_loss(prediction, image_to_tensor(pair.background))
                loss = value + det_loss
            if not torch.isfinite(loss):
                dump = _dump_step(out_dir, step, {"image": image, "mask_gt": target_mask, "initial": initial})
                raise NumericError(
                    f"non-finite loss at step {step}",
                    {
                        "step": step,
                        "phase": "warmup" if warmup else "joint",
                        "pair_index": index,
                        "pair_seed": pair.seed,
                        "kind": pair.obstruction_kind,
                        "instruction": instruction.text,
                        "patch_size": size,
                        "loss": loss.item(),
                        "dump": dump,
                    },
                )
            (loss / config.grad_accum).backward()
            reported += value.detach().item() / config.grad_accum
        optimizer.step()
        state.step = step + 1
        if not warmup:
            state.losses.append(reported)

        trace = StepTrace(
            step=step,
            phase="warmup" if warmup else "joint",
            patch_size=size,
            mode=mode,
            adapter_ran=adapter_ran,
            loss=reported,
            pair_index=index,
        )
        if on_step is not None:
            on_step(trace)
        if step % config.log_every == 0 or step == total - 1:
            logger.info(
                "step %d/%d %s patch %d loss %.5f avg %.5f",
                step + 1, total, trace.phase, size, reported, state.moving_average,
            )
            if runlog is not None:
                runlog.append({
                    "step": step,
                    "phase": trace.phase,
                    "patch_size": size,
                    "loss": round(reported, 8),
                    "moving_average": None if math.isnan(state.moving_average) else round(state.moving_average, 8),
                })
        if out_dir is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
            snapshot = Checkpoint.capture(system, config, state.step, state.rng)
            save_checkpoint(snapshot, Path(out_dir) / f"step_{state.step:06d}.pt")

    system.eval()
    checkpoint = Checkpoint.capture(system, config, state.step, state.rng)
    if out_dir is not None:
        path = save_checkpoint(checkpoint, Path(out_dir) / "last.pt")
        logger.info("final checkpoint written to %s", path)
    return checkpoint
