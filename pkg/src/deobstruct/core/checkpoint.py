# deobstruct.core.checkpoint
#
# Versioned checkpoint archive: one torch.save'd dict holding
#
#   format_version   int, refused on mismatch
#   config           TrainConfig.to_dict() echo
#   step             optimizer steps taken
#   rng              numpy bit-generator state + torch CPU RNG state
#   encoders         {"kind", "text_seed"} needed to rebuild the towers
#   state            {component: state_dict} for detector, adapter, net,
#                    text_encoder, image_encoder (adapter absent if disabled)
#
# Everything in it is plain containers and tensors, so it loads with
# weights_only=True. Writes go through a temp file + os.replace.
#
# Fine-tuned text encoders are stored the same way, on their own.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import dataclasses
import io
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch

from .encoders import TextEncoder, ToyTextEncoder, build_encoders
from .errors import LoadError, ParameterError
from .storage import atomic_write_bytes
from .system import RemovalSystem, TrainConfig, build_system

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
TEXT_ENCODER_FORMAT = 1
COMPONENTS = ("detector", "adapter", "net", "text_encoder", "image_encoder")


@dataclass
class Checkpoint:
    system: RemovalSystem
    config: TrainConfig
    step: int = 0
    rng_state: dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def capture(
        cls,
        system: RemovalSystem,
        config: TrainConfig,
        step: int,
        rng: Optional[np.random.Generator] = None,
    ) -> "Checkpoint":
        rng_state: dict[str, Any] = {"torch": torch.get_rng_state()}
        if rng is not None:
            rng_state["numpy"] = rng.bit_generator.state
        return cls(system=system, config=config, step=int(step), rng_state=rng_state)

    def to_payload(self) -> dict[str, Any]:
        state = {}
        for name in COMPONENTS:
            module = getattr(self.system, name)
            if module is not None:
                state[name] = {k: v.detach().cpu() for k, v in module.state_dict().items()}
        return {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "step": self.step,
            "rng": self.rng_state,
            "encoders": {
                "kind": self.system.text_encoder.kind,
                "text_seed": int(getattr(self.system.text_encoder, "seed", self.config.seed)),
            },
            "state": state,
        }


def _to_bytes(payload: Any) -> bytes:
    buf = io.BytesIO()
    torch.save(payload, buf)
    return buf.getvalue()


def _read(path: Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"checkpoint not found: {path}", path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (RuntimeError, pickle.UnpicklingError, EOFError, OSError, ValueError) as exc:
        raise LoadError(f"unreadable checkpoint {path}: {exc}", path) from exc
    if not isinstance(payload, dict):
        raise LoadError(f"checkpoint {path} is not an archive dict", path)
    return payload


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    path = atomic_write_bytes(Path(path), _to_bytes(checkpoint.to_payload()))
    logger.info("checkpoint step %d -> %s", checkpoint.step, path)
    return path


def save_tensors(tensors: dict[str, torch.Tensor], path: Path) -> Path:
    return atomic_write_bytes(Path(path), _to_bytes(tensors))


def _build_text_encoder(kind: str, dim: int, seed: int) -> TextEncoder:
    if kind == "toy":
        return ToyTextEncoder(dim=dim, seed=seed)
    text, _ = build_encoders(kind, dim, seed)
    if text.kind != kind:
        raise LoadError(f"archive needs {kind} encoders, which are unavailable here")
    return text


def load_checkpoint(path: Path) -> Checkpoint:
    payload = _read(path)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise LoadError(f"checkpoint {path} has format {version}, this build reads {FORMAT_VERSION}", path)
    try:
        config = TrainConfig.from_dict(dict(payload["config"]))
        encoders = payload["encoders"]
        state = payload["state"]
    except (KeyError, TypeError, ParameterError) as exc:
        raise LoadError(f"corrupt checkpoint {path}: {exc}", path) from exc

    kind = str(encoders.get("kind", config.encoder))
    try:
        text = _build_text_encoder(kind, config.embed_dim, int(encoders.get("text_seed", config.seed)))
        system = build_system(dataclasses.replace(config, encoder=kind), text_encoder=text)
    except LoadError as exc:
        raise LoadError(str(exc), path) from exc
    for name in COMPONENTS:
        module = getattr(system, name)
        if module is None:
            continue
        if name not in state:
            raise LoadError(f"checkpoint {path} lacks the {name} weights", path)
        try:
            module.load_state_dict(state[name])
        except RuntimeError as exc:
            raise LoadError(f"checkpoint {path}: {name} weights do not fit the config: {exc}", path) from exc
    system.eval()
    return Checkpoint(
        system=system,
        config=config,
        step=int(payload.get("step", 0)),
        rng_state=dict(payload.get("rng", {})),
        format_version=version,
    )


def restore_rng(checkpoint: Checkpoint) -> Optional[np.random.Generator]:
    """Reinstate the torch RNG and return a numpy Generator in the saved state."""
    if "torch" in checkpoint.rng_state:
        torch.set_rng_state(checkpoint.rng_state["torch"])
    if "numpy" not in checkpoint.rng_state:
        return None
    rng = np.random.default_rng()
    rng.bit_generator.state = checkpoint.rng_state["numpy"]
    return rng


# -- standalone text encoders ------------------------------------------------

def save_text_encoder(encoder: TextEncoder, path: Path) -> Path:
    payload = {
        "format_version": TEXT_ENCODER_FORMAT,
        "kind": encoder.kind,
        "dim": int(encoder.dim),
        "seed": int(getattr(encoder, "seed", 0)),
        "state": {k: v.detach().cpu() for k, v in encoder.state_dict().items()},
    }
    return atomic_write_bytes(Path(path), _to_bytes(payload))


def load_text_encoder(path: Path) -> TextEncoder:
    payload = _read(path)
    if payload.get("format_version") != TEXT_ENCODER_FORMAT:
        raise LoadError(f"text encoder {path} has format {payload.get('format_version')}", path)
    try:
        encoder = _build_text_encoder(str(payload["kind"]), int(payload["dim"]), int(payload["seed"]))
        encoder.load_state_dict(payload["state"])
    except (KeyError, RuntimeError) as exc:
        raise LoadError(f"corrupt text encoder {path}: {exc}", path) from exc
    except LoadError as exc:
        raise LoadError(str(exc), path) from exc
    encoder.eval()
    return encoder
