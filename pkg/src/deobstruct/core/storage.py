# deobstruct.core.storage
#
# ScenePair <-> pair directory, and datasets as a folder of pair directories.
#
#   <pair>/composite.png     8-bit RGB
#   <pair>/background.png    8-bit RGB
#   <pair>/obstruction.png   8-bit RGB
#   <pair>/mask.png          8-bit grayscale, value v -> v / 255
#   <pair>/meta.json         schema, kind, transparency, mask kind, seed, dims
#                            [, instruction]
#
# Loading recomposes the composite from the quantised B, R and M so the
# ScenePair invariant holds exactly; the stored composite must agree with the
# recomposition to within 2/255 or the directory is rejected. Hard masks
# survive the round trip bit-exactly (0 -> 0, 1 -> 255 -> 1).
#
# Every file is written through a temp file + os.replace, and nothing written
# depends on wall-clock time, so identical pairs give identical trees.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterator, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import LoadError, ShapeError, ValidationError
from .imaging import AlphaMask, MaskKind, SceneImage, ScenePair, TransparencyClass, compose

SCHEMA_VERSION = 1
META_NAME = "meta.json"
LAYER_FILES = {
    "composite": "composite.png",
    "background": "background.png",
    "obstruction": "obstruction.png",
}
MASK_FILE = "mask.png"
RECOMPOSE_TOLERANCE = 2.0 / 255.0


# -- atomic writes -----------------------------------------------------------

def atomic_write_bytes(target: Path, data: bytes) -> Path:
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(target.parent), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, target)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return target


def atomic_write_text(target: Path, text: str) -> Path:
    return atomic_write_bytes(target, text.encode("utf-8"))


def _png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


# -- single images -----------------------------------------------------------

def save_image(image: SceneImage, path: Path) -> Path:
    return atomic_write_bytes(path, _png_bytes(image.to_uint8()))


def save_mask(mask: AlphaMask, path: Path) -> Path:
    data = np.clip(np.rint(mask.alpha * 255.0), 0, 255).astype(np.uint8)
    return atomic_write_bytes(path, _png_bytes(data))


def load_image(path: Path) -> SceneImage:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"image not found: {path}", path)
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise LoadError(f"unreadable image {path}: {exc}", path) from exc
    try:
        return SceneImage.from_uint8(data)
    except ValidationError as exc:
        raise LoadError(f"invalid image {path}: {exc}", path) from exc


def load_mask(path: Path, kind: Optional[MaskKind] = None) -> AlphaMask:
    """Grayscale PNG -> AlphaMask. ``kind=None`` infers HARD for 0/255-only files."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"mask not found: {path}", path)
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise LoadError(f"unreadable mask {path}: {exc}", path) from exc
    if kind is None:
        kind = MaskKind.HARD if np.all((data == 0.0) | (data == 1.0)) else MaskKind.SOFT
    try:
        return AlphaMask(data, kind)
    except ValidationError as exc:
        raise LoadError(f"invalid mask {path}: {exc}", path) from exc


# -- pair directories --------------------------------------------------------

def pair_meta(pair: ScenePair, instruction: Optional[str] = None) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "kind": pair.obstruction_kind,
        "transparency": pair.transparency.value,
        "mask_kind": pair.mask_gt.kind.value,
        "seed": pair.seed,
        "height": pair.size[0],
        "width": pair.size[1],
    }
    if instruction is not None:
        meta["instruction"] = instruction
    return meta


def save_pair(pair: ScenePair, directory: Path, instruction: Optional[str] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for field, name in LAYER_FILES.items():
        save_image(getattr(pair, field), directory / name)
    save_mask(pair.mask_gt, directory / MASK_FILE)
    text = json.dumps(pair_meta(pair, instruction), indent=2, sort_keys=True) + "\n"
    atomic_write_text(directory / META_NAME, text)
    return directory


def read_meta(directory: Path) -> dict[str, Any]:
    path = Path(directory) / META_NAME
    if not path.is_file():
        raise LoadError(f"missing pair metadata: {path}", path)
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise LoadError(f"corrupt pair metadata {path}: {exc}", path) from exc
    if not isinstance(meta, dict):
        raise LoadError(f"corrupt pair metadata {path}: not an object", path)
    missing = {"kind", "transparency", "seed", "height", "width"} - meta.keys()
    if missing:
        raise LoadError(f"pair metadata {path} lacks {sorted(missing)}", path)
    if meta.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise LoadError(f"unsupported pair schema {meta.get('schema')} in {path}", path)
    return meta


def load_pair(directory: Path) -> ScenePair:
    pair, _ = load_sample(directory)
    return pair


def load_sample(directory: Path) -> tuple[ScenePair, Optional[str]]:
    """Load a pair directory plus the instruction stored with it, if any."""
    directory = Path(directory)
    meta = read_meta(directory)
    dims = (int(meta["height"]), int(meta["width"]))
    layers = {field: load_image(directory / name) for field, name in LAYER_FILES.items()}
    try:
        mask_kind = MaskKind(meta.get("mask_kind", MaskKind.SOFT.value))
        transparency = TransparencyClass(meta["transparency"])
    except ValueError as exc:
        raise LoadError(f"corrupt pair metadata in {directory}: {exc}", directory) from exc
    mask = load_mask(directory / MASK_FILE, mask_kind)
    for name, item in [*layers.items(), ("mask", mask)]:
        if item.size != dims:
            raise LoadError(
                f"{name} in {directory} is {item.size[0]}x{item.size[1]}, metadata says {dims[0]}x{dims[1]}",
                directory,
            )
    recomposed = compose(layers["background"], layers["obstruction"], mask)
    drift = float(np.max(np.abs(recomposed.pixels - layers["composite"].pixels)))
    if drift > RECOMPOSE_TOLERANCE + 1e-12:
        raise LoadError(f"composite in {directory} is inconsistent with its layers (max error {drift:.4f})", directory)
    try:
        pair = ScenePair(
            composite=recomposed,
            background=layers["background"],
            obstruction=layers["obstruction"],
            mask_gt=mask,
            obstruction_kind=str(meta["kind"]),
            transparency=transparency,
            seed=int(meta["seed"]),
        )
    except (ShapeError, ValidationError) as exc:
        raise LoadError(f"invalid pair in {directory}: {exc}", directory) from exc
    instruction = meta.get("instruction")
    return pair, (str(instruction) if instruction else None)


# -- datasets ----------------------------------------------------------------

def pair_dir_name(index: int) -> str:
    return f"pair_{index:04d}"


def save_dataset(
    pairs: list[ScenePair], root: Path, instructions: Optional[list[Optional[str]]] = None
) -> list[Path]:
    root = Path(root)
    instructions = instructions or [None] * len(pairs)
    return [
        save_pair(pair, root / pair_dir_name(i), text)
        for i, (pair, text) in enumerate(zip(pairs, instructions))
    ]


def iter_pair_dirs(root: Path) -> Iterator[Path]:
    root = Path(root)
    if not root.is_dir():
        raise LoadError(f"dataset directory not found: {root}", root)
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / META_NAME).is_file():
            yield child


def load_dataset(root: Path) -> list[tuple[ScenePair, Optional[str]]]:
    samples = [load_sample(d) for d in iter_pair_dirs(root)]
    if not samples:
        raise LoadError(f"no pair directories under {root}", root)
    return samples
