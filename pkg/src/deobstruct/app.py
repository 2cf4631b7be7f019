# deobstruct.app
#
# Command-line bootstrap. One subcommand per pipeline stage:
#
#   synth          procedural pair directories
#   ingest         wrap user (composite, background[, mask]) images as pairs
#   train          fit a RemovalSystem; every TrainConfig field is a flag
#   finetune-text  contrastive fine-tuning of the toy text encoder
#   detect-mask    initial mask only
#   remove         full inference, writes B̂ plus a trace sidecar
#   eval           MetricReport over a pair dataset
#   selftest       environment report
#
# Logging goes to stderr (level from --log-level or DEOBSTRUCT_LOG), results
# to files and stdout. Failures print one JSON line on stderr:
#   {"error": "<class>", "message": "...", "path": "..."}
# and exit 2 for expected errors (DeobstructError, OSError), 1 otherwise.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
from pathlib import Path
from typing import Any, NoReturn, Optional, Sequence

import numpy as np
import psutil
import torch
import yaml

from . import __version__
from .core import checkpoint as ckpt_io
from .core import storage
from .core.errors import DeobstructError, LoadError, ParameterError
from .core.evaluation import evaluate
from .core.imaging import TransparencyClass
from .core.masks import detect_mask
from .core.pipeline import Pipeline
from .core.prompting import (
    Instruction,
    category_margin,
    default_corpus_path,
    finetune_text_encoder,
    load_corpus,
)
from .core.encoders import ToyTextEncoder
from .core.synth import SYNTH_KINDS, generate_pairs, ingest_pair
from .core.system import TrainConfig, load_train_config
from .core.training import train

logger = logging.getLogger("deobstruct")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def home_dir() -> Path:
    return Path(os.environ.get("DEOBSTRUCT_HOME") or Path.home() / ".deobstruct")


def default_checkpoint() -> Path:
    return home_dir() / "checkpoints" / "last.pt"


def _yaml_value(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise argparse.ArgumentTypeError(f"not a YAML value: {text!r}") from exc


def _print_json(data: Any) -> None:
    sys.stdout.write(json.dumps(data, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    pairs = generate_pairs(args.kind, args.count, args.size, args.seed, args.density, args.sigma)
    corpus = load_corpus()
    rng = np.random.default_rng([args.seed, 0x5EED])
    instructions = [corpus.sample(p.transparency, rng).text for p in pairs]
    paths = storage.save_dataset(pairs, args.out, instructions)
    _print_json({"written": len(paths), "out": str(args.out), "kind": args.kind})
    return 0


def _images_in(directory: Path) -> dict[str, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"directory not found: {directory}", directory)
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def cmd_ingest(args: argparse.Namespace) -> int:
    composites = _images_in(args.composite_dir)
    backgrounds = _images_in(args.background_dir)
    masks = _images_in(args.mask_dir) if args.mask_dir else {}
    if not composites:
        raise LoadError(f"no images in {args.composite_dir}", args.composite_dir)
    transparency = TransparencyClass(args.transparency) if args.transparency else None
    pairs = []
    for stem, path in composites.items():
        if stem not in backgrounds:
            raise LoadError(f"no background image matching {path.name}", Path(args.background_dir) / path.name)
        if args.mask_dir and stem not in masks:
            raise LoadError(f"no mask image matching {path.name}", Path(args.mask_dir) / path.name)
        mask = storage.load_mask(masks[stem]) if args.mask_dir else None
        pairs.append(ingest_pair(
            storage.load_image(path), storage.load_image(backgrounds[stem]),
            mask=mask, kind=args.kind, transparency=transparency,
        ))
    paths = storage.save_dataset(pairs, args.out)
    _print_json({"written": len(paths), "out": str(args.out)})
    return 0


def _load_samples(data: Path) -> list[tuple[Any, Optional[Instruction]]]:
    return [
        (pair, Instruction(text) if text else None)
        for pair, text in storage.load_dataset(data)
    ]


def cmd_train(args: argparse.Namespace) -> int:
    overrides = {
        f.name: getattr(args, f"cfg_{f.name}")
        for f in dataclasses.fields(TrainConfig)
        if getattr(args, f"cfg_{f.name}") is not None
    }
    config = load_train_config(args.config, **overrides)
    text_encoder = ckpt_io.load_text_encoder(args.text_encoder) if args.text_encoder else None
    out = Path(args.out) if args.out else default_checkpoint().parent
    checkpoint = train(
        _load_samples(args.data), config, text_encoder=text_encoder, out_dir=out, progress=args.progress
    )
    _print_json({"step": checkpoint.step, "checkpoint": str(out / "last.pt")})
    return 0


def cmd_finetune_text(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    base = ToyTextEncoder(dim=args.dim, seed=args.seed)
    before = category_margin(corpus, base)
    tuned = finetune_text_encoder(
        corpus, base, steps=args.steps, temperature=args.temperature, seed=args.seed, progress=args.progress
    )
    ckpt_io.save_text_encoder(tuned, args.out)
    _print_json({
        "out": str(args.out),
        "steps": args.steps,
        "margin_before": round(before, 6),
        "margin_after": round(category_margin(corpus, tuned), 6),
    })
    return 0


def cmd_detect_mask(args: argparse.Namespace) -> int:
    pipeline = Pipeline.from_checkpoint(args.ckpt)
    mask = detect_mask(storage.load_image(args.image), pipeline.system.detector)
    storage.save_mask(mask, args.out)
    _print_json({"out": str(args.out), "mean": round(float(mask.alpha.mean()), 6)})
    return 0


def trace_path(out: Path) -> Path:
    return Path(out).with_name(Path(out).stem + ".trace.json")


def cmd_remove(args: argparse.Namespace) -> int:
    image = storage.load_image(args.image)
    mask = storage.load_mask(args.mask) if args.mask else None
    pipeline = Pipeline.from_checkpoint(args.ckpt)
    restored, trace = pipeline.infer(image, Instruction(args.instruction), mask)
    storage.save_image(restored, args.out)
    record = trace.to_dict()
    if not args.timings:
        record.pop("timings_ms")
        record.pop("rss_mb")
    storage.atomic_write_text(trace_path(args.out), json.dumps(record, indent=2, sort_keys=True) + "\n")
    _print_json({"out": str(args.out), "transparency": trace.transparency.value, "adapter_ran": trace.adapter_ran})
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    dirs = list(storage.iter_pair_dirs(args.data))
    samples = _load_samples(args.data)
    report = evaluate(
        None if args.passthrough else args.ckpt,
        samples,
        names=[d.name for d in dirs],
        passthrough=args.passthrough,
        use_gt_mask=args.gt_mask,
        workers=args.workers,
        progress=args.progress,
    )
    report.save(args.report_path)
    sys.stdout.write(report.render_table())
    return 0


def selftest_report() -> dict[str, Any]:
    try:
        import open_clip  # noqa: F401
        clip = True
    except ImportError:
        clip = False
    try:
        corpus = load_corpus()
        corpus_sizes = {"opaque": len(corpus.opaque), "semi_transparent": len(corpus.semi_transparent)}
    except DeobstructError as exc:
        corpus_sizes = {"error": str(exc)}
    return {
        "deobstruct": __version__,
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "torch_threads": torch.get_num_threads(),
        "rss_mb": round(psutil.Process().memory_info().rss / (1024.0 * 1024.0), 2),
        "open_clip": clip,
        "corpus": str(default_corpus_path()),
        "corpus_sizes": corpus_sizes,
        "default_checkpoint": str(default_checkpoint()),
        "default_checkpoint_exists": default_checkpoint().is_file(),
    }


def cmd_selftest(args: argparse.Namespace) -> int:
    _print_json(selftest_report())
    return 0


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors surface as ParameterError so main() reports them in one line."""

    def error(self, message: str) -> NoReturn:
        raise ParameterError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deobstruct", description="Instruction-driven obstruction removal.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING ... (default $DEOBSTRUCT_LOG or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write procedural pair directories")
    p.add_argument("--kind", required=True, choices=SYNTH_KINDS)
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--density", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="turn user image pairs into pair directories")
    p.add_argument("--composite-dir", required=True, type=Path)
    p.add_argument("--background-dir", required=True, type=Path)
    p.add_argument("--mask-dir", type=Path, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--kind", default="custom")
    p.add_argument("--transparency", choices=[t.value for t in TransparencyClass], default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train detector, adapter and removal network")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None, help="default: $DEOBSTRUCT_HOME/checkpoints")
    p.add_argument("--text-encoder", type=Path, default=None, help="fine-tuned text encoder file")
    p.add_argument("--progress", action="store_true")
    for f in dataclasses.fields(TrainConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=_yaml_value, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune-text", help="contrastively fine-tune the text encoder")
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.07)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_finetune_text)

    p = sub.add_parser("detect-mask", help="write the detector's initial mask")
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--ckpt", type=Path, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_detect_mask)

    p = sub.add_parser("remove", help="remove an obstruction described by an instruction")
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--instruction", required=True)
    p.add_argument("--ckpt", type=Path, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--mask", type=Path, default=None, help="manual mask replacing the detector output")
    p.add_argument("--timings", action="store_true", help="include timings and memory in the trace sidecar")
    p.set_defaults(func=cmd_remove)

    p = sub.add_parser("eval", help="score a checkpoint on a pair dataset")
    p.add_argument("--ckpt", type=Path, default=None)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--report-path", required=True, type=Path)
    p.add_argument("--passthrough", action="store_true", help="score the composite itself")
    p.add_argument("--gt-mask", action="store_true", help="use ground-truth masks as overrides")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="report versions, memory and defaults")
    p.set_defaults(func=cmd_selftest)
    return parser


def _error_line(exc: BaseException) -> str:
    path = getattr(exc, "path", None) or getattr(exc, "filename", None)
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "path": str(path) if path else None})


def configure_logging(level: Optional[str]) -> None:
    name = (level or os.environ.get("DEOBSTRUCT_LOG") or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ParameterError(f"unknown log level {name!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger().setLevel(numeric)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.log_level)
        for name in ("ckpt",):
            if hasattr(args, name) and getattr(args, name) is None:
                setattr(args, name, default_checkpoint())
        return int(args.func(args))
    except (DeobstructError, OSError) as exc:
        sys.stderr.write(_error_line(exc) + "\n")
        return 2
    except Exception as exc:  # last line of defence for the one-line contract
        logger.debug("unexpected failure", exc_info=True)
        sys.stderr.write(_error_line(exc) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
