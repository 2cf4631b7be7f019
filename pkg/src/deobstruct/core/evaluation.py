# deobstruct.core.evaluation
#
# Batch evaluation: run the pipeline on every (pair, instruction), score the
# output against the clean background, aggregate overall and per obstruction
# kind. Reports serialise to JSON losslessly and render as a plain table.
#
# Per-image work may fan out over a thread pool; results are collected in
# input order, so the report does not depend on the worker count.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from .checkpoint import Checkpoint
from .errors import LoadError, ParameterError, ValidationError
from .imaging import ScenePair
from .metrics import get_metric, psnr
from .pipeline import Pipeline
from .prompting import Instruction, load_corpus
from .storage import atomic_write_text
from .training import assign_instructions

logger = logging.getLogger(__name__)

REPORT_SCHEMA = 1
DEFAULT_METRICS = ("psnr", "ssim")


@dataclass(frozen=True)
class ImageScore:
    name: str
    kind: str
    transparency: str
    instruction: str
    input_psnr: float
    values: dict[str, float]
    routed: Optional[str] = None


@dataclass(frozen=True)
class MetricReport:
    metrics: tuple[str, ...]
    images: tuple[ImageScore, ...]
    means: dict[str, float]
    per_kind: dict[str, dict[str, Any]]
    passthrough: bool = False
    use_gt_mask: bool = False

    @property
    def count(self) -> int:
        return len(self.images)

    @classmethod
    def from_scores(
        cls,
        scores: Sequence[ImageScore],
        metrics: Sequence[str] = DEFAULT_METRICS,
        passthrough: bool = False,
        use_gt_mask: bool = False,
    ) -> "MetricReport":
        if not scores:
            raise ValidationError("a report needs at least one scored image")
        metrics = tuple(metrics)

        def means_of(items: Sequence[ImageScore]) -> dict[str, float]:
            out = {m: float(np.mean([s.values[m] for s in items])) for m in metrics}
            out["input_psnr"] = float(np.mean([s.input_psnr for s in items]))
            return out

        kinds: dict[str, list[ImageScore]] = {}
        for score in scores:
            kinds.setdefault(score.kind, []).append(score)
        per_kind = {k: {"count": len(v), "means": means_of(v)} for k, v in sorted(kinds.items())}
        return cls(metrics, tuple(scores), means_of(scores), per_kind, passthrough, use_gt_mask)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": REPORT_SCHEMA,
            "metrics": list(self.metrics),
            "count": self.count,
            "passthrough": self.passthrough,
            "use_gt_mask": self.use_gt_mask,
            "means": dict(self.means),
            "per_kind": {k: {"count": v["count"], "means": dict(v["means"])} for k, v in self.per_kind.items()},
            "images": [
                {
                    "name": s.name,
                    "kind": s.kind,
                    "transparency": s.transparency,
                    "instruction": s.instruction,
                    "routed": s.routed,
                    "input_psnr": s.input_psnr,
                    "values": dict(s.values),
                }
                for s in self.images
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MetricReport":
        if data.get("schema") != REPORT_SCHEMA:
            raise LoadError(f"unsupported report schema {data.get('schema')}")
        try:
            images = tuple(
                ImageScore(
                    name=i["name"],
                    kind=i["kind"],
                    transparency=i["transparency"],
                    instruction=i["instruction"],
                    input_psnr=float(i["input_psnr"]),
                    values={k: float(v) for k, v in i["values"].items()},
                    routed=i.get("routed"),
                )
                for i in data["images"]
            )
            return cls(
                metrics=tuple(data["metrics"]),
                images=images,
                means={k: float(v) for k, v in data["means"].items()},
                per_kind={k: {"count": int(v["count"]), "means": dict(v["means"])} for k, v in data["per_kind"].items()},
                passthrough=bool(data.get("passthrough", False)),
                use_gt_mask=bool(data.get("use_gt_mask", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"corrupt metric report: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise LoadError(f"corrupt metric report: {exc}") from exc

    def save(self, path: Path) -> Path:
        return atomic_write_text(Path(path), self.to_json())

    def render_table(self) -> str:
        headers = ["image", "kind", "route", "input psnr", *self.metrics]
        rows = [
            [s.name, s.kind, s.routed or "-", f"{s.input_psnr:.3f}", *(f"{s.values[m]:.4f}" for m in self.metrics)]
            for s in self.images
        ]
        for kind, summary in self.per_kind.items():
            means = summary["means"]
            rows.append([f"mean[{kind}]", kind, f"n={summary['count']}", f"{means['input_psnr']:.3f}",
                         *(f"{means[m]:.4f}" for m in self.metrics)])
        rows.append(["mean", "*", f"n={self.count}", f"{self.means['input_psnr']:.3f}",
                     *(f"{self.means[m]:.4f}" for m in self.metrics)])
        widths = [max(len(str(r[i])) for r in [headers, *rows]) for i in range(len(headers))]

        def fmt(row: list[str]) -> str:
            return "  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)).rstrip()

        lines = [fmt(headers), fmt(["-" * w for w in widths]), *(fmt(r) for r in rows)]
        return "\n".join(lines) + "\n"


def evaluate(
    checkpoint: Optional[Union[Checkpoint, Path, str]],
    testset: Sequence[tuple[ScenePair, Optional[Instruction]]],
    *,
    names: Optional[Sequence[str]] = None,
    passthrough: bool = False,
    use_gt_mask: bool = False,
    workers: int = 1,
    metrics: Sequence[str] = DEFAULT_METRICS,
    seed: int = 0,
    progress: bool = False,
) -> MetricReport:
    """Score the pipeline (or, with ``passthrough``, the composite itself) against B.

    ``use_gt_mask`` feeds each pair's ground-truth mask as the override mask.
    """
    if not testset:
        raise ValidationError("evaluation needs at least one pair")
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    if checkpoint is None and not passthrough:
        raise ParameterError("a checkpoint is required unless passthrough is set")
    scorers = [get_metric(m) for m in metrics]
    names = list(names) if names is not None else [f"pair_{i:04d}" for i in range(len(testset))]
    samples = assign_instructions(testset, load_corpus(), seed)
    pipeline = None if passthrough else Pipeline.from_checkpoint(checkpoint)

    def score(index: int) -> ImageScore:
        pair, instruction = samples[index]
        routed = None
        if pipeline is None:
            output = pair.composite
        else:
            override = pair.mask_gt if use_gt_mask else None
            output, trace = pipeline.infer(pair.composite, instruction, override)
            routed = trace.transparency.value
        return ImageScore(
            name=names[index],
            kind=pair.obstruction_kind,
            transparency=pair.transparency.value,
            instruction=instruction.text,
            input_psnr=psnr(pair.background, pair.composite),
            values={s.name: s(pair.background, output) for s in scorers},
            routed=routed,
        )

    indices = range(len(samples))
    if workers == 1:
        scores = [score(i) for i in tqdm(indices, desc="eval", disable=not progress)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(tqdm(pool.map(score, indices), total=len(samples), desc="eval", disable=not progress))
    report = MetricReport.from_scores(scores, metrics, passthrough, use_gt_mask)
    logger.info("evaluated %d pairs: %s", report.count,
                ", ".join(f"{k} {v:.4f}" for k, v in report.means.items()))
    return report
