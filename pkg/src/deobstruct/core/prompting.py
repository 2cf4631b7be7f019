# deobstruct.core.prompting
#
# Instructions and the multi-modal prompt.
#
#   P = [Γ_t(T); Γ_v(I)]                     2 x d token matrix
#   s_o = cos(Γ_t(T), Γ_t(T_o)),  s_s = cos(Γ_t(T), Γ_t(T_s))
#   (p_o, p_s) = softmax(s_o, s_s);  semi-transparent iff p_s > θ
#
# A tie at p_s == θ resolves to opaque, the path that never runs the adapter.
#
# The visual encoder consumes the original image I, never the cutout.
#
# finetune_text_encoder pulls same-category instructions together with a
# temperature-scaled supervised contrastive loss over 2 + 2 sampled
# instructions per step. It works on a copy of the text encoder and never
# sees the visual encoder.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from .encoders import ImageEncoder, TextEncoder
from .errors import LoadError, NumericError, ParameterError, ShapeError, ValidationError
from .imaging import SceneImage, TransparencyClass
from .tensors import eval_mode, image_to_tensor

logger = logging.getLogger(__name__)

DEFAULT_THETA = 0.5
DEFAULT_TEMPERATURE = 0.07
OPAQUE_ANCHOR = "opaque obstacle"
SEMI_ANCHOR = "semi-transparent obstacle"


def default_corpus_path() -> Path:
    return Path(__file__).resolve().parent.parent / "assets" / "instructions.json"


# -- value types -------------------------------------------------------------

@dataclass(frozen=True)
class Instruction:
    text: str
    category: Optional[TransparencyClass] = None

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValidationError("instruction text is empty")
        if self.category is not None:
            object.__setattr__(self, "category", TransparencyClass(self.category))


class EmbeddingSource(str, Enum):
    TEXT = "text"
    VISUAL = "visual"


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray
    source: EmbeddingSource

    def __post_init__(self) -> None:
        vector = np.array(self.vector, dtype=np.float64, copy=True)
        if vector.ndim != 1 or vector.size == 0:
            raise ShapeError(f"Embedding needs a non-empty 1-D vector, got shape {vector.shape}")
        if not np.all(np.isfinite(vector)):
            raise ValidationError("Embedding contains non-finite values")
        vector.setflags(write=False)
        object.__setattr__(self, "vector", vector)
        object.__setattr__(self, "source", EmbeddingSource(self.source))

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])

    def scaled(self, factor: float) -> "Embedding":
        return Embedding(self.vector * factor, self.source)


@dataclass(frozen=True, eq=False)
class MultiModalPrompt:
    """L x d prompt tokens; row 0 text, row 1 visual under the default layout."""

    tokens: np.ndarray

    def __post_init__(self) -> None:
        tokens = np.array(self.tokens, dtype=np.float64, copy=True)
        if tokens.ndim != 2:
            raise ShapeError(f"prompt tokens must be L x d, got shape {tokens.shape}")
        if not np.all(np.isfinite(tokens)):
            raise ValidationError("prompt tokens contain non-finite values")
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def dim(self) -> int:
        return int(self.tokens.shape[1])

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """1 x L x d."""
        return torch.from_numpy(np.array(self.tokens)).to(dtype)[None]


class PromptMode(str, Enum):
    """Which prompt tokens reach the restoration network."""

    NONE = "none"
    TEXT = "text"
    VISUAL = "visual"
    BOTH = "both"


def select_tokens(tokens: torch.Tensor, mode: PromptMode) -> torch.Tensor:
    """N x 2 x d -> N x L x d with L in {0, 1, 2}."""
    mode = PromptMode(mode)
    if mode is PromptMode.BOTH:
        return tokens
    if mode is PromptMode.TEXT:
        return tokens[:, :1]
    if mode is PromptMode.VISUAL:
        return tokens[:, 1:2]
    return tokens[:, :0]


# -- corpus ------------------------------------------------------------------

@dataclass(frozen=True)
class InstructionCorpus:
    opaque: tuple[str, ...]
    semi_transparent: tuple[str, ...]

    def __post_init__(self) -> None:
        for name in ("opaque", "semi_transparent"):
            items = tuple(str(s).strip() for s in getattr(self, name))
            if any(not s for s in items):
                raise ValidationError(f"corpus category {name!r} holds an empty instruction")
            if len(set(items)) != len(items):
                dupes = sorted({s for s in items if items.count(s) > 1})
                raise ValidationError(f"corpus category {name!r} has duplicates: {dupes[:3]}")
            object.__setattr__(self, name, items)

    def texts(self, category: TransparencyClass) -> tuple[str, ...]:
        category = TransparencyClass(category)
        return self.opaque if category is TransparencyClass.OPAQUE else self.semi_transparent

    def instructions(self) -> list[Instruction]:
        return [Instruction(t, TransparencyClass.OPAQUE) for t in self.opaque] + [
            Instruction(t, TransparencyClass.SEMI_TRANSPARENT) for t in self.semi_transparent
        ]

    def sample(self, category: TransparencyClass, rng: np.random.Generator) -> Instruction:
        texts = self.texts(category)
        if not texts:
            raise ValidationError(f"corpus has no {TransparencyClass(category).value} instructions")
        return Instruction(texts[int(rng.integers(len(texts)))], TransparencyClass(category))

    def split(self, held_out: int, seed: int = 0) -> tuple["InstructionCorpus", "InstructionCorpus"]:
        """(train, held-out) with ``held_out`` instructions per category held back."""
        rng = np.random.default_rng(seed)
        parts: dict[str, tuple[list[str], list[str]]] = {}
        for name in ("opaque", "semi_transparent"):
            items = list(getattr(self, name))
            if len(items) <= held_out:
                raise ParameterError(f"cannot hold out {held_out} of {len(items)} {name} instructions")
            order = rng.permutation(len(items))
            parts[name] = ([items[i] for i in order[held_out:]], [items[i] for i in order[:held_out]])
        train = InstructionCorpus(tuple(parts["opaque"][0]), tuple(parts["semi_transparent"][0]))
        test = InstructionCorpus(tuple(parts["opaque"][1]), tuple(parts["semi_transparent"][1]))
        return train, test

    def to_dict(self) -> dict[str, list[str]]:
        return {"opaque": list(self.opaque), "semi_transparent": list(self.semi_transparent)}


def load_corpus(path: Optional[Path] = None) -> InstructionCorpus:
    """Read ``{"opaque": [...], "semi_transparent": [...]}``; default is the bundled corpus."""
    path = Path(path) if path is not None else default_corpus_path()
    if not path.is_file():
        raise LoadError(f"instruction corpus not found: {path}", path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise LoadError(f"corrupt instruction corpus {path}: {exc}", path) from exc
    if not isinstance(data, dict) or not all(isinstance(data.get(k), list) for k in ("opaque", "semi_transparent")):
        raise LoadError(f"instruction corpus {path} needs 'opaque' and 'semi_transparent' arrays", path)
    try:
        return InstructionCorpus(tuple(data["opaque"]), tuple(data["semi_transparent"]))
    except ValidationError as exc:
        raise LoadError(f"invalid instruction corpus {path}: {exc}", path) from exc


# -- embedding and prompt ----------------------------------------------------

def embed_text(instruction: Instruction, encoder: TextEncoder) -> Embedding:
    with eval_mode(encoder):
        vector = encoder.encode([instruction.text])[0]
    return Embedding(vector.double().cpu().numpy(), EmbeddingSource.TEXT)


def embed_image(image: SceneImage, encoder: ImageEncoder) -> Embedding:
    if not np.any(np.isfinite(image.pixels)):
        raise ValidationError("cannot embed an image with no finite pixels")
    dtype = next(encoder.parameters()).dtype
    with eval_mode(encoder):
        vector = encoder.encode(image_to_tensor(image, dtype))[0]
    return Embedding(vector.double().cpu().numpy(), EmbeddingSource.VISUAL)


def build_prompt(
    instruction: Instruction,
    image: SceneImage,
    text_encoder: TextEncoder,
    image_encoder: ImageEncoder,
) -> MultiModalPrompt:
    text = embed_text(instruction, text_encoder)
    visual = embed_image(image, image_encoder)
    if text.dim != visual.dim:
        raise ShapeError(f"text embeds to {text.dim} dims, image to {visual.dim}")
    return MultiModalPrompt(np.stack([text.vector, visual.vector]))


def prompt_tokens(
    texts: list[str],
    images: torch.Tensor,
    text_encoder: TextEncoder,
    image_encoder: ImageEncoder,
) -> torch.Tensor:
    """Differentiable N x 2 x d prompt batch for training (gradients reach the text tower)."""
    text = text_encoder.encode(texts)
    with torch.no_grad():
        visual = image_encoder.encode(images)
    return torch.stack([text, visual.to(text.dtype)], dim=1)


# -- transparency switch -----------------------------------------------------

def cosine_sim(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise ShapeError(f"cannot compare embeddings of {a.dim} and {b.dim} dims")
    na, nb = np.linalg.norm(a.vector), np.linalg.norm(b.vector)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a.vector, b.vector) / (na * nb), -1.0, 1.0))


def softmax2(s_o: float, s_s: float) -> tuple[float, float]:
    top = max(s_o, s_s)
    e_o, e_s = math.exp(s_o - top), math.exp(s_s - top)
    total = e_o + e_s
    return e_o / total, e_s / total


@dataclass(frozen=True)
class Anchors:
    opaque: str = OPAQUE_ANCHOR
    semi_transparent: str = SEMI_ANCHOR


@dataclass(frozen=True)
class SwitchScores:
    s_o: float
    s_s: float
    p_o: float
    p_s: float
    theta: float
    decision: TransparencyClass = field(init=False)

    def __post_init__(self) -> None:
        semi = self.p_s > self.theta
        object.__setattr__(
            self, "decision", TransparencyClass.SEMI_TRANSPARENT if semi else TransparencyClass.OPAQUE
        )


def _check_theta(theta: float) -> float:
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise ParameterError(f"switch threshold theta must lie in (0, 1), got {theta}")
    return theta


def decide_transparency(
    text: Embedding, opaque_anchor: Embedding, semi_anchor: Embedding, theta: float = DEFAULT_THETA
) -> SwitchScores:
    theta = _check_theta(theta)
    s_o = cosine_sim(text, opaque_anchor)
    s_s = cosine_sim(text, semi_anchor)
    p_o, p_s = softmax2(s_o, s_s)
    return SwitchScores(s_o, s_s, p_o, p_s, theta)


def transparency_scores(
    instruction: Instruction,
    encoder: TextEncoder,
    anchors: Anchors = Anchors(),
    theta: float = DEFAULT_THETA,
) -> SwitchScores:
    theta = _check_theta(theta)
    return decide_transparency(
        embed_text(instruction, encoder),
        embed_text(Instruction(anchors.opaque), encoder),
        embed_text(Instruction(anchors.semi_transparent), encoder),
        theta,
    )


def classify_transparency(
    instruction: Instruction,
    encoder: TextEncoder,
    anchors: Anchors = Anchors(),
    theta: float = DEFAULT_THETA,
) -> TransparencyClass:
    return transparency_scores(instruction, encoder, anchors, theta).decision


# -- contrastive fine-tuning -------------------------------------------------

def supervised_contrastive_loss(
    embeddings: torch.Tensor, labels: torch.Tensor, temperature: float = DEFAULT_TEMPERATURE
) -> torch.Tensor:
    """Mean over anchors of -log softmax mass on same-label partners, self excluded.

    The similarity matrix is symmetric, so rows and columns give the same loss.
    """
    z = F.normalize(embeddings, dim=1)
    logits = z @ z.T / temperature
    eye = torch.eye(len(labels), dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(eye, float("-inf"))
    positives = (labels[:, None] == labels[None, :]) & ~eye
    log_prob = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    log_prob = log_prob.masked_fill(~positives, 0.0)
    return -(log_prob.sum(dim=1) / positives.sum(dim=1)).mean()


def category_margin(corpus: InstructionCorpus, encoder: TextEncoder) -> float:
    """Mean intra-category cosine minus mean inter-category cosine."""
    items = corpus.instructions()
    vectors = np.stack([embed_text(i, encoder).vector for i in items])
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    sims = vectors @ vectors.T
    labels = np.array([i.category is TransparencyClass.SEMI_TRANSPARENT for i in items])
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(items), dtype=bool)
    return float(sims[same & off_diag].mean() - sims[~same].mean())


def finetune_text_encoder(
    corpus: InstructionCorpus,
    encoder: TextEncoder,
    steps: int = 200,
    temperature: float = DEFAULT_TEMPERATURE,
    seed: int = 0,
    lr: float = 5e-3,
    per_category: int = 2,
    progress: bool = False,
) -> TextEncoder:
    """Return a fine-tuned copy of ``encoder``; the argument is left untouched."""
    for category in TransparencyClass:
        if len(corpus.texts(category)) < per_category:
            raise ValidationError(
                f"fine-tuning needs >= {per_category} {category.value} instructions, "
                f"corpus has {len(corpus.texts(category))}"
            )
    if steps < 1 or temperature <= 0:
        raise ParameterError(f"need steps >= 1 and temperature > 0, got {steps}, {temperature}")

    tuned = copy.deepcopy(encoder)
    tuned.train()
    for param in tuned.parameters():
        param.requires_grad_(False)
    params = tuned.finetune_parameters()
    for param in params:
        param.requires_grad_(True)
    optimizer = torch.optim.Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    labels = torch.tensor([0] * per_category + [1] * per_category)

    for step in tqdm(range(steps), desc="finetune-text", disable=not progress):
        texts = []
        for category in (TransparencyClass.OPAQUE, TransparencyClass.SEMI_TRANSPARENT):
            pool = corpus.texts(category)
            texts += [pool[i] for i in rng.choice(len(pool), size=per_category, replace=False)]
        loss = supervised_contrastive_loss(tuned.encode(texts), labels, temperature)
        if not torch.isfinite(loss):
            raise NumericError("contrastive loss is not finite", {"step": step, "texts": texts})
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        if step % 50 == 0:
            logger.debug("finetune step %d loss %.4f", step, loss.item())

    for param in tuned.parameters():
        param.requires_grad_(True)
    tuned.eval()
    logger.info("text encoder fine-tuned for %d steps (temperature %.3g, seed %d)", steps, temperature, seed)
    return tuned
