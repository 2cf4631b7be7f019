# deobstruct.core.encoders
#
# Text and visual encoders behind one small interface. Both are nn.Modules so
# their weights live in the checkpoint next to everything else.
#
#   TextEncoder / ImageEncoder - abstract: encode(batch) -> N x dim tensor.
#   ToyTextEncoder             - seeded hashed bag of tokens -> linear to dim.
#   ToyImageEncoder            - four strided convs, global pool, linear to dim.
#   OpenClipEncoders           - pretrained vision-language towers via open_clip
#                                (optional extra, imported late).
#   build_encoders(name)       - picks a pair; falls back to the toy pair with a
#                                warning when open_clip is unavailable.
#
# The toy pair needs no downloads and is deterministic per seed.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import abc
import hashlib
import logging
import re

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ParameterError, ValidationError
from .tensors import check_finite

logger = logging.getLogger(__name__)

EMBED_DIM = 512
TOY_INPUT_SIZE = 64
TOY_BUCKETS = 4096
TOY_TOKEN_WIDTH = 128
ENCODER_NAMES = ("toy", "openclip")

_WORD = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")


def tokenize(text: str) -> list[str]:
    """Lower-cased words; hyphenated words also contribute their parts."""
    tokens: list[str] = []
    for word in _WORD.findall(text.lower()):
        tokens.append(word)
        if "-" in word:
            tokens.extend(part for part in word.split("-") if part)
    return tokens


class TextEncoder(nn.Module, abc.ABC):
    """Γ_t: list of strings -> N x dim."""

    dim: int
    kind: str = "abstract"

    @abc.abstractmethod
    def encode(self, texts: list[str]) -> torch.Tensor:
        ...

    @abc.abstractmethod
    def projection_parameters(self) -> list[nn.Parameter]:
        """Parameters of the projection head (trained with the removal network)."""

    def finetune_parameters(self) -> list[nn.Parameter]:
        """Parameters contrastive fine-tuning may update."""
        return list(self.parameters())


class ImageEncoder(nn.Module, abc.ABC):
    """Γ_v: N x 3 x H x W in [0, 1] -> N x dim."""

    dim: int

    @abc.abstractmethod
    def encode(self, images: torch.Tensor) -> torch.Tensor:
        ...


def _seeded_init(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("bias"):
                param.zero_()
            else:
                fan_in = param[0].numel() if param.dim() > 1 else param.numel()
                param.normal_(0.0, 1.0 / fan_in**0.5, generator=gen)


class ToyTextEncoder(TextEncoder):
    kind = "toy"

    def __init__(self, dim: int = EMBED_DIM, seed: int = 0, buckets: int = TOY_BUCKETS,
                 token_width: int = TOY_TOKEN_WIDTH) -> None:
        super().__init__()
        self.dim = int(dim)
        self.seed = int(seed)
        self.buckets = int(buckets)
        self._salt = (self.seed & 0xFFFF_FFFF_FFFF_FFFF).to_bytes(8, "little")
        self.table = nn.EmbeddingBag(buckets, token_width, mode="mean")
        self.projection = nn.Linear(token_width, dim, bias=False)
        _seeded_init(self, seed)

    def token_ids(self, text: str) -> list[int]:
        tokens = tokenize(text)
        if not tokens:
            raise ValidationError(f"instruction has no usable tokens: {text!r}")
        return [
            int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8, salt=self._salt).digest(), "little")
            % self.buckets
            for tok in tokens
        ]

    def encode(self, texts: list[str]) -> torch.Tensor:
        ids, offsets = [], []
        for text in texts:
            offsets.append(len(ids))
            ids.extend(self.token_ids(text))
        device = self.projection.weight.device
        bag = self.table(torch.tensor(ids, device=device), torch.tensor(offsets, device=device))
        return check_finite(self.projection(bag), "text embedding")

    def projection_parameters(self) -> list[nn.Parameter]:
        return [self.projection.weight]


class ToyImageEncoder(ImageEncoder):
    def __init__(self, dim: int = EMBED_DIM, seed: int = 0, input_size: int = TOY_INPUT_SIZE) -> None:
        super().__init__()
        self.dim = int(dim)
        self.input_size = int(input_size)
        widths = (3, 16, 32, 64, 128)
        layers: list[nn.Module] = []
        for in_ch, out_ch in zip(widths, widths[1:]):
            layers += [nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1), nn.ReLU(inplace=True)]
        self.features = nn.Sequential(*layers)
        self.projection = nn.Linear(widths[-1], dim)
        _seeded_init(self, seed + 1)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(images, size=(self.input_size, self.input_size), mode="bilinear", align_corners=False)
        pooled = self.features(x).mean(dim=(2, 3))
        return check_finite(self.projection(pooled), "image embedding")


# -- pretrained --------------------------------------------------------------

_CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
_CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class OpenClipEncoders:
    """Text and image towers of one open_clip model (default ViT-B-32, 512-d)."""

    def __init__(self, model_name: str = "ViT-B-32", pretrained: str = "openai") -> None:
        import open_clip  # late: optional extra

        model, _, _ = open_clip.create_model_and_transforms(model_name, pretrained=pretrained)
        tokenizer = open_clip.get_tokenizer(model_name)
        self.text = _ClipText(model, tokenizer)
        self.image = _ClipImage(model)


class _ClipText(TextEncoder):
    kind = "openclip"

    def __init__(self, model: nn.Module, tokenizer) -> None:
        super().__init__()
        self.model = model
        self._tokenizer = tokenizer
        self.dim = int(model.text_projection.shape[1])

    def encode(self, texts: list[str]) -> torch.Tensor:
        for text in texts:
            if not text.strip():
                raise ValidationError("instruction text is empty")
        tokens = self._tokenizer(texts).to(self.model.text_projection.device)
        return self.model.encode_text(tokens).float()

    def projection_parameters(self) -> list[nn.Parameter]:
        return [self.model.text_projection]

    def finetune_parameters(self) -> list[nn.Parameter]:
        return [self.model.text_projection]


class _ClipImage(ImageEncoder):
    def __init__(self, model: nn.Module) -> None:
        super().__init__()
        self.model = model
        self.dim = int(model.visual.output_dim)
        self.register_buffer("mean", torch.tensor(_CLIP_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(_CLIP_STD).view(1, 3, 1, 1), persistent=False)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        size = self.model.visual.image_size
        size = size if isinstance(size, tuple) else (size, size)
        x = F.interpolate(images.float(), size=size, mode="bilinear", align_corners=False)
        return self.model.encode_image((x - self.mean) / self.std).float()


def build_encoders(name: str = "toy", dim: int = EMBED_DIM, seed: int = 0) -> tuple[TextEncoder, ImageEncoder]:
    """Return (text, image) encoders. Unavailable pretrained models fall back to toy."""
    if name not in ENCODER_NAMES:
        raise ParameterError(f"unknown encoder {name!r}; expected one of {ENCODER_NAMES}")
    if name == "openclip":
        try:
            clip = OpenClipEncoders()
        except Exception as exc:  # ImportError, download or hub failures
            logger.warning("open_clip encoders unavailable (%s); using toy encoders", exc)
        else:
            if clip.text.dim != dim:
                raise ParameterError(f"open_clip embeds to {clip.text.dim} dims, config asks for {dim}")
            return clip.text, clip.image
    return ToyTextEncoder(dim=dim, seed=seed), ToyImageEncoder(dim=dim, seed=seed)
