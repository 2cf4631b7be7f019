# deobstruct.core.network
#
# The restoration network f(Î, M̂, P; Θ): a Restormer-style encoder-decoder.
#
#   input   Î ⊕ M̂ (4 channels) -> 3x3 embedding conv
#   stages  S levels, widths[i] channels, `blocks` transformer blocks each;
#           pixel-unshuffle down, pixel-shuffle up, 1x1 fuse of skip joins
#   block   x += MDTA(LN(x))           channel self-attention
#           x += CrossAttn(LN(x), P)   pixel queries -> prompt keys/values
#           x += GDFN(LN(x))           gated depthwise feed-forward
#   output  3x3 conv to RGB, plus Î as a global residual
#
# The cross-attention unit computes Softmax(Q K_pᵀ / λ) V_p with Q and K_p
# L2-normalised per head and λ = exp(log λ) a learnable per-head scalar
# starting at 1. With zero prompt tokens (PromptMode.NONE) or
# use_cross_attention=False the unit is skipped.
#
# forward() returns the raw output; remove() clamps to [0, 1].
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .errors import ShapeError, ValidationError
from .imaging import AlphaMask, SceneImage
from .tensors import (
    check_finite,
    crop_to,
    eval_mode,
    image_to_tensor,
    mask_to_tensor,
    pad_to_multiple,
    tensor_to_image,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RemovalNetConfig:
    widths: tuple[int, ...] = (16, 32, 64)
    blocks: int = 2
    heads: int = 2
    prompt_dim: int = 512
    ffn_expansion: float = 2.0
    use_cross_attention: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths:
            raise ValidationError("removal network needs at least one stage")
        if self.blocks < 1 or self.heads < 1 or self.prompt_dim < 1:
            raise ValidationError(
                f"blocks, heads and prompt_dim must be positive, got {self.blocks}, {self.heads}, {self.prompt_dim}"
            )
        for width in self.widths:
            if width % self.heads:
                raise ValidationError(f"stage width {width} does not divide into {self.heads} heads")
        for width in self.widths[1:]:
            if width % 4:
                raise ValidationError(f"stage width {width} must be a multiple of 4 for pixel-unshuffle")

    @property
    def stages(self) -> int:
        return len(self.widths)

    @property
    def stride(self) -> int:
        return 2 ** (self.stages - 1)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["widths"] = list(self.widths)
        return out


# -- attention primitives ----------------------------------------------------

def attention_weights(q: torch.Tensor, k: torch.Tensor, lam: torch.Tensor | float) -> torch.Tensor:
    """Softmax(Q Kᵀ / λ) over the key axis. ``lam`` broadcasts against the logits."""
    lam_t = torch.as_tensor(lam, dtype=q.dtype, device=q.device)
    if torch.any(lam_t <= 0):
        raise ValidationError("attention temperature must be positive")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    return torch.softmax(q @ k.transpose(-2, -1) / lam_t, dim=-1)


def cross_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, lam: torch.Tensor | float
) -> torch.Tensor:
    """(..., n, d) queries against (..., L, d) prompt keys/values -> (..., n, d)."""
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    return attention_weights(q, k, lam) @ v


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of an N x C x H x W map."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x.shape[-2]
        return rearrange(self.norm(rearrange(x, "b c h w -> b (h w) c")), "b (h w) c -> b c h w", h=h)


class MDTA(nn.Module):
    """Multi-Dconv head transposed attention (attention across channels)."""

    def __init__(self, channels: int, heads: int) -> None:
        super().__init__()
        self.heads = heads
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.qkv_dw = nn.Conv2d(channels * 3, channels * 3, 3, padding=1, groups=channels * 3)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x.shape[-2]
        q, k, v = self.qkv_dw(self.qkv(x)).chunk(3, dim=1)
        q, k, v = (rearrange(t, "b (head c) h w -> b head c (h w)", head=self.heads) for t in (q, k, v))
        q, k = F.normalize(q, dim=-1), F.normalize(k, dim=-1)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.temperature, dim=-1)
        out = rearrange(attn @ v, "b head c (h w) -> b (head c) h w", h=h)
        return self.proj(out)


class PromptCrossAttention(nn.Module):
    """Pixel queries attend over the prompt tokens."""

    def __init__(self, channels: int, heads: int, prompt_dim: int) -> None:
        super().__init__()
        self.heads = heads
        self.log_temperature = nn.Parameter(torch.zeros(heads, 1, 1))
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(prompt_dim, channels, bias=False)
        self.to_v = nn.Linear(prompt_dim, channels, bias=False)
        self.proj = nn.Linear(channels, channels)

    @property
    def temperature(self) -> torch.Tensor:
        return self.log_temperature.exp()

    def forward(self, x: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        h = x.shape[-2]
        tokens = rearrange(x, "b c h w -> b (h w) c")
        q = rearrange(self.to_q(tokens), "b n (head d) -> b head n d", head=self.heads)
        k = rearrange(self.to_k(prompt), "b l (head d) -> b head l d", head=self.heads)
        v = rearrange(self.to_v(prompt), "b l (head d) -> b head l d", head=self.heads)
        out = cross_attention(F.normalize(q, dim=-1), F.normalize(k, dim=-1), v, self.temperature)
        out = self.proj(rearrange(out, "b head n d -> b n (head d)"))
        return rearrange(out, "b (h w) c -> b c h w", h=h)


class GDFN(nn.Module):
    """Gated-Dconv feed-forward."""

    def __init__(self, channels: int, expansion: float) -> None:
        super().__init__()
        hidden = max(1, int(channels * expansion))
        self.expand = nn.Conv2d(channels, hidden * 2, 1)
        self.dw = nn.Conv2d(hidden * 2, hidden * 2, 3, padding=1, groups=hidden * 2)
        self.proj = nn.Conv2d(hidden, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a, b = self.dw(self.expand(x)).chunk(2, dim=1)
        return self.proj(F.gelu(a) * b)


class RestorationBlock(nn.Module):
    def __init__(self, channels: int, config: RemovalNetConfig) -> None:
        super().__init__()
        self.norm_attn = ChannelLayerNorm(channels)
        self.attn = MDTA(channels, config.heads)
        self.cross = None
        if config.use_cross_attention:
            self.norm_cross = ChannelLayerNorm(channels)
            self.cross = PromptCrossAttention(channels, config.heads, config.prompt_dim)
        self.norm_ffn = ChannelLayerNorm(channels)
        self.ffn = GDFN(channels, config.ffn_expansion)

    def forward(self, x: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm_attn(x))
        if self.cross is not None and prompt.shape[1] > 0:
            x = x + self.cross(self.norm_cross(x), prompt)
        return x + self.ffn(self.norm_ffn(x))


class _Stage(nn.Module):
    def __init__(self, channels: int, config: RemovalNetConfig) -> None:
        super().__init__()
        self.blocks = nn.ModuleList(RestorationBlock(channels, config) for _ in range(config.blocks))

    def forward(self, x: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, prompt)
        return x


class RemovalNet(nn.Module):
    def __init__(self, config: RemovalNetConfig = RemovalNetConfig()) -> None:
        super().__init__()
        self.config = config
        widths = config.widths
        self.embed = nn.Conv2d(4, widths[0], 3, padding=1)
        self.encoders = nn.ModuleList(_Stage(w, config) for w in widths[:-1])
        self.downs = nn.ModuleList(
            nn.Sequential(nn.Conv2d(w, w_next // 4, 3, padding=1), nn.PixelUnshuffle(2))
            for w, w_next in zip(widths, widths[1:])
        )
        self.bottleneck = _Stage(widths[-1], config)
        self.ups = nn.ModuleList(
            nn.Sequential(nn.Conv2d(w_next, w * 4, 3, padding=1), nn.PixelShuffle(2))
            for w, w_next in zip(widths, widths[1:])
        )
        self.fuses = nn.ModuleList(nn.Conv2d(w * 2, w, 1) for w in widths[:-1])
        self.decoders = nn.ModuleList(_Stage(w, config) for w in widths[:-1])
        self.output = nn.Conv2d(widths[0], 3, 3, padding=1)

    @property
    def stride(self) -> int:
        return self.config.stride

    def forward(self, cut: torch.Tensor, mask: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        """Raw prediction for N x 3 x H x W cutouts, N x 1 x H x W masks, N x L x d prompts."""
        if cut.shape[-2:] != mask.shape[-2:]:
            raise ShapeError(f"cutout is {tuple(cut.shape[-2:])}, mask is {tuple(mask.shape[-2:])}")
        if prompt.dim() != 3 or prompt.shape[-1] != self.config.prompt_dim:
            raise ShapeError(f"prompt must be N x L x {self.config.prompt_dim}, got {tuple(prompt.shape)}")
        cut_p, size = pad_to_multiple(cut, self.stride)
        mask_p, _ = pad_to_multiple(mask, self.stride)
        x = self.embed(torch.cat([cut_p, mask_p], dim=1))
        skips = []
        for stage, down in zip(self.encoders, self.downs):
            x = stage(x, prompt)
            skips.append(x)
            x = down(x)
        x = self.bottleneck(x, prompt)
        for i in reversed(range(len(self.decoders))):
            x = self.fuses[i](torch.cat([self.ups[i](x), skips[i]], dim=1))
            x = self.decoders[i](x, prompt)
        out = crop_to(self.output(x) + cut_p, size)
        return check_finite(out, "removal network output")


def remove(cut_image: SceneImage, mask: AlphaMask, prompt, net: RemovalNet) -> SceneImage:
    """B̂ = f(Î, M̂, P), clamped to [0, 1]. ``prompt`` is a MultiModalPrompt or N x L x d tensor."""
    if cut_image.size != mask.size:
        raise ShapeError(f"cutout is {cut_image.size}, mask is {mask.size}")
    dtype = next(net.parameters()).dtype
    tokens = prompt if isinstance(prompt, torch.Tensor) else prompt.to_tensor(dtype)
    with eval_mode(net):
        out = net(image_to_tensor(cut_image, dtype), mask_to_tensor(mask, dtype), tokens.to(dtype))
    return tensor_to_image(out)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
