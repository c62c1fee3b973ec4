"""Text-conditioned denoising: cross-attention, multimodal sequence assembly, dynamic kernels, noise masks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .cio import CIOStack
from .errors import ConfigError

MASK_MODES = ("hard", "soft", "straight_through")
TEXT, VIDEO, GLOBAL = 0, 1, 2


class CrossAttention(nn.Module):
    """Video clips attend over words; the attended text is passed through an MLP and added back."""

    def __init__(self, dim: int, mlp_ratio: int = 2, zero_init_mlp: bool = False):
        super().__init__()
        self.dim = dim
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))
        if zero_init_mlp:
            with torch.no_grad():
                self.mlp[-1].weight.zero_()
                self.mlp[-1].bias.zero_()

    def attention(self, video, text):
        logits = self.q(video) @ self.k(text).transpose(-1, -2) / math.sqrt(self.dim)
        return torch.softmax(logits, dim=-1)

    def forward(self, video, text, return_weights: bool = False):
        weights = self.attention(video, text)
        out = video + self.mlp(weights @ self.v(text))
        return (out, weights) if return_weights else out


def cross_attend(video, text, module: CrossAttention):
    return module(video, text)


@dataclass
class MultimodalSequence:
    """Rows ordered ``[text | video | global]``; ``text_end`` and ``video_end`` are row offsets."""

    rows: torch.Tensor
    text_end: int
    video_end: int

    @property
    def text(self):
        return self.rows[..., : self.text_end, :]

    @property
    def video(self):
        return self.rows[..., self.text_end : self.video_end, :]

    @property
    def global_(self):
        return self.rows[..., self.video_end :, :]

    @property
    def num_global(self) -> int:
        return self.rows.shape[-2] - self.video_end

    def replace(self, rows=None, video=None) -> "MultimodalSequence":
        if video is not None:
            rows = torch.cat([self.text, video, self.global_], dim=-2)
        return MultimodalSequence(rows, self.text_end, self.video_end)


class SequenceAssembler(nn.Module):
    """Adds learned position and modality-type embeddings and appends learnable global tokens."""

    def __init__(self, dim: int, num_global: int = 1, max_positions: int = 512):
        super().__init__()
        self.max_positions = max_positions
        self.num_global = num_global
        self.position = nn.Parameter(torch.randn(max_positions, dim) * 0.02)
        self.modality = nn.Parameter(torch.randn(3, dim) * 0.02)
        self.tokens = nn.Parameter(torch.randn(num_global, dim) * 0.02) if num_global else None

    def forward(self, video, text) -> MultimodalSequence:
        L_t, L_v = text.shape[-2], video.shape[-2]
        total = L_t + L_v + self.num_global
        if total > self.max_positions:
            raise ConfigError(f"sequence length {total} exceeds max_positions {self.max_positions}")
        parts = [text + self.modality[TEXT], video + self.modality[VIDEO]]
        if self.num_global:
            tokens = self.tokens.expand(*video.shape[:-2], self.num_global, -1)
            parts.append(tokens + self.modality[GLOBAL])
        rows = torch.cat(parts, dim=-2) + self.position[:total]
        return MultimodalSequence(rows, L_t, L_t + L_v)


def assemble_sequence(video, text, assembler: SequenceAssembler) -> MultimodalSequence:
    return assembler(video, text)


def pool_words(words, length: int):
    """Adaptive average pooling of (..., L_t, D) word rows to (..., length, D)."""
    lead = words.shape[:-2]
    flat = words.reshape(-1, *words.shape[-2:]).transpose(-1, -2)
    pooled = F.adaptive_avg_pool1d(flat, length).transpose(-1, -2)
    return pooled.reshape(*lead, length, words.shape[-1])


class DynamicKernels(nn.Module):
    """Pooled word features -> one fully connected layer -> ``num_kernels`` pointwise kernels in R^D.

    With ``dynamic=False`` the kernels are plain learned parameters (static convolution).
    """

    def __init__(self, dim: int, pooled_len: int = 4, num_kernels: int = 8, dynamic: bool = True):
        super().__init__()
        self.dim = dim
        self.pooled_len = pooled_len
        self.num_kernels = num_kernels
        self.dynamic = dynamic
        if dynamic:
            self.fc = nn.Linear(pooled_len * dim, num_kernels * dim)
        else:
            self.static = nn.Parameter(torch.randn(num_kernels, dim) / math.sqrt(dim))

    def forward(self, words):
        if not self.dynamic:
            return self.static.expand(*words.shape[:-2], -1, -1)
        pooled = pool_words(words, self.pooled_len).flatten(-2)
        return self.fc(pooled).reshape(*words.shape[:-2], self.num_kernels, self.dim)


def dynamic_kernels(words, module: DynamicKernels):
    return module(words)


@dataclass
class DenoiseResult:
    scores: torch.Tensor  # (..., L_v) in (0, 1)
    mask: torch.Tensor  # (..., L_v) in {0, 1}
    purified: torch.Tensor  # (..., L_v, D)
    kernels: torch.Tensor | None
    guard_fired: torch.Tensor  # (...,) bool
    warmup: bool = False
    mu: float = 0.5


def threshold_mask(scores, mu: float, guard_ratio: float = 0.1):
    """``scores > mu`` per clip; rows with no kept clip keep their top ceil(guard_ratio * L_v) clips."""
    mask = (scores > mu).to(scores.dtype)
    fired = mask.sum(-1) == 0
    if fired.any():
        L_v = scores.shape[-1]
        keep = max(1, math.ceil(guard_ratio * L_v))
        # stable sort: ties go to the lower clip index
        order = torch.sort(-scores.detach(), dim=-1, stable=True).indices[..., :keep]
        guard = torch.zeros_like(mask).scatter(-1, order, 1.0)
        mask = torch.where(fired.unsqueeze(-1), guard, mask)
    return mask, fired


def apply_mask(features, scores, mask, mode: str):
    if mode == "hard":
        weight = mask
    elif mode == "soft":
        weight = scores
    elif mode == "straight_through":
        # s - s.detach() is exactly zero, so the forward value is bit-identical to hard mode
        weight = mask + (scores - scores.detach())
    else:
        raise ConfigError(f"unknown mask mode {mode!r}; expected one of {MASK_MODES}")
    return features * weight.unsqueeze(-1)


class Denoiser(nn.Module):
    """Kernel responses -> 1x1 reduction back to D (+ residual) -> one alignment score per clip."""

    def __init__(self, dim: int, num_kernels: int = 8):
        super().__init__()
        self.reduce = nn.Linear(num_kernels, dim)
        self.score = nn.Linear(dim, 1)

    def logits(self, video, kernels):
        responses = torch.einsum("...ld,...kd->...lk", video, kernels)
        refined = self.reduce(responses) + video
        return self.score(refined).squeeze(-1)

    def forward(self, video, kernels, mu: float = 0.5, mode: str = "straight_through",
                warmup: bool = False, guard_ratio: float = 0.1) -> DenoiseResult:
        scores = torch.sigmoid(self.logits(video, kernels))
        if warmup:
            mask = torch.ones_like(scores)
            fired = torch.zeros(scores.shape[:-1], dtype=torch.bool)
        else:
            mask, fired = threshold_mask(scores.detach(), mu, guard_ratio)
        purified = apply_mask(video, scores, mask, mode)
        return DenoiseResult(scores, mask, purified, kernels, fired, warmup, mu)


def denoise(video, kernels, mu: float, mode: str, module: Denoiser, **kwargs) -> DenoiseResult:
    if not 0.0 < mu < 1.0:
        raise ConfigError(f"mu must lie in (0, 1), got {mu}")
    return module(video, kernels, mu, mode, **kwargs)


@dataclass
class TCDOutput:
    sequence: MultimodalSequence  # F' = [f_t, purified f_v, f_g]
    context: MultimodalSequence  # CIO output before masking
    result: DenoiseResult
    attention: torch.Tensor | None = None


class TextConditionedDenoising(nn.Module):
    """Cross-attention, CIO context interaction and dynamic-kernel denoising.

    Switches: ``enabled=False`` skips everything but sequence assembly (scores and
    mask are all ones); ``cross_attention`` and ``dynamic`` toggle those parts;
    ``num_global=0`` drops the learnable global tokens.
    """

    def __init__(self, dim: int, depth: int = 3, state_dim: int = 8, num_kernels: int = 8,
                 pooled_len: int = 4, num_global: int = 1, max_positions: int = 512,
                 enabled: bool = True, cross_attention: bool = True, dynamic: bool = True,
                 backbone: str = "mamba", local_conv: bool = False):
        super().__init__()
        self.enabled = enabled
        self.use_cross_attention = enabled and cross_attention
        self.assembler = SequenceAssembler(dim, num_global, max_positions)
        if self.use_cross_attention:
            self.cross = CrossAttention(dim)
        if enabled:
            self.context = CIOStack(dim, depth, state_dim, backbone=backbone, local_conv=local_conv)
            self.kernels = DynamicKernels(dim, pooled_len, num_kernels, dynamic=dynamic)
            self.denoiser = Denoiser(dim, num_kernels)

    def forward(self, video, text, mu: float = 0.5, mode: str = "straight_through",
                warmup: bool = False, guard_ratio: float = 0.1) -> TCDOutput:
        attn = None
        if self.use_cross_attention:
            video, attn = self.cross(video, text, return_weights=True)
        seq = self.assembler(video, text)
        if not self.enabled:
            ones = torch.ones(video.shape[:-1], dtype=video.dtype)
            result = DenoiseResult(ones, ones, seq.video, None,
                                   torch.zeros(video.shape[:-2], dtype=torch.bool), warmup, mu)
            return TCDOutput(seq, seq, result, attn)
        ctx = seq.replace(rows=self.context(seq.rows))
        kernels = self.kernels(ctx.text)
        result = denoise(ctx.video, kernels, mu, mode, self.denoiser, warmup=warmup, guard_ratio=guard_ratio)
        return TCDOutput(ctx.replace(video=result.purified), ctx, result, attn)
