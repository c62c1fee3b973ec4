"""The full denoise-then-retrieve network, training targets and loss assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .data import clip_membership
from .decoder import Decoder, HeadOutputs
from .losses import (
    LossBreakdown,
    boundary_loss,
    classification_loss,
    contrastive_losses,
    global_loss,
)
from .tcd import TCDOutput, TextConditionedDenoising
from .trf import QueryDistiller, semantic_consistency_loss, sentence_embedding


class FeedForward(nn.Module):
    """Projection of frozen-backbone features to the model width."""

    def __init__(self, in_dim: int, dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.LayerNorm(in_dim), nn.Linear(in_dim, dim), nn.GELU(), nn.Linear(dim, dim))

    def forward(self, x):
        return self.net(x)


@dataclass
class ForwardOutput:
    video: torch.Tensor  # projected clips (B, L_v, D)
    text: torch.Tensor  # projected words (B, L_t, D)
    sentence: torch.Tensor  # mean of projected words (B, D)
    tcd: TCDOutput
    heads: HeadOutputs
    reconstructed: torch.Tensor | None  # (B, D) when the feedback branch is on

    @property
    def scores(self):
        return self.tcd.result.scores

    @property
    def mask(self):
        return self.tcd.result.mask


class MomentRetrievalNet(nn.Module):
    def __init__(self, cfg: RunConfig, video_dim: int, text_dim: int):
        super().__init__()
        self.cfg = cfg
        D = cfg.model.dim
        ab = cfg.ablation
        self.video_proj = FeedForward(video_dim, D)
        self.text_proj = FeedForward(text_dim, D)
        cio_kw = dict(state_dim=cfg.cio.state_dim, backbone=cfg.cio.backbone, local_conv=cfg.cio.local_conv)
        self.tcd = TextConditionedDenoising(
            D, depth=cfg.tcd.depth, num_kernels=cfg.tcd.num_kernels, pooled_len=cfg.tcd.pooled_len,
            num_global=cfg.num_global, max_positions=cfg.model.max_positions, enabled=ab.tcd,
            cross_attention=ab.cross_attention, dynamic=ab.dynamic_kernels, **cio_kw,
        )
        self.distiller = (
            QueryDistiller(D, cfg.trf.depth, positional=cfg.trf.positional,
                           max_positions=cfg.model.max_positions, compact=cfg.trf.compact, **cio_kw)
            if ab.trf else None
        )
        self.decoder = Decoder(D, cfg.decoder.depth, filters=cfg.tcd.num_kernels, enabled=ab.decoder, **cio_kw)

    def forward(self, video, text, warmup: bool = False, with_feedback: bool | None = None) -> ForwardOutput:
        V = self.video_proj(video)
        T = self.text_proj(text)
        tcd = self.tcd(V, T, mu=self.cfg.tcd.mu, mode=self.cfg.tcd.mask_mode, warmup=warmup,
                       guard_ratio=self.cfg.tcd.guard_ratio)
        heads = self.decoder(tcd.sequence)
        if with_feedback is None:
            with_feedback = self.training
        recon = None
        if self.distiller is not None and with_feedback:
            if self.distiller.compact:
                recon = torch.stack([
                    self.distiller(tcd.result.purified[b], tcd.result.mask[b])
                    for b in range(V.shape[0])
                ])
            else:
                recon = self.distiller(tcd.result.purified)
        return ForwardOutput(V, T, sentence_embedding(T), tcd, heads, recon)


# --------------------------------------------------------------------------
# targets and losses


@dataclass
class Targets:
    foreground: torch.Tensor  # (B, L_v)
    offsets: torch.Tensor  # (B, L_v, 2), clip units
    bounds: torch.Tensor  # (B, L_v, 2), clip units
    moment: torch.Tensor  # (B, 2), normalized (center, width)


def sample_targets(annotation, num_clips: int, clip_duration: float):
    """Foreground labels, per-clip offset/boundary targets and the global moment for one sample.

    A foreground clip's targets come from the window it overlaps most; the global
    moment is the longest window.
    """
    fg = clip_membership(annotation.windows, num_clips, clip_duration)
    centers = np.arange(num_clips) + 0.5
    offsets = np.zeros((num_clips, 2))
    bounds = np.zeros((num_clips, 2))
    starts = np.arange(num_clips) * clip_duration
    for i in np.flatnonzero(fg):
        overlaps = [min(starts[i] + clip_duration, e) - max(starts[i], s) for s, e in annotation.windows]
        s, e = annotation.windows[int(np.argmax(overlaps))]
        s_c, e_c = s / clip_duration, e / clip_duration
        bounds[i] = (s_c, e_c)
        offsets[i] = (max(centers[i] - s_c, 0.0), max(e_c - centers[i], 0.0))
    s, e = annotation.longest_window()
    moment = np.array([0.5 * (s + e) / annotation.duration, (e - s) / annotation.duration])
    return fg, offsets, bounds, moment


def build_targets(samples, dtype=torch.float32) -> Targets:
    parts = [sample_targets(s.annotation, s.clip.num_clips, s.clip.clip_duration) for s in samples]
    stack = lambda k: torch.as_tensor(np.stack([p[k] for p in parts]), dtype=dtype)  # noqa: E731
    return Targets(stack(0), stack(1), stack(2), stack(3))


def compute_losses(out: ForwardOutput, targets: Targets, cfg: RunConfig) -> LossBreakdown:
    w = cfg.loss
    heads = out.heads
    intra, inter = contrastive_losses(heads.clip_embeds, out.sentence, targets.foreground, w, w.inter_pooling)
    contrastive = w.intra * intra + w.inter * inter
    boundary = boundary_loss(heads.offsets, heads.bounds, targets.offsets, targets.bounds,
                             targets.foreground, w, reduction="none")
    cls = classification_loss(heads.cls_prob, targets.foreground, w.cls, logits=heads.cls_logits,
                              reduction="none")
    glob = global_loss(heads.moment, targets.moment, w)
    text = None
    if out.reconstructed is not None:
        text = semantic_consistency_loss(out.sentence, out.reconstructed, w.text)
    return LossBreakdown(contrastive, boundary, cls, glob, text)

