"""Purified multimodal encoder, retrieval heads and candidate generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .cio import CIOStack
from .metrics import temporal_iou
from .tcd import MultimodalSequence, pool_words

GLOBAL_RANK_BONUS = 1e-4


class GlobalHead(nn.Module):
    """Center via a two-layer MLP, width via one linear layer; both squashed to (0, 1)."""

    def __init__(self, dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.center = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))
        self.width = nn.Linear(dim, 1)

    def forward(self, rows):
        pooled = rows.mean(dim=-2)
        return torch.cat([torch.sigmoid(self.center(pooled)), torch.sigmoid(self.width(pooled))], dim=-1)


def _temporal_convs(in_ch: int, filters: int, out_ch: int, layers: int = 3) -> nn.ModuleList:
    chans = [in_ch] + [filters] * (layers - 1) + [out_ch]
    return nn.ModuleList(nn.Conv1d(chans[i], chans[i + 1], 3, padding=1) for i in range(layers))


def _run_convs(convs, x):
    # x: (..., L, C) -> conv over L
    lead = x.shape[:-2]
    h = x.reshape(-1, *x.shape[-2:]).transpose(-1, -2)
    for i, conv in enumerate(convs):
        h = conv(h)
        if i < len(convs) - 1:
            h = F.relu(h)
    return h.transpose(-1, -2).reshape(*lead, x.shape[-2], -1)


def clip_centers(num_clips: int, dtype=torch.float32):
    return torch.arange(num_clips, dtype=dtype) + 0.5


class BoundaryHead(nn.Module):
    """Three kernel-3 temporal convolutions -> non-negative (left, right) offsets in clip units."""

    def __init__(self, dim: int, filters: int = 8):
        super().__init__()
        self.convs = _temporal_convs(dim, filters, 2)

    def forward(self, video):
        offsets = F.softplus(_run_convs(self.convs, video))
        L_v = video.shape[-2]
        centers = clip_centers(L_v, video.dtype)
        bounds = torch.stack([centers - offsets[..., 0], centers + offsets[..., 1]], dim=-1)
        return offsets, bounds.clamp(0.0, float(L_v))


class ClassificationHead(nn.Module):
    """Foreground probability per clip; the first layer's pointwise filters are generated from the text."""

    def __init__(self, dim: int, filters: int = 8):
        super().__init__()
        self.filters = filters
        self.kernel_fc = nn.Linear(dim, dim)
        self.first_bias = nn.Parameter(torch.zeros(filters))
        self.convs = _temporal_convs(filters, filters, 1, layers=2)

    def text_kernels(self, text):
        return self.kernel_fc(pool_words(text, self.filters))  # (..., N_k, D)

    def forward(self, video, text):
        kernels = self.text_kernels(text)
        h = F.relu(torch.einsum("...ld,...kd->...lk", video, kernels) + self.first_bias)
        logits = _run_convs(self.convs, h).squeeze(-1)
        return logits, torch.sigmoid(logits)


@dataclass
class HeadOutputs:
    moment: torch.Tensor  # (..., 2) normalized (center, width)
    offsets: torch.Tensor  # (..., L_v, 2) clip units
    bounds: torch.Tensor  # (..., L_v, 2) clip units, clamped to [0, L_v]
    cls_logits: torch.Tensor
    cls_prob: torch.Tensor
    clip_embeds: torch.Tensor  # decoded video rows


class Decoder(nn.Module):
    def __init__(self, dim: int, depth: int = 3, state_dim: int = 8, filters: int = 8,
                 enabled: bool = True, backbone: str = "mamba", local_conv: bool = False):
        super().__init__()
        self.encoder = (CIOStack(dim, depth, state_dim, backbone=backbone, local_conv=local_conv)
                        if enabled else nn.Identity())
        self.global_head = GlobalHead(dim)
        self.boundary_head = BoundaryHead(dim, filters)
        self.cls_head = ClassificationHead(dim, filters)

    def encode(self, seq: MultimodalSequence) -> MultimodalSequence:
        return seq.replace(rows=self.encoder(seq.rows))

    def forward(self, seq: MultimodalSequence) -> HeadOutputs:
        dec = self.encode(seq)
        video = dec.video
        # without global tokens the global head reads the pooled clips
        moment = self.global_head(dec.global_ if dec.num_global else video)
        offsets, bounds = self.boundary_head(video)
        logits, prob = self.cls_head(video, dec.text)
        return HeadOutputs(moment, offsets, bounds, logits, prob, video)


# --------------------------------------------------------------------------
# inference-time candidates


@dataclass
class Candidate:
    start: float
    end: float
    score: float
    source: str  # "global" | "boundary"
    index: int  # -1 for the global candidate, clip index otherwise


@dataclass
class CandidateSet:
    qid: str
    candidates: list = field(default_factory=list)

    def windows(self):
        return [(c.start, c.end, c.score) for c in self.candidates]

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


def temporal_nms(candidates, threshold: float = 0.7, top_k: int | None = None) -> list:
    """Greedy suppression of candidates overlapping a kept one with IoU >= threshold.

    Order: score descending, ties by lower index (the global candidate has index -1).
    """
    order = sorted(candidates, key=lambda c: (-c.score, c.index))
    kept = []
    for cand in order:
        if all(temporal_iou((cand.start, cand.end), (k.start, k.end)) < threshold for k in kept):
            kept.append(cand)
            if top_k is not None and len(kept) >= top_k:
                break
    return kept


def build_candidates(moment, bounds, cls_prob, duration: float, clip_seconds: float | None = None) -> list:
    """All raw candidates in seconds: the global moment plus one boundary pair per clip.

    Boundaries are in clip units and scaled by ``clip_seconds`` (default ``duration / L_v``).
    """
    moment = [float(v) for v in moment]
    probs = [float(v) for v in cls_prob]
    L_v = len(probs)
    scale = clip_seconds or duration / L_v
    c, w = moment
    start = min(max((c - 0.5 * w) * duration, 0.0), duration)
    end = min(max((c + 0.5 * w) * duration, 0.0), duration)
    out = [Candidate(start, end, max(probs) + GLOBAL_RANK_BONUS, "global", -1)]
    for i, ((s, e), p) in enumerate(zip(bounds.tolist(), probs)):
        out.append(Candidate(min(s * scale, duration), min(e * scale, duration), p, "boundary", i))
    return out


def predict(heads: HeadOutputs, duration: float, qid: str = "", nms_threshold: float = 0.7,
            top_k: int = 10, index: int | None = None, clip_seconds: float | None = None) -> CandidateSet:
    """Candidate set for one sample; pass ``index`` to select a row of batched head outputs."""
    sel = (lambda t: t[index]) if index is not None else (lambda t: t)
    with torch.no_grad():
        raw = build_candidates(sel(heads.moment), sel(heads.bounds), sel(heads.cls_prob), duration,
                               clip_seconds)
    return CandidateSet(qid, temporal_nms(raw, nms_threshold, top_k))
