"""Training objectives. Intervals are ``(..., 2)`` tensors; moments are (center, width)."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    text: float = 2.0  # semantic consistency
    global_l1: float = 5.0
    global_iou: float = 1.0
    boundary_l1: float = 10.0
    boundary_iou: float = 1.0
    cls: float = 10.0
    intra: float = 2.0
    inter: float = 2.0
    tau: float = 0.07

    def validate(self):
        for k, v in asdict(self).items():
            if isinstance(v, (int, float)) and v < 0:
                raise ConfigError(f"loss weight {k} must be >= 0, got {v}")
        if self.tau <= 0:
            raise ConfigError(f"temperature tau must be > 0, got {self.tau}")

    @classmethod
    def charades(cls) -> "LossWeights":
        return cls(intra=1.0, inter=0.5)


def cw_to_se(moment):
    c, w = moment[..., 0], moment[..., 1]
    return torch.stack([c - 0.5 * w, c + 0.5 * w], dim=-1)


def se_to_cw(span):
    s, e = span[..., 0], span[..., 1]
    return torch.stack([0.5 * (s + e), e - s], dim=-1)


def interval_iou(a, b):
    """IoU of (start, end) intervals; 0 where the union has zero length."""
    inter = (torch.minimum(a[..., 1], b[..., 1]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    union = (a[..., 1] - a[..., 0]) + (b[..., 1] - b[..., 0]) - inter
    safe = torch.where(union > 0, union, torch.ones_like(union))
    return torch.where(union > 0, inter / safe, torch.zeros_like(union))


def generalized_iou(a, b):
    """IoU minus the fraction of the enclosing hull covered by neither interval."""
    inter = (torch.minimum(a[..., 1], b[..., 1]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    union = (a[..., 1] - a[..., 0]) + (b[..., 1] - b[..., 0]) - inter
    hull = torch.maximum(a[..., 1], b[..., 1]) - torch.minimum(a[..., 0], b[..., 0])
    iou = interval_iou(a, b)
    safe = torch.where(hull > 0, hull, torch.ones_like(hull))
    gap = torch.where(hull > 0, (hull - union) / safe, torch.zeros_like(hull))
    return iou - gap


def global_loss(pred, target, weights: LossWeights):
    """L1 on (center, width) plus 1 - gIoU of the corresponding intervals."""
    l1 = (pred - target).abs().sum(-1)
    giou = generalized_iou(cw_to_se(pred), cw_to_se(target))
    return weights.global_l1 * l1 + weights.global_iou * (1.0 - giou)


def smooth_l1(x, beta: float = 1.0):
    ax = x.abs()
    return torch.where(ax < beta, 0.5 * ax * ax / beta, ax - 0.5 * beta)


def boundary_loss(offsets, bounds, target_offsets, target_bounds, foreground, weights: LossWeights,
                  reduction: str = "mean"):
    """Smooth-L1 on (left, right) offsets plus 1 - IoU on boundaries, foreground clips only.

    ``offsets``/``target_offsets``/``bounds``/``target_bounds`` are (..., L_v, 2).
    ``reduction="none"`` returns the per-clip vector (zero on background clips);
    ``"mean"`` averages over foreground clips and returns 0 when there are none.
    """
    fg = foreground.to(offsets.dtype)
    per_clip = weights.boundary_l1 * smooth_l1(offsets - target_offsets).sum(-1)
    per_clip = per_clip + weights.boundary_iou * (1.0 - interval_iou(bounds, target_bounds))
    per_clip = per_clip * fg
    if reduction == "none":
        return per_clip
    n = fg.sum(-1)
    return torch.where(n > 0, per_clip.sum(-1) / n.clamp(min=1), torch.zeros_like(n))


def classification_loss(probs, labels, weight: float = 10.0, logits=None, reduction: str = "mean"):
    """Weighted binary cross-entropy; pass ``logits`` for the numerically stable form."""
    labels = labels.to(probs.dtype)
    if logits is not None:
        per_clip = F.binary_cross_entropy_with_logits(logits, labels, reduction="none")
    else:
        per_clip = -(labels * torch.log(probs) + (1 - labels) * torch.log1p(-probs))
    per_clip = weight * per_clip
    return per_clip if reduction == "none" else per_clip.mean(-1)


# masked clips are exact zero rows when the decoder encoder is off; the floor
# maps them to cosine 0 and leaves every non-degenerate row untouched
_NORM_EPS = 1e-12


def _cos_matrix(x, y):
    return F.normalize(x, dim=-1, eps=_NORM_EPS) @ F.normalize(y, dim=-1, eps=_NORM_EPS).transpose(-1, -2)


def contrastive_losses(clip_embeds, sentences, foreground, weights: LossWeights,
                       inter_pooling: str = "mean_cos"):
    """Intra-video and inter-video contrastive terms, one value per sample.

    Args:
        clip_embeds: (B, L_v, D).
        sentences: (B, D) sentence embeddings.
        foreground: (B, L_v) 0/1, at least one positive per sample.
        inter_pooling: ``"mean_cos"`` averages clip-sentence cosines over positive
            clips; ``"mean_embed"`` takes the cosine of the mean positive clip.

    Returns:
        (intra, inter), each (B,). ``inter`` is zero for a batch of one.
    """
    tau = weights.tau
    fg = foreground.to(clip_embeds.dtype)
    n_pos = fg.sum(-1)
    if bool((n_pos == 0).any()):
        raise ValueError("every sample needs at least one foreground clip")
    clip_n = F.normalize(clip_embeds, dim=-1, eps=_NORM_EPS)
    sent_n = F.normalize(sentences, dim=-1, eps=_NORM_EPS)

    r = torch.einsum("bld,bd->bl", clip_n, sent_n)
    r_pos = (r * fg).sum(-1) / n_pos
    neg_logits = torch.where(fg > 0, torch.full_like(r, -torch.inf), r / tau)
    intra = torch.logsumexp(torch.cat([(r_pos / tau).unsqueeze(-1), neg_logits], dim=-1), dim=-1) - r_pos / tau

    B = clip_embeds.shape[0]
    if B < 2:
        log.warning("batch of one: inter-video contrastive term skipped")
        return intra, torch.zeros_like(intra)
    if inter_pooling == "mean_cos":
        all_r = torch.einsum("bld,kd->bkl", clip_n, sent_n)
        R = (all_r * fg.unsqueeze(1)).sum(-1) / n_pos.unsqueeze(-1)
    elif inter_pooling == "mean_embed":
        pooled = (clip_embeds * fg.unsqueeze(-1)).sum(-2) / n_pos.unsqueeze(-1)
        R = F.normalize(pooled, dim=-1, eps=_NORM_EPS) @ sent_n.T
    else:
        raise ConfigError(f"unknown inter_pooling {inter_pooling!r}")
    logits = R / tau
    inter = torch.logsumexp(logits, dim=-1) - logits.diagonal()
    return intra, inter


@dataclass
class LossBreakdown:
    """Per-sample components; ``boundary`` and ``cls`` are per-clip (B, L_v)."""

    contrastive: torch.Tensor
    boundary: torch.Tensor
    cls: torch.Tensor
    global_: torch.Tensor
    text: torch.Tensor | None

    def per_sample_total(self):
        # (1/L_v) * sum_i (L_r + L_b,i + L_c,i) + L_g + L_t
        L_v = self.cls.shape[-1]
        clip_terms = (self.contrastive.unsqueeze(-1) + self.boundary + self.cls).sum(-1) / L_v
        total = clip_terms + self.global_
        if self.text is not None:
            total = total + self.text
        return total

    def total(self):
        return self.per_sample_total().mean()

    def components(self) -> dict:
        with torch.no_grad():
            return self._components()

    def _components(self) -> dict:
        out = {
            "contrastive": float(self.contrastive.mean()),
            "boundary": float(self.boundary.mean(-1).mean()),
            "cls": float(self.cls.mean(-1).mean()),
            "global": float(self.global_.mean()),
            "text": float(self.text.mean()) if self.text is not None else 0.0,
        }
        out["total"] = float(self.total())
        return out


def total_loss(breakdown: LossBreakdown):
    return breakdown.total()
