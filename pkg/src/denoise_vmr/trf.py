"""Text-reconstruction feedback: distil a query embedding from purified clips and compare it to the sentence."""

import torch
from torch import nn

from .cio import CIOStack
from .errors import NumericError


def sentence_embedding(words):
    """Mean of the word rows."""
    return words.mean(dim=-2)


class QueryDistiller(nn.Module):
    """Appends a learnable seed row after the purified clips, runs a CIO stack, returns the last row."""

    def __init__(self, dim: int, depth: int = 3, state_dim: int = 8, positional: bool = False,
                 max_positions: int = 512, compact: bool = False, backbone: str = "mamba",
                 local_conv: bool = False):
        super().__init__()
        self.seed = nn.Parameter(torch.randn(dim) * 0.02)
        self.mapper = CIOStack(dim, depth, state_dim, backbone=backbone, local_conv=local_conv)
        self.position = nn.Parameter(torch.randn(max_positions, dim) * 0.02) if positional else None
        self.compact = compact

    def forward(self, purified, mask=None):
        if self.compact and mask is not None:
            if purified.dim() != 2:
                raise ValueError("compaction works on one unbatched sample at a time")
            purified = purified[mask > 0]
        seed = self.seed.expand(*purified.shape[:-2], 1, -1)
        seq = torch.cat([purified, seed], dim=-2)
        if self.position is not None:
            seq = seq + self.position[: seq.shape[-2]]
        return self.mapper(seq)[..., -1, :]


def reconstruct_query(purified, distiller: QueryDistiller, mask=None):
    return distiller(purified, mask)


def semantic_consistency_loss(sentence, reconstructed, weight: float = 2.0):
    """``weight * (1 - cos(sentence, reconstructed))``, batched over leading dims.

    Raises NumericError on a zero-norm vector instead of clamping.
    """
    n_s = sentence.norm(dim=-1)
    n_q = reconstructed.norm(dim=-1)
    if bool((n_s == 0).any()) or bool((n_q == 0).any()):
        raise NumericError("semantic consistency loss is undefined for a zero-norm vector")
    cos = (sentence * reconstructed).sum(-1) / (n_s * n_q)
    return weight * (1.0 - cos)
