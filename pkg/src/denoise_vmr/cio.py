"""Selective state-space scan and the bidirectional context interaction operator (CIO)."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericError


def _raise_nonfinite(y: torch.Tensor):
    bad = torch.nonzero(~torch.isfinite(y))
    pos = tuple(int(v) for v in bad[0])
    raise NumericError(f"selective_scan produced a non-finite value at index {pos} (..., t, channel)")


class _LinearRecurrence(torch.autograd.Function):
    """h_t = a_t * h_{t-1} + b_t with h_{-1} = 0, along dim -3.

    The backward pass is the reverse-time adjoint recurrence
    g_t = dL/dh_t + a_{t+1} * g_{t+1}; then dL/db_t = g_t and dL/da_t = g_t * h_{t-1}.
    """

    @staticmethod
    def forward(ctx, a, b):
        states = torch.empty_like(b)
        h = b[..., 0, :, :]
        states[..., 0, :, :] = h
        for t in range(1, b.shape[-3]):
            h = a[..., t, :, :] * h + b[..., t, :, :]
            states[..., t, :, :] = h
        ctx.save_for_backward(a, states)
        return states

    @staticmethod
    def backward(ctx, grad_states):
        a, states = ctx.saved_tensors
        grad_b = torch.empty_like(grad_states)
        g = grad_states[..., -1, :, :]
        grad_b[..., -1, :, :] = g
        for t in range(grad_states.shape[-3] - 2, -1, -1):
            g = grad_states[..., t, :, :] + a[..., t + 1, :, :] * g
            grad_b[..., t, :, :] = g
        grad_a = torch.zeros_like(a)
        grad_a[..., 1:, :, :] = grad_b[..., 1:, :, :] * states[..., :-1, :, :]
        return grad_a, grad_b


def linear_recurrence(a, b):
    return _LinearRecurrence.apply(a, b)


def selective_scan(u, delta, A, B, C, D_skip=None, gate=None):
    """Diagonal selective scan.

    Per channel ``d`` and step ``t``::

        h_t = exp(delta_t * A_d) * h_{t-1} + delta_t * B_t * u_{t,d}
        y_{t,d} = <C_t, h_t> + D_skip_d * u_{t,d}

    and ``y`` is multiplied elementwise by ``gate`` when given.

    Args:
        u: (..., L, D) input.
        delta: (..., L, D) positive step sizes.
        A: (D, N) strictly negative state matrix (diagonal per channel).
        B, C: (..., L, N) input/output projections.
        D_skip: (D,) skip coefficients.
        gate: (..., L, D) multiplicative gate.

    Returns:
        (..., L, D) tensor.
    """
    if u.shape[-2] < 1:
        raise ValueError("selective_scan needs at least one step")
    decay = torch.exp(delta.unsqueeze(-1) * A)  # (..., L, D, N)
    drive = (delta * u).unsqueeze(-1) * B.unsqueeze(-2)
    states = linear_recurrence(decay, drive)
    y = torch.einsum("...tdn,...tn->...td", states, C)
    if D_skip is not None:
        y = y + D_skip * u
    if gate is not None:
        y = y * gate
    if not torch.isfinite(y).all():
        _raise_nonfinite(y)
    return y


class SelectiveSSM(nn.Module):
    """One directional selective state-space block with a sigmoid gate branch."""

    def __init__(self, dim: int, state_dim: int = 8, local_conv: bool = False, conv_kernel: int = 4,
                 zero_init_out: bool = False):
        super().__init__()
        self.dim = dim
        self.state_dim = state_dim
        self.in_proj = nn.Linear(dim, dim)
        self.gate_proj = nn.Linear(dim, dim)
        self.dt_proj = nn.Linear(dim, dim)
        self.B_proj = nn.Linear(dim, state_dim, bias=False)
        self.C_proj = nn.Linear(dim, state_dim, bias=False)
        self.A_log = nn.Parameter(torch.log(torch.arange(1, state_dim + 1, dtype=torch.float32)).repeat(dim, 1))
        self.D_skip = nn.Parameter(torch.ones(dim))
        self.out_proj = nn.Linear(dim, dim)
        self.conv = None
        if local_conv:
            self.conv = nn.Conv1d(dim, dim, conv_kernel, groups=dim, padding=conv_kernel - 1)

        # step sizes start in [1e-3, 1e-1] (log-uniform), as in common selective-SSM inits
        dt = torch.exp(torch.rand(dim) * (math.log(0.1) - math.log(1e-3)) + math.log(1e-3))
        with torch.no_grad():
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))
            self.dt_proj.weight.mul_(0.1)
            if zero_init_out:
                self.out_proj.weight.zero_()
                self.out_proj.bias.zero_()

    @property
    def A(self) -> torch.Tensor:
        return -torch.exp(self.A_log)

    def forward(self, x):
        u = self.in_proj(x)
        if self.conv is not None:
            L = u.shape[-2]
            u = self.conv(u.transpose(-1, -2))[..., :L].transpose(-1, -2)
        delta = F.softplus(self.dt_proj(u))
        y = selective_scan(
            u, delta, self.A, self.B_proj(u), self.C_proj(u), self.D_skip,
            gate=torch.sigmoid(self.gate_proj(x))
        )
        return self.out_proj(y)


class CIO(nn.Module):
    """Bidirectional pair: ``seq + fwd(norm(seq)) + flip(bwd(flip(norm(seq))))``."""

    def __init__(self, dim: int, state_dim: int = 8, **ssm_kwargs):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fwd = SelectiveSSM(dim, state_dim, **ssm_kwargs)
        self.bwd = SelectiveSSM(dim, state_dim, **ssm_kwargs)

    def forward(self, seq):
        x = self.norm(seq)
        return seq + self.fwd(x) + self.bwd(x.flip(-2)).flip(-2)


class TransformerLayer(nn.Module):
    """Drop-in self-attention replacement for a CIO (the Mamba -> Transformer ablation)."""

    def __init__(self, dim: int, heads: int = 4, zero_init_out: bool = False, **_):
        super().__init__()
        while dim % heads:
            heads -= 1
        self.layer = nn.TransformerEncoderLayer(
            dim, heads, dim_feedforward=2 * dim, dropout=0.0, batch_first=True, norm_first=True
        )
        if zero_init_out:
            with torch.no_grad():
                for lin in (self.layer.self_attn.out_proj, self.layer.linear2):
                    lin.weight.zero_()
                    lin.bias.zero_()

    def forward(self, seq):
        squeeze = seq.dim() == 2
        out = self.layer(seq.unsqueeze(0) if squeeze else seq)
        return out.squeeze(0) if squeeze else out


class CIOStack(nn.Module):
    def __init__(self, dim: int, depth: int = 3, state_dim: int = 8, backbone: str = "mamba", **kwargs):
        super().__init__()
        if backbone == "mamba":
            self.layers = nn.ModuleList(CIO(dim, state_dim, **kwargs) for _ in range(depth))
        elif backbone == "transformer":
            kwargs.pop("local_conv", None)
            self.layers = nn.ModuleList(TransformerLayer(dim, **kwargs) for _ in range(depth))
        else:
            raise ValueError(f"unknown CIO backbone {backbone!r}")

    def forward(self, seq):
        for layer in self.layers:
            seq = layer(seq)
        return seq
