import time

import pytest
import torch

from denoise_vmr.cio import CIO, CIOStack, SelectiveSSM, selective_scan
from denoise_vmr.errors import NumericError

from oracles import check_gradients, sequential_scan


def _scan_inputs(L=6, D=3, N=2, batch=(), seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    r = lambda *s: torch.rand(*s, generator=g, dtype=dtype) * 2 - 1  # noqa: E731
    u = r(*batch, L, D)
    delta = torch.rand(*batch, L, D, generator=g, dtype=dtype) * 0.9 + 0.1
    A = -torch.rand(D, N, generator=g, dtype=dtype) * 2 - 0.1
    return u, delta, A, r(*batch, L, N), r(*batch, L, N), r(D), torch.rand(*batch, L, D, generator=g, dtype=dtype)


def test_scan_scalar_toy():
    # exp(delta * A) = 0.5 and delta * B = 1 with delta = 1
    u = torch.tensor([[1.0], [0.0], [0.0]], dtype=torch.float64)
    delta = torch.ones(3, 1, dtype=torch.float64)
    A = torch.tensor([[torch.log(torch.tensor(0.5)).item()]], dtype=torch.float64)
    B = torch.ones(3, 1, dtype=torch.float64)
    C = torch.ones(3, 1, dtype=torch.float64)
    y = selective_scan(u, delta, A, B, C, D_skip=torch.zeros(1, dtype=torch.float64))
    torch.testing.assert_close(y.squeeze(-1), torch.tensor([1.0, 0.5, 0.25], dtype=torch.float64))


def test_scan_memoryless_limit():
    u, delta, _, B, C, Dk, _ = _scan_inputs()
    A = torch.full((3, 2), -1e4, dtype=torch.float64)
    y = selective_scan(u, delta, A, B, C, Dk)
    expected = (C * B).sum(-1, keepdim=True) * delta * u + Dk * u
    torch.testing.assert_close(y, expected)


@pytest.mark.parametrize("batch", [(), (2,)])
def test_scan_matches_sequential_reference(batch):
    args = _scan_inputs(L=9, D=4, N=3, batch=batch)
    torch.testing.assert_close(selective_scan(*args), sequential_scan(*args), rtol=1e-12, atol=1e-12)


def test_scan_causality():
    u, delta, A, B, C, Dk, gate = _scan_inputs(L=8)
    k = 5
    y0 = selective_scan(u, delta, A, B, C, Dk, gate)
    u2, d2, B2, C2, g2 = (t.clone() for t in (u, delta, B, C, gate))
    u2[k] += 0.7
    d2[k] += 0.3
    B2[k] -= 0.4
    C2[k] += 0.2
    g2[k] *= 0.5
    y1 = selective_scan(u2, d2, A, B2, C2, Dk, g2)
    assert torch.equal(y0[:k], y1[:k])
    assert not torch.equal(y0[k:], y1[k:])


def test_ssm_block_causality():
    torch.manual_seed(0)
    ssm = SelectiveSSM(8, 4).double()
    x = torch.rand(7, 8, dtype=torch.float64)
    x2 = x.clone()
    x2[4] += 1.0
    assert torch.equal(ssm(x)[:4], ssm(x2)[:4])


def test_scan_gradients_against_fd():
    args = [t.requires_grad_() for t in _scan_inputs(L=5, D=3, N=2)]
    names = ["u", "delta", "A", "B", "C", "D_skip", "gate"]
    errs = check_gradients(lambda: (selective_scan(*args) ** 2).sum(), zip(names, args))
    assert max(errs.values()) <= 1e-4, errs


def test_scan_nonfinite_reports_position():
    u, delta, A, B, C, Dk, _ = _scan_inputs(L=4)
    u[2, 1] = float("inf")
    with pytest.raises(NumericError, match=r"\(2, 1\)"):
        selective_scan(u, delta, A, B, C, Dk)


def test_cio_single_step():
    torch.manual_seed(1)
    cio = CIO(8, 4).double()
    seq = torch.rand(1, 8, dtype=torch.float64)
    x = cio.norm(seq)
    torch.testing.assert_close(cio(seq), seq + cio.fwd(x) + cio.bwd(x))


def test_cio_flip_symmetry():
    torch.manual_seed(2)
    cio = CIO(16, 4).double()
    swapped = CIO(16, 4).double()
    swapped.norm.load_state_dict(cio.norm.state_dict())
    swapped.fwd.load_state_dict(cio.bwd.state_dict())
    swapped.bwd.load_state_dict(cio.fwd.state_dict())
    seq = torch.rand(8, 16, dtype=torch.float64) * 2 - 1
    torch.testing.assert_close(swapped(seq.flip(0)), cio(seq).flip(0), rtol=1e-12, atol=1e-12)


def test_cio_not_causal():
    torch.manual_seed(3)
    cio = CIO(8, 4).double()
    seq = torch.rand(6, 8, dtype=torch.float64)
    seq2 = seq.clone()
    seq2[4, 2] += 1.0
    assert not torch.equal(cio(seq)[0], cio(seq2)[0])


def test_cio_identity_at_init():
    seq = torch.randn(2, 7, 12)
    cio = CIO(12, 4, zero_init_out=True)
    assert torch.equal(cio(seq), seq)


def test_stack_depth_zero_and_identity_layers():
    seq = torch.randn(5, 8)
    assert torch.equal(CIOStack(8, depth=0)(seq), seq)
    assert torch.equal(CIOStack(8, depth=3, zero_init_out=True)(seq), seq)


@pytest.mark.parametrize("backbone", ["mamba", "transformer"])
def test_stack_shape_preserved(backbone):
    stack = CIOStack(16, depth=2, state_dim=4, backbone=backbone)
    assert stack(torch.randn(3, 9, 16)).shape == (3, 9, 16)
    assert stack(torch.randn(9, 16)).shape == (9, 16)


def test_local_conv_branch_is_causal():
    torch.manual_seed(4)
    ssm = SelectiveSSM(8, 4, local_conv=True).double()
    x = torch.rand(7, 8, dtype=torch.float64)
    x2 = x.clone()
    x2[5] += 1.0
    out = ssm(x)
    assert out.shape == x.shape
    assert torch.equal(out[:5], ssm(x2)[:5])


def test_stack_gradients_against_fd():
    torch.manual_seed(5)
    stack = CIOStack(8, depth=3, state_dim=4).double()
    seq = (torch.rand(6, 8, dtype=torch.float64) * 2 - 1).requires_grad_()
    target = torch.rand(6, 8, dtype=torch.float64)
    named = [("input", seq), *stack.named_parameters()]
    errs = check_gradients(lambda: ((stack(seq) - target) ** 2).sum(), named)
    assert max(errs.values()) <= 1e-4, {k: v for k, v in errs.items() if v > 1e-4}


def test_scan_linear_time():
    torch.manual_seed(0)
    stack = CIOStack(64, depth=1, state_dim=8)

    def timed(L):
        x = torch.randn(1, L, 64)
        best = float("inf")
        with torch.no_grad():
            for _ in range(3):
                t = time.perf_counter()
                stack(x)
                best = min(best, time.perf_counter() - t)
        return best

    timed(64)
    assert timed(1024) <= 3 * timed(512)
