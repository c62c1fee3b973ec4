import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from denoise_vmr.errors import NumericError
from denoise_vmr.trf import QueryDistiller, reconstruct_query, semantic_consistency_loss, sentence_embedding

from oracles import check_gradients

f64 = torch.float64


def test_sentence_embedding_is_mean():
    words = torch.tensor([[1.0, 2.0], [3.0, 6.0]])
    assert sentence_embedding(words).tolist() == [2.0, 4.0]


def test_identity_distiller_returns_seed():
    dist = QueryDistiller(8, depth=3, state_dim=4)
    for layer in dist.mapper.layers:
        for ssm in (layer.fwd, layer.bwd):
            torch.nn.init.zeros_(ssm.out_proj.weight)
            torch.nn.init.zeros_(ssm.out_proj.bias)
    out = reconstruct_query(torch.randn(5, 8), dist)
    assert torch.equal(out, dist.seed.detach())


def test_distiller_invariant_to_reordering_zero_rows():
    torch.manual_seed(0)
    dist = QueryDistiller(8, depth=2, state_dim=4).double()
    rows = torch.randn(6, 8, dtype=f64)
    rows[[1, 4]] = 0.0
    # swapping two identical zero rows is a no-op on the input
    perm = torch.tensor([0, 4, 2, 3, 1, 5])
    assert torch.equal(dist(rows), dist(rows[perm]))


def test_compact_mode_drops_masked_rows():
    torch.manual_seed(1)
    dist = QueryDistiller(8, depth=1, state_dim=4, compact=True)
    rows = torch.randn(5, 8)
    mask = torch.tensor([1.0, 0.0, 1.0, 0.0, 1.0])
    dense = QueryDistiller(8, depth=1, state_dim=4)
    dense.load_state_dict(dist.state_dict())
    assert torch.equal(dist(rows, mask), dense(rows[[0, 2, 4]]))


def test_seed_gradient():
    torch.manual_seed(2)
    dist = QueryDistiller(8, depth=2, state_dim=4).double()
    with torch.no_grad():
        dist.seed.uniform_(-1, 1)
    rows = torch.rand(5, 8, dtype=f64) * 2 - 1
    sentence = torch.rand(8, dtype=f64) * 2 - 1
    named = [("seed", dist.seed), ("rows", rows.requires_grad_())]
    errs = check_gradients(lambda: semantic_consistency_loss(sentence, dist(rows)), named)
    assert max(errs.values()) <= 1e-4, errs


def test_loss_examples():
    t = torch.tensor([1.0, 2.0, -0.5], dtype=f64)
    assert float(semantic_consistency_loss(t, 3.0 * t)) == pytest.approx(0.0, abs=1e-12)
    assert float(semantic_consistency_loss(t, -t)) == pytest.approx(4.0, abs=1e-12)
    e1, e2 = torch.tensor([1.0, 0.0], dtype=f64), torch.tensor([0.0, 1.0], dtype=f64)
    assert float(semantic_consistency_loss(e1, e2)) == pytest.approx(2.0, abs=1e-12)


def test_loss_zero_norm_is_fatal():
    with pytest.raises(NumericError):
        semantic_consistency_loss(torch.zeros(3), torch.ones(3))


vec = st.lists(st.floats(-10, 10), min_size=4, max_size=4).filter(lambda v: math.hypot(*v) > 1e-3)


@settings(max_examples=100, deadline=None)
@given(vec, vec, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(0.0, 5.0))
def test_loss_bounds_and_scale_invariance(a, b, sa, sb, weight):
    a, b = torch.tensor(a, dtype=f64), torch.tensor(b, dtype=f64)
    base = float(semantic_consistency_loss(a, b, weight))
    assert -1e-12 <= base <= 2 * weight + 1e-12
    scaled = float(semantic_consistency_loss(sa * a, sb * b, weight))
    assert scaled == pytest.approx(base, abs=1e-9)
