import numpy as np
import pytest
import torch

from denoise_vmr.config import RunConfig
from denoise_vmr.data import SynthConfig, generate_synthetic
from denoise_vmr.model import MomentRetrievalNet, build_targets, compute_losses
from denoise_vmr.train import collate

from oracles import directional_check

TOY = {"model.dim": 8, "cio.state_dim": 4, "tcd.num_kernels": 3, "tcd.pooled_len": 2,
       "tcd.depth": 1, "trf.depth": 1, "decoder.depth": 1, "train.dtype": "float64"}


def _toy_batch(n=2, L_v=8, L_t=4, dim=6, seed=0):
    cfg = SynthConfig(num_samples=n, clips_range=(L_v, L_v), words_range=(L_t, L_t), dim=dim,
                      gt_ratio_range=(0.25, 0.5))
    return generate_synthetic(cfg, seed=seed)


def _toy_model(overrides=None, seed=0):
    cfg = RunConfig().with_overrides({**TOY, **(overrides or {})})
    torch.manual_seed(seed)
    return MomentRetrievalNet(cfg, 6, 6).double(), cfg


def test_forward_shapes_and_ranges():
    model, cfg = _toy_model()
    batch = _toy_batch()
    video, text = collate(batch, torch.float64)
    out = model(video, text)
    B, L_v = video.shape[:2]
    assert out.scores.shape == (B, L_v) and out.mask.shape == (B, L_v)
    assert ((out.scores > 0) & (out.scores < 1)).all()
    assert ((out.heads.cls_prob > 0) & (out.heads.cls_prob < 1)).all()
    assert (out.heads.bounds >= 0).all()
    assert out.reconstructed.shape == (B, 8)


def test_full_loss_gradients_soft_mode():
    # every parameter tensor of the whole network, through all five losses; the
    # straight-through estimator is checked against its surrogate in test_tcd.
    # The per-operation checks use eps=1e-3; across the whole network a step that
    # large crosses some ReLU or clamp kink, so this end-to-end check steps 1e-4.
    model, cfg = _toy_model({"tcd.mask_mode": "soft"}, seed=1)
    model.train()
    batch = _toy_batch(seed=3)
    video, text = collate(batch, torch.float64)
    targets = build_targets(batch, torch.float64)

    def loss():
        return compute_losses(model(video, text), targets, cfg).total()

    errs = directional_check(loss, list(model.named_parameters()), eps=1e-4, seed=0)
    worst = max(errs, key=errs.get)
    assert errs[worst] <= 1e-4, (worst, errs[worst])


def test_hard_mask_zeroes_purified_rows():
    model, _ = _toy_model({"tcd.mu": 0.5})
    video, text = collate(_toy_batch(), torch.float64)
    out = model(video, text)
    res = out.tcd.result
    dropped = res.mask == 0
    assert torch.equal(res.purified[dropped], torch.zeros_like(res.purified[dropped]))
    rows = ~res.guard_fired
    assert torch.equal(res.mask[rows].bool(), res.scores[rows] > 0.5)


def test_ablation_a1_scores_forced_to_one():
    model, _ = _toy_model({"ablation.tcd": False, "ablation.cross_attention": False,
                           "ablation.dynamic_kernels": False, "ablation.global_tokens": False})
    video, text = collate(_toy_batch(), torch.float64)
    out = model(video, text)
    assert torch.equal(out.scores, torch.ones_like(out.scores))
    assert torch.equal(out.mask, torch.ones_like(out.mask))


@pytest.mark.parametrize("switch", ["ablation.trf", "ablation.decoder", "ablation.cross_attention",
                                    "ablation.dynamic_kernels", "ablation.global_tokens"])
def test_each_switch_trains_one_step(switch):
    model, cfg = _toy_model({switch: False})
    model.train()
    batch = _toy_batch()
    video, text = collate(batch, torch.float64)
    loss = compute_losses(model(video, text), build_targets(batch, torch.float64), cfg).total()
    loss.backward()
    assert torch.isfinite(loss)
    if switch == "ablation.trf":
        assert model.distiller is None


def test_eval_mode_skips_feedback():
    model, _ = _toy_model()
    model.eval()
    video, text = collate(_toy_batch(), torch.float64)
    assert model(video, text).reconstructed is None
    np.testing.assert_array_equal(model(video, text).scores.detach().numpy(),
                                  model(video, text).scores.detach().numpy())
