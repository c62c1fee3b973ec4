"""Independent reference implementations used to check the package."""

import numpy as np
import torch


def sequential_scan(u, delta, A, B, C, D_skip=None, gate=None):
    """Step-by-step evaluation of the selective-scan recurrence."""
    L = u.shape[-2]
    h = torch.zeros(*u.shape[:-2], u.shape[-1], A.shape[1], dtype=u.dtype)
    ys = []
    for t in range(L):
        h = torch.exp(delta[..., t, :, None] * A) * h + delta[..., t, :, None] * B[..., t, None, :] * u[..., t, :, None]
        y = (h * C[..., t, None, :]).sum(-1)
        if D_skip is not None:
            y = y + D_skip * u[..., t, :]
        ys.append(y)
    y = torch.stack(ys, dim=-2)
    return y * gate if gate is not None else y


def fd_gradient(fn, tensor, eps=1e-3):
    """Central finite differences of scalar ``fn()`` w.r.t. every entry of ``tensor`` (modified in place)."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    g = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        plus = float(fn())
        flat[i] = orig - eps
        minus = float(fn())
        flat[i] = orig
        g[i] = (plus - minus) / (2 * eps)
    return grad


def rel_error(a, b, floor=1e-10):
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    denom = max(a.norm().item(), b.norm().item())
    if denom < floor:
        return 0.0
    return (a - b).norm().item() / denom


def check_gradients(loss_fn, named_tensors, eps=1e-3):
    """Max relative error between autograd and central differences over all given tensors.

    ``named_tensors``: iterable of (name, tensor) leaf tensors with requires_grad.
    Returns ``{name: rel_error}``.
    """
    named = list(named_tensors)
    for _, t in named:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {n: (t.grad.clone() if t.grad is not None else torch.zeros_like(t)) for n, t in named}
    errors = {}
    with torch.no_grad():
        for n, t in named:
            numeric = fd_gradient(loss_fn, t, eps)
            errors[n] = rel_error(analytic[n], numeric)
    return errors


def directional_check(loss_fn, named_tensors, eps=1e-3, seed=0):
    """Per tensor, compare <grad, v> with the central difference along one random unit direction v."""
    named = list(named_tensors)
    gen = torch.Generator().manual_seed(seed)
    for _, t in named:
        t.grad = None
    loss_fn().backward()
    errors = {}
    with torch.no_grad():
        for n, t in named:
            v = torch.randn(t.shape, generator=gen, dtype=t.dtype)
            v /= v.norm()
            analytic = float((t.grad * v).sum()) if t.grad is not None else 0.0
            t.add_(eps * v)
            plus = float(loss_fn())
            t.sub_(2 * eps * v)
            minus = float(loss_fn())
            t.add_(eps * v)
            numeric = (plus - minus) / (2 * eps)
            denom = max(abs(analytic), abs(numeric))
            errors[n] = 0.0 if denom < 1e-10 else abs(analytic - numeric) / denom
    return errors


# --------------------------------------------------------------------------
# metric oracles (numpy, matrix formulation)


def iou_matrix(a, b):
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    inter = np.clip(np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def brute_nms(spans, scores, order_keys, threshold, top_k=None):
    """Suppress-forward NMS over the full IoU matrix; returns kept indices in rank order."""
    order = sorted(range(len(spans)), key=lambda i: (-scores[i], order_keys[i]))
    M = iou_matrix([spans[i] for i in order], [spans[i] for i in order])
    suppressed = np.zeros(len(order), dtype=bool)
    kept = []
    for a in range(len(order)):
        if suppressed[a]:
            continue
        kept.append(order[a])
        suppressed[a + 1:] |= M[a, a + 1:] >= threshold
    return kept[:top_k] if top_k is not None else kept


def brute_recall(spans, gts, k, thr, strict=True):
    if not spans:
        return 0
    M = iou_matrix(spans[:k], gts)
    return int((M > thr).any() if strict else (M >= thr).any())


def brute_ap(spans, gts, thr):
    """Precision/recall-curve form: AP = sum_k P(k) * (R(k) - R(k-1))."""
    if not spans:
        return 0.0
    M = iou_matrix(spans, gts)
    free = np.ones(len(gts), dtype=bool)
    tp = np.zeros(len(spans))
    for r in range(len(spans)):
        cand = np.where(free & (M[r] >= thr), M[r], -1.0)
        if cand.max() >= 0 and (M[r][free] >= thr).any():
            j = int(np.argmax(cand))
            free[j] = False
            tp[r] = 1
    cum = np.cumsum(tp)
    precision = cum / np.arange(1, len(spans) + 1)
    recall = cum / len(gts)
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum(precision * (recall - prev)))


def brute_top1_iou(spans, gts):
    if not spans:
        return 0.0
    return float(iou_matrix(spans[:1], gts).max())
