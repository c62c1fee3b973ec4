"""Training loop, batching, inference and evaluation."""

from __future__ import annotations

import copy
import csv
import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import ABLATIONS, RunConfig
from .decoder import CandidateSet, predict
from .errors import NumericError
from .metrics import EvalReport, evaluate
from .model import MomentRetrievalNet, build_targets, compute_losses

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "epoch", "warmup", "contrastive", "boundary", "cls", "global", "text", "total")


def set_seed(seed: int):
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def torch_dtype(cfg: RunConfig):
    return torch.float64 if cfg.train.dtype == "float64" else torch.float32


def ablation_row(cfg: RunConfig) -> str:
    """Name of the ablation row whose switches match ``cfg`` exactly, else ``"custom"``."""
    flat = cfg.to_flat()
    default = RunConfig().to_flat()
    keys = {k for k in flat if k.startswith("ablation.") or k == "cio.backbone"}
    for name, switches in ABLATIONS.items():
        expected = {k: switches.get(k, default[k]) for k in keys}
        if all(flat[k] == v for k, v in expected.items()):
            return name
    return "custom"


def split_train_val(samples, val_fraction: float, seed: int):
    """Seed-stable shuffle, then the first ``1 - val_fraction`` share is training."""
    order = np.random.default_rng(seed).permutation(len(samples))
    n_val = int(round(val_fraction * len(samples)))
    if val_fraction > 0 and len(samples) > 1:
        n_val = max(1, n_val)
    n_train = len(samples) - n_val
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


def shape_key(sample):
    return (sample.clip.num_clips, sample.query.num_words)


def make_batches(samples, batch_size: int, rng: np.random.Generator | None = None) -> list:
    """Group same-shape samples into batches; shuffles within and across buckets when ``rng`` is given."""
    buckets = defaultdict(list)
    idx = rng.permutation(len(samples)) if rng is not None else range(len(samples))
    for i in idx:
        buckets[shape_key(samples[i])].append(samples[i])
    batches = []
    for key in sorted(buckets):
        group = buckets[key]
        batches.extend(group[i:i + batch_size] for i in range(0, len(group), batch_size))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def collate(samples, dtype=torch.float32):
    video = torch.as_tensor(np.stack([s.clip.features for s in samples]), dtype=dtype)
    text = torch.as_tensor(np.stack([s.query.features for s in samples]), dtype=dtype)
    return video, text


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    best_state: dict | None = None
    best_metric: float = -math.inf
    best_epoch: int = -1
    epochs_run: int = 0
    steps: int = 0


class Trainer:
    def __init__(self, cfg: RunConfig, video_dim: int, text_dim: int, model: MomentRetrievalNet | None = None):
        cfg = cfg.with_overrides({"model.video_input_dim": video_dim, "model.text_input_dim": text_dim})
        self.cfg = cfg
        self.dtype = torch_dtype(cfg)
        if cfg.train.deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)
        set_seed(cfg.train.seed)
        self.model = model if model is not None else MomentRetrievalNet(cfg, video_dim, text_dim)
        self.model.to(self.dtype)
        self.optimizer = torch.optim.AdamW(
            self.model.parameters(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay
        )
        self.step = 0
        self.last_components = None

    def train_step(self, batch, warmup: bool = False) -> dict:
        self.model.train()
        video, text = collate(batch, self.dtype)
        targets = build_targets(batch, self.dtype)
        out = self.model(video, text, warmup=warmup)
        breakdown = compute_losses(out, targets, self.cfg)
        loss = breakdown.total()
        comps = breakdown.components()
        if not torch.isfinite(loss):
            raise NumericError(
                f"non-finite loss at step {self.step}; components {comps}; "
                f"previous step {self.last_components}"
            )
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.cfg.optim.clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.optim.clip_norm)
        self.optimizer.step()
        self.last_components = comps
        self.step += 1
        return comps

    def fit(self, train, val=None, out_dir=None, eval_every: int = 1, callback=None) -> TrainResult:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.train.seed)
        result = TrainResult()
        log_rows = []
        fingerprint = cfg.fingerprint()
        max_steps = cfg.train.max_steps
        epoch = 0
        while True:
            if max_steps is None and epoch >= cfg.train.epochs:
                break
            if max_steps is not None and self.step >= max_steps:
                break
            warmup = epoch < cfg.tcd.warmup_epochs
            for batch in make_batches(train, cfg.train.batch_size, rng):
                comps = self.train_step(batch, warmup=warmup)
                row = {"step": self.step - 1, "epoch": epoch, "warmup": int(warmup), **comps}
                result.history.append(row)
                log_rows.append(row)
                if max_steps is not None and self.step >= max_steps:
                    break
            epoch += 1
            if val and (epoch % eval_every == 0):
                report, _ = evaluate_model(self.model, val, cfg, self.dtype)
                metric = report.r1_at_07
                result.val_history.append({"epoch": epoch - 1, **report.as_dict()})
                if metric > result.best_metric:
                    result.best_metric = metric
                    result.best_epoch = epoch - 1
                    result.best_state = copy.deepcopy(self.model.state_dict())
            if callback is not None:
                callback(epoch - 1, result)
        result.epochs_run = epoch
        result.steps = self.step
        if result.best_state is None:
            result.best_state = copy.deepcopy(self.model.state_dict())
            result.best_epoch = epoch - 1

        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            extra = {"ablation_row": ablation_row(cfg)}
            save_checkpoint(out_dir / "last", self.model, cfg, epoch - 1, extra)
            best = copy.deepcopy(self.model)
            best.load_state_dict(result.best_state)
            save_checkpoint(out_dir / "best", best, cfg, result.best_epoch, extra)
            write_loss_log(out_dir / "train_log.csv", log_rows, fingerprint)
        return result


def write_loss_log(path, rows, fingerprint: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*LOG_FIELDS, "fingerprint"])
        for row in rows:
            w.writerow([*(row[k] for k in LOG_FIELDS), fingerprint])


# --------------------------------------------------------------------------
# inference


@dataclass
class InferenceRecord:
    qid: str
    vid: str
    duration: float
    scores: np.ndarray
    mask: np.ndarray
    fg_prob: np.ndarray
    guard_fired: bool
    candidates: CandidateSet


def run_inference(model: MomentRetrievalNet, samples, cfg: RunConfig, dtype=torch.float32,
                  batch_size: int = 32) -> list:
    """Forward pass without the feedback branch, in input order."""
    model.eval()
    records = [None] * len(samples)
    index = {id(s): i for i, s in enumerate(samples)}
    with torch.no_grad():
        for batch in make_batches(samples, batch_size):
            video, text = collate(batch, dtype)
            out = model(video, text, warmup=False, with_feedback=False)
            for b, s in enumerate(batch):
                cands = predict(out.heads, s.annotation.duration, s.qid, cfg.decoder.nms_threshold,
                                cfg.decoder.top_k, index=b, clip_seconds=s.clip.clip_duration)
                records[index[id(s)]] = InferenceRecord(
                    qid=s.qid,
                    vid=s.vid,
                    duration=s.annotation.duration,
                    scores=out.scores[b].numpy().astype(np.float64),
                    mask=out.mask[b].numpy().astype(np.int64),
                    fg_prob=out.heads.cls_prob[b].numpy().astype(np.float64),
                    guard_fired=bool(out.tcd.result.guard_fired[b]),
                    candidates=cands,
                )
    return records


def evaluate_model(model, samples, cfg: RunConfig, dtype=torch.float32) -> tuple:
    records = run_inference(model, samples, cfg, dtype)
    report = evaluate(
        [r.candidates.windows() for r in records],
        [s.annotation.windows for s in samples],
        qids=[s.qid for s in samples],
        strict_recall=cfg.metrics.strict_recall,
    )
    return report, records
