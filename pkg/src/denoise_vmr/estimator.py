"""scikit-learn style facade over the training and inference loop.

``X`` is always a list of :class:`~denoise_vmr.data.Sample`; the annotations
inside the samples are the targets, so ``y`` is accepted and ignored.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ABLATIONS, RunConfig
from .data import ClipFeatures, Sample
from .train import Trainer, evaluate_model, run_inference, split_train_val, torch_dtype
from .validation import check_feature_dims, check_samples, feature_dims


class MomentRetriever(BaseEstimator):
    """Text-conditioned denoising + moment retrieval network.

    Parameters mirror the most used config keys; anything else goes through
    ``overrides`` as flat ``{"section.key": value}`` pairs.
    """

    def __init__(self, dim=64, mu=0.5, mask_mode="straight_through", lr=1e-4, batch_size=8,
                 epochs=30, max_steps=None, seed=0, ablation="full", val_fraction=0.0, overrides=None):
        self.dim = dim
        self.mu = mu
        self.mask_mode = mask_mode
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.seed = seed
        self.ablation = ablation
        self.val_fraction = val_fraction
        self.overrides = overrides

    def build_config(self) -> RunConfig:
        flat = {
            "model.dim": self.dim,
            "tcd.mu": self.mu,
            "tcd.mask_mode": self.mask_mode,
            "optim.lr": self.lr,
            "train.batch_size": self.batch_size,
            "train.epochs": self.epochs,
            "train.max_steps": self.max_steps,
            "train.seed": self.seed,
            "train.val_fraction": self.val_fraction,
        }
        flat.update(ABLATIONS.get(self.ablation, {}))
        flat.update(self.overrides or {})
        return RunConfig().with_overrides(flat)

    def fit(self, X, y=None, out_dir=None):
        samples = check_samples(X)
        cfg = self.build_config()
        train, val = (split_train_val(samples, cfg.train.val_fraction, cfg.train.seed)
                      if cfg.train.val_fraction > 0 else (samples, None))
        video_dim, text_dim = feature_dims(samples)
        trainer = Trainer(cfg, video_dim, text_dim)
        result = trainer.fit(train, val, out_dir=out_dir)
        if val:
            trainer.model.load_state_dict(result.best_state)
        self.model_ = trainer.model
        self.config_ = trainer.cfg
        self.history_ = result.history
        self.val_history_ = result.val_history
        self.n_features_in_ = video_dim
        return self

    def _dtype(self):
        return torch_dtype(self.config_)

    def _checked(self, X):
        check_is_fitted(self, "model_")
        samples = check_samples(X)
        check_feature_dims(samples, self.config_.model.video_input_dim, self.config_.model.text_input_dim)
        return samples

    def predict(self, X) -> list:
        """Ranked candidate sets, one per sample."""
        samples = self._checked(X)
        return [r.candidates for r in run_inference(self.model_, samples, self.config_, self._dtype())]

    def transform(self, X) -> list:
        """Per-sample alignment scores S (one array of length L_v each)."""
        samples = self._checked(X)
        return [r.scores for r in run_inference(self.model_, samples, self.config_, self._dtype())]

    def noise_masks(self, X) -> list:
        samples = self._checked(X)
        return [r.mask for r in run_inference(self.model_, samples, self.config_, self._dtype())]

    def evaluate(self, X):
        samples = self._checked(X)
        report, _ = evaluate_model(self.model_, samples, self.config_, self._dtype())
        return report

    def score(self, X, y=None) -> float:
        """R1 at IoU 0.7."""
        return self.evaluate(X).r1_at_07

    def save(self, path):
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, self.config_, extra={"estimator_params": self.get_params()})
        return path

    @classmethod
    def load(cls, path) -> "MomentRetriever":
        model, cfg, manifest = load_checkpoint(path)
        params = manifest.get("estimator_params") or {}
        est = cls(**params)
        est.model_ = model.to(torch_dtype(cfg))
        est.config_ = cfg
        est.history_ = []
        est.val_history_ = []
        est.n_features_in_ = cfg.model.video_input_dim
        return est


class NoiseMaskTransformer(TransformerMixin, BaseEstimator):
    """Zero the clips a fitted :class:`MomentRetriever` marks as noise.

    The output samples keep their shapes, so any downstream retrieval model can
    consume them unchanged.
    """

    def __init__(self, retriever=None):
        self.retriever = retriever

    def fit(self, X, y=None):
        retriever = self.retriever if self.retriever is not None else MomentRetriever()
        try:
            check_is_fitted(retriever, "model_")
        except NotFittedError:
            retriever = retriever.fit(X)
        self.retriever_ = retriever
        return self

    def transform(self, X) -> list:
        check_is_fitted(self, "retriever_")
        samples = check_samples(X)
        masks = self.retriever_.noise_masks(samples)
        out = []
        for s, m in zip(samples, masks):
            feats = s.clip.features * np.asarray(m, dtype=s.clip.features.dtype)[:, None]
            clip = ClipFeatures(feats, s.clip.clip_duration, s.clip.video_id)
            out.append(Sample(clip, s.query, s.annotation, s.noise_labels, s.rng_seed))
        return out
