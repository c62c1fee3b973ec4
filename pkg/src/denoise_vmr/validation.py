"""Input checks shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np

from .data import Sample
from .errors import DataError


def check_samples(samples, require_labels: bool = False) -> list:
    """Validate a list of samples and return it as a list.

    Checks types, finiteness, per-sample shapes and that feature widths agree
    across the whole set.
    """
    if samples is None:
        raise DataError("expected a list of samples, got None")
    samples = list(samples)
    if not samples:
        raise DataError("expected at least one sample")
    v_dims, t_dims = set(), set()
    for i, s in enumerate(samples):
        if not isinstance(s, Sample):
            raise DataError(f"item {i} is {type(s).__name__}, expected Sample")
        v, t = np.asarray(s.clip.features), np.asarray(s.query.features)
        if v.ndim != 2 or v.shape[0] < 1:
            raise DataError(f"{s.vid}: clip features must be a non-empty matrix, got shape {v.shape}")
        if t.ndim != 2 or t.shape[0] < 1:
            raise DataError(f"{s.qid}: query features must be a non-empty matrix, got shape {t.shape}")
        if not np.isfinite(v).all() or not np.isfinite(t).all():
            raise DataError(f"sample {s.qid}: non-finite feature values")
        s.annotation.validate()
        if require_labels and s.noise_labels is None:
            raise DataError(f"sample {s.qid} has no noise labels")
        if s.noise_labels is not None and len(s.noise_labels) != v.shape[0]:
            raise DataError(f"sample {s.qid}: {len(s.noise_labels)} noise labels for {v.shape[0]} clips")
        v_dims.add(v.shape[1])
        t_dims.add(t.shape[1])
    if len(v_dims) > 1 or len(t_dims) > 1:
        raise DataError(f"inconsistent feature widths: video {sorted(v_dims)}, text {sorted(t_dims)}")
    return samples


def feature_dims(samples) -> tuple:
    s = samples[0]
    return s.clip.features.shape[1], s.query.features.shape[1]


def check_feature_dims(samples, video_dim: int, text_dim: int):
    """Raise if the data's feature widths differ from what a model was built for."""
    v, t = feature_dims(samples)
    if (v, t) != (video_dim, text_dim):
        raise DataError(
            f"feature width mismatch: model expects (video={video_dim}, text={text_dim}), "
            f"data has (video={v}, text={t}); sample {samples[0].qid} clip features {samples[0].clip.features.shape}"
        )
