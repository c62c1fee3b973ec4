"""Dataset ingestion, synthetic sample generation and noise statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError
from .features import read_features, write_features

VIDEO_SUBDIR = "vid"
TEXT_SUBDIR = "txt"
FEATURE_SUFFIX = ".drnf"
DEFAULT_CLIP_DURATION = 2.0


@dataclass
class ClipFeatures:
    features: np.ndarray
    clip_duration: float
    video_id: str

    @property
    def num_clips(self) -> int:
        return self.features.shape[0]


@dataclass
class QueryFeatures:
    features: np.ndarray
    query_text: str
    query_id: str

    @property
    def num_words(self) -> int:
        return self.features.shape[0]


@dataclass
class Annotation:
    query_id: str
    video_id: str
    windows: list
    duration: float

    def validate(self):
        if not self.windows:
            raise DataError(f"query {self.query_id}: no relevant windows")
        for start, end in self.windows:
            if not (0.0 <= start < end <= self.duration + 1e-6):
                raise DataError(
                    f"query {self.query_id}: window [{start}, {end}] outside [0, {self.duration}]"
                )

    def longest_window(self):
        # first one wins on ties
        return max(self.windows, key=lambda w: w[1] - w[0])


@dataclass
class Sample:
    """One (video, query, annotation) triple.

    Synthetic samples additionally carry ``noise_labels`` (1 = planted text-relevant
    clip, 0 = noise) and the seed they were drawn with.
    """

    clip: ClipFeatures
    query: QueryFeatures
    annotation: Annotation
    noise_labels: np.ndarray | None = None
    rng_seed: int | None = None

    def __iter__(self) -> Iterator:
        return iter((self.clip, self.query, self.annotation))

    @property
    def qid(self) -> str:
        return self.query.query_id

    @property
    def vid(self) -> str:
        return self.clip.video_id


SyntheticSample = Sample


def clip_membership(windows, num_clips: int, clip_duration: float) -> np.ndarray:
    """Per-clip 0/1 labels: a clip belongs to a window when at least half of its span is inside."""
    labels = np.zeros(num_clips, dtype=np.int64)
    starts = np.arange(num_clips) * clip_duration
    ends = starts + clip_duration
    for ws, we in windows:
        inside = np.clip(np.minimum(ends, we) - np.maximum(starts, ws), 0.0, None)
        labels[inside >= 0.5 * clip_duration - 1e-9] = 1
    return labels


def expected_clip_count(duration: float, clip_duration: float) -> int:
    return max(1, math.ceil(duration / clip_duration - 1e-6))


def _check_finite(arr: np.ndarray, path):
    bad = np.argwhere(~np.isfinite(arr))
    if len(bad):
        r, c = bad[0]
        raise DataError(f"{path}: non-finite value at row {r}, column {c}")


def parse_annotation_line(line: str, lineno: int = 0) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"annotation line {lineno}: invalid JSON ({exc})") from exc
    for key in ("qid", "vid", "query", "duration", "relevant_windows"):
        if key not in rec:
            raise DataError(f"annotation line {lineno}: missing field {key!r}")
    return rec


def load_dataset(annotation_path, feature_dir, clip_duration: float = DEFAULT_CLIP_DURATION) -> list:
    """Load annotations and their DRNF feature files, preserving file order.

    Video features live in ``feature_dir/vid/<vid>.drnf`` and query features in
    ``feature_dir/txt/<qid>.drnf``. A record may override ``clip_duration``.
    If ``feature_dir`` holds ``noise_labels.jsonl`` (written for synthetic sets) the
    labels are attached to the samples.
    """
    annotation_path = Path(annotation_path)
    feature_dir = Path(feature_dir)
    if not annotation_path.exists():
        raise DataError(f"annotation file not found: {annotation_path}")
    labels = _read_noise_labels(feature_dir / "noise_labels.jsonl")

    samples = []
    with annotation_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = parse_annotation_line(line, lineno)
            qid, vid = str(rec["qid"]), str(rec["vid"])
            cd = float(rec.get("clip_duration", clip_duration))
            ann = Annotation(
                query_id=qid,
                video_id=vid,
                windows=[(float(s), float(e)) for s, e in rec["relevant_windows"]],
                duration=float(rec["duration"]),
            )
            ann.validate()

            vpath = feature_dir / VIDEO_SUBDIR / f"{vid}{FEATURE_SUFFIX}"
            tpath = feature_dir / TEXT_SUBDIR / f"{qid}{FEATURE_SUFFIX}"
            if not vpath.exists():
                raise DataError(f"missing video features for video_id {vid}: {vpath}")
            if not tpath.exists():
                raise DataError(f"missing query features for query_id {qid}: {tpath}")
            vfeat = read_features(vpath)
            tfeat = read_features(tpath)
            _check_finite(vfeat, vpath)
            _check_finite(tfeat, tpath)
            n_expected = expected_clip_count(ann.duration, cd)
            if vfeat.shape[0] != n_expected:
                raise DataError(
                    f"{vpath}: {vfeat.shape[0]} rows but duration {ann.duration}s / "
                    f"clip_duration {cd}s implies {n_expected}"
                )
            samples.append(
                Sample(
                    clip=ClipFeatures(vfeat, cd, vid),
                    query=QueryFeatures(tfeat, str(rec["query"]), qid),
                    annotation=ann,
                    noise_labels=labels.get(qid),
                    rng_seed=rec.get("seed"),
                )
            )
    if samples:
        dims = {s.clip.features.shape[1] for s in samples}
        if len(dims) > 1:
            raise DataError(f"inconsistent video feature widths across dataset: {sorted(dims)}")
    return samples


def _read_noise_labels(path: Path) -> dict:
    if not path.exists():
        return {}
    out = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[str(rec["qid"])] = np.asarray(rec["labels"], dtype=np.int64)
    return out


def save_dataset(samples: Sequence[Sample], annotation_path, feature_dir):
    """Write samples as an annotation JSONL plus DRNF feature files (inverse of ``load_dataset``)."""
    annotation_path = Path(annotation_path)
    feature_dir = Path(feature_dir)
    annotation_path.parent.mkdir(parents=True, exist_ok=True)
    written_videos = set()
    label_lines = []
    with annotation_path.open("w", encoding="utf-8") as fh:
        for s in samples:
            rec = {
                "qid": s.qid,
                "vid": s.vid,
                "query": s.query.query_text,
                "duration": s.annotation.duration,
                "relevant_windows": [list(w) for w in s.annotation.windows],
                "clip_duration": s.clip.clip_duration,
            }
            if s.rng_seed is not None:
                rec["seed"] = s.rng_seed
            fh.write(json.dumps(rec) + "\n")
            if s.vid not in written_videos:
                write_features(feature_dir / VIDEO_SUBDIR / f"{s.vid}{FEATURE_SUFFIX}", s.clip.features)
                written_videos.add(s.vid)
            write_features(feature_dir / TEXT_SUBDIR / f"{s.qid}{FEATURE_SUFFIX}", s.query.features)
            if s.noise_labels is not None:
                label_lines.append(json.dumps({"qid": s.qid, "labels": [int(v) for v in s.noise_labels]}))
    if label_lines:
        (feature_dir / "noise_labels.jsonl").write_text("\n".join(label_lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    num_samples: int = 200
    clips_range: tuple = (32, 32)
    words_range: tuple = (8, 8)
    dim: int = 64
    gt_ratio_range: tuple = (0.05, 0.3)
    noise_fraction_range: tuple = (0.6, 0.95)
    windows_range: tuple = (1, 1)
    signal_strength: float = 0.8
    context_strength: float = 0.4
    word_noise: float = 0.1
    orth_bias: float = 0.9
    clip_duration: float = DEFAULT_CLIP_DURATION

    def validate(self):
        lo_clips, hi_clips = self.clips_range
        if not 1 <= lo_clips <= hi_clips:
            raise DataError(f"invalid clips_range {self.clips_range}")
        if not 1 <= self.words_range[0] <= self.words_range[1]:
            raise DataError(f"invalid words_range {self.words_range}")
        g_lo, g_hi = self.gt_ratio_range
        if not 0.0 < g_lo <= g_hi <= 1.0:
            raise DataError(f"invalid gt_ratio_range {self.gt_ratio_range}")
        if g_lo * lo_clips < 1:
            raise DataError(
                f"infeasible config: gt_ratio {g_lo} * {lo_clips} clips < 1 clip of ground truth"
            )
        n_lo, n_hi = self.noise_fraction_range
        if not 0.0 <= n_lo <= n_hi <= 1.0:
            raise DataError(f"invalid noise_fraction_range {self.noise_fraction_range}")
        if not 0.0 < self.signal_strength <= 1.0:
            raise DataError(f"signal_strength must lie in (0, 1], got {self.signal_strength}")
        if not 0.0 <= self.context_strength <= 1.0:
            raise DataError(f"context_strength must lie in [0, 1], got {self.context_strength}")
        if self.windows_range[0] < 1 or self.windows_range[0] > self.windows_range[1]:
            raise DataError(f"invalid windows_range {self.windows_range}")


def _split_runs(total: int, k: int, rng: np.random.Generator) -> list:
    k = min(k, total)
    cuts = np.sort(rng.choice(np.arange(1, total), size=k - 1, replace=False)) if k > 1 else []
    bounds = [0, *cuts, total]
    return [int(bounds[i + 1] - bounds[i]) for i in range(k)]


def _place_runs(lengths, num_clips: int, rng: np.random.Generator) -> list:
    """Non-overlapping, non-touching runs placed uniformly at random; returns [(start, stop)]."""
    free = num_clips - sum(lengths) - (len(lengths) - 1)
    if free < 0:
        # not enough room for gaps: merge into one run
        lengths, free = [sum(lengths)], num_clips - sum(lengths)
    gaps = rng.multinomial(free, np.ones(len(lengths) + 1) / (len(lengths) + 1))
    runs, pos = [], 0
    for i, length in enumerate(lengths):
        pos += gaps[i] + (1 if i else 0)
        runs.append((pos, pos + length))
        pos += length
    return runs


def _draw_sample(cfg: SynthConfig, index: int, rng: np.random.Generator, seed: int) -> Sample:
    num_clips = int(rng.integers(cfg.clips_range[0], cfg.clips_range[1] + 1))
    num_words = int(rng.integers(cfg.words_range[0], cfg.words_range[1] + 1))
    gt_ratio = rng.uniform(*cfg.gt_ratio_range)
    noise_frac = rng.uniform(*cfg.noise_fraction_range)
    n_windows = int(rng.integers(cfg.windows_range[0], cfg.windows_range[1] + 1))

    n_gt = min(num_clips, max(1, int(round(gt_ratio * num_clips))))
    n_noise = int(round(noise_frac * num_clips))
    if noise_frac > 0:
        n_noise = max(1, n_noise)
    n_noise = min(n_noise, num_clips - n_gt)

    runs = _place_runs(_split_runs(n_gt, n_windows, rng), num_clips, rng)
    kind = np.zeros(num_clips, dtype=np.int64)  # 0 noise, 1 context-relevant, 2 ground truth
    for a, b in runs:
        kind[a:b] = 2
    # context-relevant clips grow outward from the ground-truth runs
    n_context = num_clips - n_gt - n_noise
    while n_context > 0:
        rel = kind > 0
        touches = np.zeros(num_clips, dtype=bool)
        touches[1:] |= rel[:-1]
        touches[:-1] |= rel[1:]
        kind[rng.choice(np.flatnonzero(touches & ~rel))] = 1
        n_context -= 1

    dim = cfg.dim
    topic = rng.standard_normal(dim)
    t_hat = topic / np.linalg.norm(topic)
    eps = rng.standard_normal((num_clips, dim))
    clips = np.empty((num_clips, dim))
    a = cfg.signal_strength
    c = cfg.context_strength
    gt = kind == 2
    ctx = kind == 1
    noise = kind == 0
    clips[gt] = a * topic + math.sqrt(1 - a * a) * eps[gt]
    clips[ctx] = c * topic + math.sqrt(1 - c * c) * eps[ctx]
    proj = eps[noise] @ t_hat
    clips[noise] = eps[noise] - cfg.orth_bias * proj[:, None] * t_hat[None, :]
    words = topic[None, :] + cfg.word_noise * rng.standard_normal((num_words, dim))

    cd = cfg.clip_duration
    vid = f"synth_v{index:05d}"
    qid = f"synth_q{index:05d}"
    ann = Annotation(
        query_id=qid,
        video_id=vid,
        windows=[(a_ * cd, b_ * cd) for a_, b_ in runs],
        duration=num_clips * cd,
    )
    return Sample(
        clip=ClipFeatures(clips.astype(np.float32), cd, vid),
        query=QueryFeatures(words.astype(np.float32), f"synthetic topic {index}", qid),
        annotation=ann,
        noise_labels=(kind > 0).astype(np.int64),
        rng_seed=seed,
    )


def generate_synthetic(config: SynthConfig | None = None, seed: int = 0) -> list:
    """Draw ``config.num_samples`` samples with planted relevant/noise clips.

    Each sample has a latent topic vector ``t``; query words are ``t`` plus small
    noise, ground-truth clips are ``a*t + sqrt(1-a^2)*eps``, context clips use a
    weaker mixing coefficient, and noise clips are ``eps`` with most of its
    component along ``t`` removed. Labels mark ground-truth and context clips as 1.
    """
    cfg = config or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    return [_draw_sample(cfg, i, rng, seed) for i in range(cfg.num_samples)]


# --------------------------------------------------------------------------
# statistics


@dataclass
class StatsReport:
    video_ids: list
    gt_ratio: np.ndarray
    noise_fraction: np.ndarray
    bin_edges: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 11))

    @property
    def gt_hist(self) -> np.ndarray:
        return _hist(self.gt_ratio, self.bin_edges)

    @property
    def noise_hist(self) -> np.ndarray:
        return _hist(self.noise_fraction, self.bin_edges)

    def modal_bin(self, which: str) -> tuple:
        hist = self.gt_hist if which == "gt_ratio" else self.noise_hist
        k = int(np.argmax(hist))
        return float(self.bin_edges[k]), float(self.bin_edges[k + 1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["video_id", "gt_ratio", "noise_fraction"])
        for vid, g, n in zip(self.video_ids, self.gt_ratio, self.noise_fraction):
            w.writerow([vid, f"{g:.6f}", f"{n:.6f}"])
        return buf.getvalue()

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_start", "bin_end", "gt_ratio_count", "noise_fraction_count"])
        for k, (g, n) in enumerate(zip(self.gt_hist, self.noise_hist)):
            w.writerow([f"{self.bin_edges[k]:.1f}", f"{self.bin_edges[k + 1]:.1f}", int(g), int(n)])
        return buf.getvalue()


def _hist(values, edges):
    # right-closed last bin so a ratio of exactly 1.0 is counted
    counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=edges)
    return counts


def _union_length(windows) -> float:
    total, cur_s, cur_e = 0.0, None, None
    for s, e in sorted(windows):
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def dataset_statistics(samples: Sequence[Sample]) -> StatsReport:
    """Per-sample ground-truth duration ratio and noisy-clip fraction."""
    if not samples:
        raise DataError("dataset_statistics needs at least one sample")
    vids, gt, noise = [], [], []
    for s in samples:
        ann = s.annotation
        member = clip_membership(ann.windows, s.clip.num_clips, s.clip.clip_duration)
        vids.append(s.vid)
        gt.append(min(1.0, _union_length(ann.windows) / ann.duration))
        noise.append(1.0 - member.sum() / len(member))
    return StatsReport(vids, np.asarray(gt), np.asarray(noise))
