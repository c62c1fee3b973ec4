"""Per-clip alignment-score traces: CSV export and an SVG line plot."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .data import clip_membership


@dataclass
class ScoreTrace:
    qid: str
    vid: str
    tcd_score: np.ndarray
    decoder_fg_prob: np.ndarray
    mask: np.ndarray
    gt: np.ndarray
    mu: float


def score_trace(record, sample, mu: float) -> ScoreTrace:
    """Build a trace from an inference record and its sample."""
    gt = clip_membership(sample.annotation.windows, sample.clip.num_clips, sample.clip.clip_duration)
    return ScoreTrace(record.qid, record.vid, np.asarray(record.scores), np.asarray(record.fg_prob),
                      np.asarray(record.mask), gt, mu)


def trace_csv(trace: ScoreTrace, fingerprint: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["clip", "tcd_score", "decoder_fg_prob", "mask", "gt", "fingerprint"])
    for i in range(len(trace.tcd_score)):
        w.writerow([i, f"{trace.tcd_score[i]:.6f}", f"{trace.decoder_fg_prob[i]:.6f}",
                    int(trace.mask[i]), int(trace.gt[i]), fingerprint])
    return buf.getvalue()


def render_svg(trace: ScoreTrace, path, title: str | None = None):
    """Line plot of both score curves, the threshold as a dashed rule, masked clips shaded."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.arange(len(trace.tcd_score))
    # keep labels as text and give the threshold rule a stable id so the file stays inspectable
    plt.rcParams["svg.fonttype"] = "none"
    fig, ax = plt.subplots(figsize=(8, 3))
    for i in np.flatnonzero(trace.mask == 0):
        ax.axvspan(i - 0.5, i + 0.5, color="0.85", lw=0)
    for i in np.flatnonzero(trace.gt):
        ax.axvspan(i - 0.5, i + 0.5, ymin=0.0, ymax=0.03, color="tab:green", lw=0)
    ax.plot(x, trace.tcd_score, color="tab:blue", label="TCD alignment score")
    ax.plot(x, trace.decoder_fg_prob, color="tab:orange", label="decoder foreground prob.")
    ax.axhline(trace.mu, color="red", ls="--", lw=1, label=f"mu = {trace.mu:g}", gid="mu-threshold")
    ax.set_xlim(-0.5, len(x) - 0.5)
    ax.set_ylim(0, 1)
    ax.set_xlabel("clip")
    ax.set_title(title or f"{trace.qid} / {trace.vid}")
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
