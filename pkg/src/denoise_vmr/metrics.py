"""Moment-retrieval metrics: temporal IoU, R@k, mAP over an IoU sweep, mIoU."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def temporal_iou(a, b) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def _span(c):
    # accepts (start, end), (start, end, score) or a Candidate
    if hasattr(c, "start"):
        return (c.start, c.end)
    return (c[0], c[1])


def recall_at_k(candidates, gts, k: int = 1, iou_threshold: float = 0.5, strict: bool = True) -> int:
    """1 if any of the top-k candidates overlaps any ground-truth window above the threshold."""
    for cand in list(candidates)[:k]:
        for gt in gts:
            iou = temporal_iou(_span(cand), gt)
            if iou > iou_threshold if strict else iou >= iou_threshold:
                return 1
    return 0


def average_precision(candidates, gts, iou_threshold: float) -> float:
    """Greedy rank-order matching; each TP takes the unmatched GT with the highest IoU (>= threshold).

    AP = sum of precision at each TP rank / number of GT windows.
    """
    if not gts:
        return 0.0
    matched = set()
    hits = 0
    total = 0.0
    for rank, cand in enumerate(candidates, 1):
        best, best_iou = None, -1.0
        for g, gt in enumerate(gts):
            if g in matched:
                continue
            iou = temporal_iou(_span(cand), gt)
            if iou >= iou_threshold and iou > best_iou:
                best, best_iou = g, iou
        if best is not None:
            matched.add(best)
            hits += 1
            total += hits / rank
    return total / len(gts)


def mean_average_precision(all_candidates, all_gts, thresholds=MAP_THRESHOLDS) -> dict:
    """Returns ``{threshold: mAP}`` plus ``"avg"``."""
    out = {}
    for t in thresholds:
        out[t] = float(np.mean([average_precision(c, g, t) for c, g in zip(all_candidates, all_gts)]))
    out["avg"] = float(np.mean([out[t] for t in thresholds]))
    return out


def top1_iou(candidates, gts) -> float:
    cands = list(candidates)
    if not cands:
        return 0.0
    return max(temporal_iou(_span(cands[0]), gt) for gt in gts)


def mean_iou(all_candidates, all_gts) -> float:
    return float(np.mean([top1_iou(c, g) for c, g in zip(all_candidates, all_gts)]))


@dataclass
class EvalReport:
    r1_at_03: float
    r1_at_05: float
    r1_at_07: float
    map_at_05: float
    map_at_075: float
    map_avg: float
    miou: float
    per_query: list = field(default_factory=list)

    METRICS = ("r1_at_03", "r1_at_05", "r1_at_07", "map_at_05", "map_at_075", "map_avg", "miou")

    def as_dict(self) -> dict:
        return {m: getattr(self, m) for m in self.METRICS}

    def to_csv(self) -> str:
        lines = ["metric,value"] + [f"{m},{getattr(self, m):.6f}" for m in self.METRICS]
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        width = max(len(m) for m in self.METRICS)
        rows = [f"{m.ljust(width)}  {100 * getattr(self, m):6.2f}" for m in self.METRICS]
        return "\n".join(rows)

    def per_query_jsonl(self) -> str:
        return "".join(json.dumps(row) + "\n" for row in self.per_query)


def evaluate(all_candidates, all_gts, qids=None, strict_recall: bool = True) -> EvalReport:
    """Dataset-level report from ranked candidates and ground-truth windows, aligned by position."""
    if len(all_candidates) != len(all_gts):
        raise ValueError("candidates and ground truths differ in length")
    if not all_gts:
        raise ValueError("nothing to evaluate")
    qids = qids or [str(i) for i in range(len(all_gts))]
    per_query = []
    for qid, cands, gts in zip(qids, all_candidates, all_gts):
        per_query.append({
            "qid": qid,
            "r1_at_03": recall_at_k(cands, gts, 1, 0.3, strict_recall),
            "r1_at_05": recall_at_k(cands, gts, 1, 0.5, strict_recall),
            "r1_at_07": recall_at_k(cands, gts, 1, 0.7, strict_recall),
            "ap_at_05": average_precision(cands, gts, 0.5),
            "ap_at_075": average_precision(cands, gts, 0.75),
            "top1_iou": top1_iou(cands, gts),
        })
    maps = mean_average_precision(all_candidates, all_gts)
    mean = lambda key: float(np.mean([row[key] for row in per_query]))  # noqa: E731
    return EvalReport(
        r1_at_03=mean("r1_at_03"),
        r1_at_05=mean("r1_at_05"),
        r1_at_07=mean("r1_at_07"),
        map_at_05=maps[0.5],
        map_at_075=maps[0.75],
        map_avg=maps["avg"],
        miou=mean("top1_iou"),
        per_query=per_query,
    )
