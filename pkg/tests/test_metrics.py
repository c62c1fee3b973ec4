import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denoise_vmr.metrics import (
    MAP_THRESHOLDS,
    average_precision,
    evaluate,
    mean_average_precision,
    mean_iou,
    recall_at_k,
    temporal_iou,
)

from oracles import brute_ap, brute_recall, brute_top1_iou


def test_iou_examples():
    assert temporal_iou((0, 10), (5, 15)) == pytest.approx(1 / 3)
    assert temporal_iou((2, 7), (2, 7)) == 1.0
    assert temporal_iou((0, 1), (2, 3)) == 0.0
    assert temporal_iou((3, 3), (3, 3)) == 0.0


def test_recall_strict_boundary():
    gt = [(0.0, 10.0)]
    assert recall_at_k([(0.0, 6.0, 1.0)], gt, 1, 0.5) == 1  # IoU 0.6
    assert recall_at_k([(0.0, 5.0, 1.0)], gt, 1, 0.5) == 0  # IoU exactly 0.5
    assert recall_at_k([(0.0, 5.0, 1.0)], gt, 1, 0.5, strict=False) == 1


def test_ap_examples():
    gt = [(0.0, 10.0)]
    assert average_precision([(0.0, 10.0, 0.9)], gt, 0.5) == 1.0
    assert average_precision([(20.0, 30.0, 0.9), (0.0, 10.0, 0.8)], gt, 0.5) == 0.5


def test_miou_examples():
    gts = [[(0.0, 4.0)], [(2.0, 3.0)]]
    assert mean_iou([[(0.0, 4.0, 1.0)], [(2.0, 3.0, 1.0)]], gts) == 1.0
    assert mean_iou([[(5.0, 6.0, 1.0)], [(4.0, 5.0, 1.0)]], gts) == 0.0


def test_map_sweep_thresholds():
    assert MAP_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
    res = mean_average_precision([[(0.0, 10.0, 1.0)]], [[(0.0, 9.0)]])  # IoU 0.9
    assert res[0.9] == 1.0 and res[0.95] == 0.0
    assert res["avg"] == pytest.approx(0.9)


def _random_instance(rng: random.Random):
    def span():
        a, b = sorted(rng.choice([rng.uniform(0, 30), float(rng.randint(0, 30))]) for _ in range(2))
        return (a, b if b > a else a + 1.0)

    n_c, n_g = rng.randint(0, 10), rng.randint(1, 3)
    cands = [(*span(), rng.random()) for _ in range(n_c)]
    cands.sort(key=lambda c: -c[2])
    return cands, [span() for _ in range(n_g)]


def test_metrics_match_brute_force_oracles():
    rng = random.Random(1234)
    all_c, all_g = [], []
    for _ in range(100):
        cands, gts = _random_instance(rng)
        all_c.append(cands)
        all_g.append(gts)
        spans = [c[:2] for c in cands]
        for k in (1, 3, 5, 10):
            for thr in (0.3, 0.5, 0.7):
                assert recall_at_k(cands, gts, k, thr) == brute_recall(spans, gts, k, thr)
                assert recall_at_k(cands, gts, k, thr, strict=False) == brute_recall(spans, gts, k, thr, strict=False)
        for t in MAP_THRESHOLDS:
            assert abs(average_precision(cands, gts, t) - brute_ap(spans, gts, t)) <= 1e-9
    report = evaluate(all_c, all_g)
    per_query = [brute_top1_iou([c[:2] for c in cands], gts) for cands, gts in zip(all_c, all_g)]
    assert [row["top1_iou"] for row in report.per_query] == per_query
    assert report.miou == pytest.approx(sum(per_query) / 100, abs=1e-12)
    assert report.map_avg == pytest.approx(
        sum(sum(brute_ap([c[:2] for c in cs], g, t) for cs, g in zip(all_c, all_g)) / 100 for t in MAP_THRESHOLDS) / 10,
        abs=1e-9,
    )


interval = st.tuples(st.floats(0, 50), st.floats(0.1, 20)).map(lambda p: (p[0], p[0] + p[1]))


@settings(max_examples=100, deadline=None)
@given(interval, interval)
def test_iou_symmetric(a, b):
    assert temporal_iou(a, b) == temporal_iou(b, a)
    assert temporal_iou(a, a) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(interval, min_size=1, max_size=8), st.lists(interval, min_size=1, max_size=3),
       st.floats(0.05, 0.9), interval)
def test_recall_monotonicity(spans, gts, thr, extra):
    cands = [(s, e, 1.0) for s, e in spans]
    ks = [recall_at_k(cands, gts, k, thr) for k in range(1, len(cands) + 1)]
    assert ks == sorted(ks)
    assert recall_at_k(cands, gts, 3, min(thr + 0.05, 1.0)) <= recall_at_k(cands, gts, 3, thr)
    # a lower-ranked extra candidate never hurts recall over the whole list
    k = len(cands) + 1
    assert recall_at_k(cands + [(*extra, 0.0)], gts, k, thr) >= recall_at_k(cands, gts, k, thr)


@settings(max_examples=100, deadline=None)
@given(st.lists(interval, min_size=0, max_size=8), st.lists(interval, min_size=1, max_size=3))
def test_ap_range(spans, gts):
    cands = [(s, e, 1.0) for s, e in spans]
    for t in (0.5, 0.75):
        assert 0.0 <= average_precision(cands, gts, t) <= 1.0
    # one exact candidate per GT window with a tiny threshold gives AP 1
    assert average_precision([(s, e, 1.0) for s, e in gts], gts, 1e-9) == pytest.approx(1.0)


def test_report_outputs():
    rep = evaluate([[(0.0, 10.0, 1.0)], [(0.0, 1.0, 1.0)]], [[(0.0, 10.0)], [(5.0, 9.0)]], qids=["a", "b"])
    assert rep.r1_at_07 == 0.5 and rep.miou == 0.5
    csv_lines = rep.to_csv().splitlines()
    assert csv_lines[0] == "metric,value" and len(csv_lines) == 8
    assert rep.per_query_jsonl().count("\n") == 2
    assert "r1_at_07" in rep.table()
