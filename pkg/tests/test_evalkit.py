import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hifiyolo.detect import Box, Detection
from hifiyolo.evalkit import RECALL_POINTS, average_precision, interpolated_ap, map_metrics


def det(c, box, s):
    return Detection(Box(*box), c, s)


def pr_oracle_ap(flags, n_gt):
    """Rank-by-rank precision/recall, then the 101-point interpolation by direct search."""
    points = []
    tp = fp = 0
    for f in flags:
        tp += f
        fp += not f
        points.append((tp / n_gt, tp / (tp + fp)))
    total = 0.0
    for r in np.linspace(0, 1, 101):
        total += max([p for rec, p in points if rec >= r], default=0.0)
    return total / 101


def fixture():
    """2 classes, 4 scenes with hand-placed hits, a loose hit, a miss, an FP and a duplicate."""
    gts = {
        "A": [(0, Box(0.2, 0.2, 0.1, 0.1)), (1, Box(0.8, 0.2, 0.1, 0.1))],
        "B": [(0, Box(0.5, 0.5, 0.2, 0.2))],
        "C": [(0, Box(0.7, 0.7, 0.1, 0.1))],
        "D": [(1, Box(0.3, 0.8, 0.2, 0.1))],
    }
    dets = {
        "A": [det(0, (0.2, 0.2, 0.1, 0.1), 0.9), det(1, (0.8, 0.2, 0.1, 0.1), 0.6)],
        # IoU 0.155 / 0.245 = 0.633: a hit up to threshold 0.60, a miss from 0.65
        "B": [det(0, (0.545, 0.5, 0.2, 0.2), 0.8)],
        "C": [],
        "D": [det(0, (0.6, 0.3, 0.1, 0.1), 0.7), det(1, (0.3, 0.8, 0.2, 0.1), 0.3), det(1, (0.3, 0.8, 0.2, 0.1), 0.2)],
    }
    snr = {"A": 0.0, "B": 0.0, "C": 5.0, "D": 5.0}
    return dets, gts, snr


def test_perfect_detector_ap_is_one():
    gts = [(0, Box(0.2, 0.3, 0.1, 0.1)), (0, Box(0.7, 0.6, 0.2, 0.1))]
    dets = [det(0, (b.cx, b.cy, b.w, b.h), 0.9) for _, b in gts]
    assert average_precision(dets, gts, 0.5) == 1.0


def test_no_detections_ap_is_zero():
    assert average_precision([], [(0, Box(0.5, 0.5, 0.1, 0.1))], 0.5) == 0.0


def test_ap_undefined_without_gt():
    assert np.isnan(interpolated_ap(np.zeros(0, dtype=bool), 0))


def test_mixed_ranking_matches_pr_oracle():
    g = [(2, Box(0.1 + 0.3 * i, 0.5, 0.1, 0.1)) for i in range(3)]
    # ranks: TP, FP, TP, FP, TP
    dets = [
        det(2, (0.1, 0.5, 0.1, 0.1), 0.95),
        det(2, (0.1, 0.9, 0.1, 0.1), 0.9),
        det(2, (0.4, 0.5, 0.1, 0.1), 0.7),
        det(2, (0.4, 0.1, 0.1, 0.1), 0.5),
        det(2, (0.7, 0.5, 0.1, 0.1), 0.3),
    ]
    expected = pr_oracle_ap([True, False, True, False, True], 3)
    assert average_precision(dets, g, 0.5) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), max_size=30), st.integers(1, 20))
def test_interpolated_ap_matches_oracle(flags, extra):
    n_gt = sum(flags) + extra
    assert interpolated_ap(np.array(flags, dtype=bool), n_gt) == pytest.approx(pr_oracle_ap(flags, n_gt), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=30), st.integers(0, 10))
def test_zero_score_false_positive_moves_ap_at_most_one_point(flags, extra):
    n_gt = sum(flags) + extra
    if n_gt == 0:
        return
    a = interpolated_ap(np.array(flags, dtype=bool), n_gt)
    b = interpolated_ap(np.array(flags + [False], dtype=bool), n_gt)
    assert abs(a - b) <= 1 / 101 + 1e-12


def test_oracle_detector_scores_full_marks():
    _, gts, snr = fixture()
    dets = {k: [Detection(b, c, 1.0) for c, b in v] for k, v in gts.items()}
    r = map_metrics(dets, gts, snr)
    assert r.map_50_95 == 100.0 and r.map_50 == 100.0 and r.f1 == 1.0
    assert r.counts == {"tp": 5, "fp": 0, "fn": 0}


def test_fixture_matches_manual_enumeration():
    dets, gts, snr = fixture()
    r = map_metrics(dets, gts, snr)
    # class 0 at IoU 0.5: TP(0.9) TP(0.8) FP(0.7) of 3 gts -> precision 1 up to recall 2/3 (67 of 101 points)
    # class 1: TP(0.6) TP(0.3) FP(0.2) of 2 gts -> AP 1
    ap0_50 = 67 / 101
    assert r.per_class[0]["ap50"] == pytest.approx(ap0_50, abs=1e-12)
    assert r.per_class[1]["ap50"] == pytest.approx(1.0, abs=1e-12)
    assert r.map_50 == pytest.approx(100 * (ap0_50 + 1) / 2, abs=1e-10)
    # from IoU 0.65 the loose hit in B becomes an FP: recall stops at 1/3 (34 points)
    ap0_5095 = (3 * 67 + 7 * 34) / (10 * 101)
    assert r.per_class[0]["ap50_95"] == pytest.approx(ap0_5095, abs=1e-12)
    assert r.map_50_95 == pytest.approx(100 * (ap0_5095 + 1) / 2, abs=1e-10)
    # pooled at IoU 0.5: T T F T T F over 5 gts; best F1 = 8 / 10 at confidence 0.3
    assert r.f1 == pytest.approx(0.8, abs=1e-12)
    assert r.conf_threshold == pytest.approx(0.3)
    assert r.counts == {"tp": 4, "fp": 1, "fn": 1}
    assert r.f1_at_default == pytest.approx(0.8, abs=1e-12)
    # per class at 0.3: class 0 F1 = 4/6, class 1 F1 = 1
    assert r.f1_macro == pytest.approx((2 / 3 + 1) / 2, abs=1e-12)
    # SNR 0 holds A and B only: class 0 TP TP of 2 gts, class 1 TP of 1 gt
    assert r.per_snr[0.0]["map_50"] == pytest.approx(100.0)
    assert r.per_snr[5.0]["n_scenes"] == 2


def test_report_is_permutation_invariant():
    dets, gts, snr = fixture()
    base = map_metrics(dets, gts, snr)
    rng = np.random.default_rng(0)
    for _ in range(5):
        keys = list(gts)
        rng.shuffle(keys)
        d2 = {k: list(reversed(dets[k])) for k in keys}
        g2 = {k: gts[k] for k in keys}
        s2 = {k: snr[k] for k in keys}
        r = map_metrics(d2, g2, s2)
        assert r.to_kv() == base.to_kv()
        assert r.to_text() == base.to_text()
        assert r.snr_csv() == base.snr_csv()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_report_invariants_on_random_scenes(seed):
    rng = np.random.default_rng(seed)
    gts, dets = {}, {}
    for s in range(4):
        k = int(rng.integers(0, 4))
        rows = [(int(rng.integers(0, 3)), Box(*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.3, 2))) for _ in range(k)]
        gts[str(s)] = rows
        noisy = [Detection(Box(b.cx + rng.normal(0, 0.02), b.cy + rng.normal(0, 0.02), b.w, b.h), c, float(rng.random())) for c, b in rows]
        fps = [Detection(Box(*rng.uniform(0.2, 0.8, 2), 0.1, 0.1), int(rng.integers(0, 3)), float(rng.random())) for _ in range(int(rng.integers(0, 3)))]
        dets[str(s)] = noisy + fps
    r = map_metrics(dets, gts)
    assert 0 <= r.map_50_95 <= r.map_50 + 1e-9 <= 100 + 1e-9
    assert 0 <= r.f1 <= 1
    assert r.f1 >= r.f1_at_default - 1e-12


def test_report_formats():
    dets, gts, snr = fixture()
    r = map_metrics(dets, gts, snr)
    text = r.to_text()
    assert text.splitlines()[0].startswith("F1 operating point")
    kv = dict(line.split("=") for line in r.to_kv().splitlines())
    assert float(kv["map_50"]) == pytest.approx(r.map_50, abs=1e-5)
    assert kv["tp"] == "4"
    csv = r.snr_csv().splitlines()
    assert csv[0] == "snr_db,map_50_95,map_50,f1,n_scenes"
    assert len(csv) == 3


def test_recall_grid():
    assert len(RECALL_POINTS) == 101 and RECALL_POINTS[0] == 0 and RECALL_POINTS[-1] == 1
