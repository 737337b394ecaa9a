import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import random_benchmark, reference_ap, reference_summary
from lightswitch.bbox import BoundingBox
from lightswitch.errors import InvalidCounts
from lightswitch.metrics import (IOU_THRESHOLDS, DetectionRecord, average_precision, detection_summary, iou,
                               precision_recall, success_rate_ci)

# (label, sr %, upper %, lower %) as printed for 90 attempts per condition
SR_TABLE = [("CF", 84, 92, 77), ("CA", 79, 87, 71), ("FA", 68, 78, 59),
            ("CF-NBB", 77, 85, 68), ("CF-2R", 67, 76, 57), ("CF-1R", 52, 63, 42)]


def _rec(image, box, conf=1.0, label="switch"):
    return DetectionRecord(image, BoundingBox(*box), label, conf)


def _records(raw):
    return [DetectionRecord.from_dict(r) for r in raw]


def test_ci_examples():
    sr, lo, hi = success_rate_ci(76, 90)
    assert abs(sr - 0.8444) < 1e-4 and abs(lo - 0.769) < 1e-3 and abs(hi - 0.919) < 1e-3
    sr, lo, hi = success_rate_ci(47, 90)
    assert abs(lo - 0.419) < 1e-3 and abs(hi - 0.625) < 1e-3
    assert success_rate_ci(0, 10) == (0.0, 0.0, 0.0)
    assert success_rate_ci(10, 10) == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("label,sr,hi,lo", SR_TABLE)
def test_ci_reproduces_printed_rows(label, sr, hi, lo):
    got = success_rate_ci(round(sr / 100 * 90), 90)
    # printed values are rounded percentages; allow one point of rounding drift
    assert all(abs(round(100 * v) - want) <= 1 for v, want in zip(got, (sr, lo, hi)))


def test_ci_wilson_and_guards():
    _, lo, hi = success_rate_ci(0, 10, "wilson")
    assert lo == 0.0 and 0.25 < hi < 0.3
    for bad in ((5, 4), (-1, 4), (0, 0)):
        with pytest.raises(InvalidCounts):
            success_rate_ci(*bad)
    with pytest.raises(ValueError):
        success_rate_ci(1, 2, "bayes")


def test_iou_examples():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(20, 20, 30, 30)) == 0.0
    assert iou(a, BoundingBox(10, 0, 20, 10)) == 0.0
    assert abs(iou(a, BoundingBox(5, 0, 15, 10)) - 1 / 3) < 1e-15


def test_ap_examples():
    gt = [_rec("a", (0, 0, 10, 10))]
    assert average_precision([_rec("a", (0, 0, 10, 8), 0.9)], gt, 0.5) == 1.0
    assert average_precision([_rec("a", (0, 0, 10, 10), 0.9), _rec("a", (30, 30, 40, 40), 0.8)], gt) == 1.0
    gts = [_rec("a", (0, 0, 10, 10)), _rec("a", (50, 50, 60, 60))]
    preds = [_rec("a", (30, 30, 40, 40), 0.9), _rec("a", (0, 0, 10, 10), 0.8)]
    assert average_precision(preds, gts) == 0.25
    assert average_precision([], []) == 0.0


def test_summary_examples():
    gts = [_rec("a", (0, 0, 10, 10)), _rec("b", (5, 5, 25, 15), label="socket")]
    s = detection_summary(gts, gts)
    assert s == {"map50": 1.0, "map50_95": 1.0, "precision": 1.0, "recall": 1.0}
    s = detection_summary([], gts)
    assert s == {"map50": 0.0, "map50_95": 0.0, "precision": 0.0, "recall": 0.0}


def test_precision_recall_operating_point():
    gts = [_rec("a", (0, 0, 10, 10)), _rec("a", (50, 50, 60, 60))]
    preds = [_rec("a", (0, 0, 10, 10), 0.9), _rec("a", (50, 50, 60, 60), 0.4), _rec("a", (80, 80, 90, 90), 0.6)]
    assert precision_recall(preds, gts) == (0.5, 0.5)


def test_tie_breaking_follows_input_order():
    gts = [_rec("a", (0, 0, 10, 10))]
    first = [_rec("a", (0, 0, 10, 10), 0.5), _rec("a", (40, 40, 50, 50), 0.5)]
    assert average_precision(first, gts) == 1.0
    assert average_precision(first[::-1], gts) == 0.5


@pytest.mark.parametrize("seed", range(20))
def test_matches_reference_evaluator(seed):
    raw_p, raw_g = random_benchmark(np.random.default_rng(seed))
    got = detection_summary(_records(raw_p), _records(raw_g))
    ref = reference_summary(raw_p, raw_g)
    for k in ref:
        assert abs(got[k] - float(ref[k])) <= 1e-12, k


@given(seed=st.integers(0, 2**31))
def test_ap_properties(seed):
    rng = np.random.default_rng(seed)
    raw_p, raw_g = random_benchmark(rng)
    preds, gts = _records(raw_p), _records(raw_g)
    aps = [average_precision(preds, gts, t) for t in IOU_THRESHOLDS]
    assert all(0.0 <= a <= 1.0 for a in aps)
    assert all(b <= a + 1e-12 for a, b in zip(aps, aps[1:]))
    s = detection_summary(preds, gts)
    assert s["map50_95"] <= s["map50"] + 1e-12
    # distinct confidences make AP independent of input order
    confs = [p.confidence for p in preds]
    if len(set(confs)) == len(confs):
        perm = [preds[i] for i in rng.permutation(len(preds))]
        assert average_precision(perm, gts) == aps[0]


def test_reference_ap_is_exact_on_hand_case():
    gts = [{"image_id": "a", "bbox": [0, 0, 10, 10], "label": "s"}, {"image_id": "a", "bbox": [50, 50, 60, 60], "label": "s"}]
    preds = [{"image_id": "a", "bbox": [30, 30, 40, 40], "label": "s", "confidence": 0.9},
             {"image_id": "a", "bbox": [0, 0, 10, 10], "label": "s", "confidence": 0.8}]
    assert reference_ap(preds, gts, "0.5") == 0.25
