import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vssanet.detection import Box, Detection
from vssanet.evaluator import EvaluationError, evaluate, format_table, voc07_ap, write_csv


def box_iou(a, b):
    ix = max(0.0, min(a.xmax, b.xmax) - max(a.xmin, b.xmin))
    iy = max(0.0, min(a.ymax, b.ymax) - max(a.ymin, b.ymin))
    inter = ix * iy
    union = (a.xmax - a.xmin) * (a.ymax - a.ymin) + (b.xmax - b.xmin) * (b.ymax - b.ymin) - inter
    return inter / union


def oracle_ap(dets, gts, cls, thr=0.5):
    """Exhaustive VOC matcher plus a direct 11-point sum, recomputing counts at every rank."""
    flat = [(d.score, img, k, d) for img, ds in enumerate(dets) for k, d in enumerate(ds) if d.class_id == cls]
    order = sorted(range(len(flat)), key=lambda i: -flat[i][0])
    n_gt = sum(1 for g in gts for c, _ in g if c == cls)
    used = set()
    outcome = []
    for i in order:
        _, img, _, d = flat[i]
        best, best_j = -1.0, None
        for j, (c, b) in enumerate(gts[img]):
            if c != cls:
                continue
            v = box_iou(d.box, b)
            if v > best:
                best, best_j = v, j
        ok = best_j is not None and best >= thr and (img, best_j) not in used
        if ok:
            used.add((img, best_j))
        outcome.append(ok)
    total = 0.0
    for step in range(11):
        t = step / 10
        best_p = 0.0
        for k in range(1, len(outcome) + 1):
            tp = sum(outcome[:k])
            if tp / n_gt >= t:
                best_p = max(best_p, tp / k)
        total += best_p
    return total / 11


def random_instance(rng, n_img=3, n_det=10, n_gt=4, classes=2):
    gts = [[] for _ in range(n_img)]
    for _ in range(n_gt):
        x, y = rng.uniform(0, 50, 2)
        w, h = rng.uniform(5, 20, 2)
        gts[int(rng.integers(n_img))].append((int(rng.integers(1, classes + 1)), Box(x, y, x + w, y + h)))
    dets = [[] for _ in range(n_img)]
    for _ in range(n_det):
        img = int(rng.integers(n_img))
        if gts[img] and rng.random() < 0.7:
            c, g = gts[img][int(rng.integers(len(gts[img])))]
            j = np.clip(rng.normal(0, 3, 4), -4, 4)
            b = Box(g.xmin + j[0], g.ymin + j[1], g.xmax + abs(j[2]) + 1, g.ymax + abs(j[3]) + 1)
            c = c if rng.random() < 0.8 else int(rng.integers(1, classes + 1))
        else:
            x, y = rng.uniform(0, 50, 2)
            b, c = Box(x, y, x + 10, y + 10), int(rng.integers(1, classes + 1))
        dets[img].append(Detection(b, c, float(np.round(rng.random(), 2))))
    return dets, gts


def test_ap_matches_oracle_on_random_instances():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(150):
        dets, gts = random_instance(rng, n_det=int(rng.integers(0, 15)), n_gt=int(rng.integers(1, 6)))
        rep = evaluate(dets, gts, 2)
        for c, ap in rep.ap.items():
            assert abs(ap - oracle_ap(dets, gts, c)) <= 1e-9
            checked += 1
    assert checked >= 100


def test_ten_detections_four_gt_instance():
    rng = np.random.default_rng(10)
    dets, gts = random_instance(rng, n_img=2, n_det=10, n_gt=4, classes=1)
    rep = evaluate(dets, gts, 1)
    assert abs(rep.ap[1] - oracle_ap(dets, gts, 1)) <= 1e-9


def test_perfect_detections_give_map_one():
    gts = [[(1, Box(0, 0, 10, 10)), (2, Box(20, 20, 30, 40))], [(1, Box(5, 5, 9, 9))]]
    dets = [[Detection(b, c, 0.9) for c, b in g] for g in gts]
    rep = evaluate(dets, gts, 2)
    assert rep.mAP == 1.0 and rep.precision == 1.0 and rep.recall == 1.0


def test_no_detections_gives_zero():
    rep = evaluate([[]], [[(1, Box(0, 0, 10, 10))]], 1)
    assert rep.ap[1] == 0.0 and rep.recall == 0.0 and rep.mAP == 0.0


def test_duplicates_are_false_positives():
    g = Box(0, 0, 10, 10)
    rep = evaluate([[Detection(g, 1, 0.9), Detection(g, 1, 0.8)]], [[(1, g)]], 1)
    assert [m.true_positive for m in rep.matches] == [True, False]
    assert rep.ap[1] == 1.0  # the duplicate ranks below full recall


def test_map_averages_only_classes_with_ground_truth():
    gts = [[(1, Box(0, 0, 10, 10))]]
    dets = [[Detection(Box(0, 0, 10, 10), 1, 0.9), Detection(Box(50, 50, 60, 60), 3, 0.95)]]
    rep = evaluate(dets, gts, 3)
    assert set(rep.ap) == {1} and rep.mAP == 1.0


@pytest.mark.parametrize("bad", [0, 4])
def test_class_out_of_range_is_rejected(bad):
    with pytest.raises(EvaluationError):
        evaluate([[Detection(Box(0, 0, 1, 1), bad, 0.5)]], [[]], 3)
    with pytest.raises(EvaluationError):
        evaluate([[]], [[(bad, Box(0, 0, 1, 1))]], 3)


def test_mapping_inputs_keyed_by_image():
    gts = {"a": [(1, Box(0, 0, 10, 10))], "b": [(1, Box(0, 0, 4, 4))]}
    dets = {"a": [Detection(Box(0, 0, 10, 10), 1, 0.7)]}
    rep = evaluate(dets, gts, 1)
    assert rep.recall == 0.5 and rep.matches[0].image == "a"


def test_max_f1_point():
    g = [Box(0, 0, 10, 10), Box(20, 0, 30, 10)]
    gts = [[(1, g[0]), (1, g[1])]]
    dets = [[Detection(g[0], 1, 0.9), Detection(Box(50, 50, 60, 60), 1, 0.8), Detection(g[1], 1, 0.7),
             Detection(Box(70, 70, 80, 80), 1, 0.6)]]
    rep = evaluate(dets, gts, 1)
    # F1 by cut: 0.667, 0.5, 0.8, 0.667 -> threshold 0.7
    assert rep.threshold == 0.7 and rep.precision == pytest.approx(2 / 3) and rep.recall == 1.0


def test_voc07_ap_direct_values():
    assert voc07_ap(np.array([0.5, 1.0]), np.array([1.0, 0.5])) == pytest.approx((6 * 1.0 + 5 * 0.5) / 11)
    assert voc07_ap(np.array([]), np.array([])) == 0.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_low_false_positive_never_raises_ap(seed):
    rng = np.random.default_rng(seed)
    dets, gts = random_instance(rng, n_det=8, n_gt=4, classes=1)
    base = evaluate(dets, gts, 1)
    if 1 not in base.ap:
        return
    low = min((d.score for ds in dets for d in ds), default=1.0) - 0.01
    dets[0] = dets[0] + [Detection(Box(200, 200, 210, 210), 1, low)]
    assert evaluate(dets, gts, 1).ap[1] <= base.ap[1] + 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_ap_invariant_to_monotone_score_transform(seed):
    rng = np.random.default_rng(seed)
    dets, gts = random_instance(rng, n_det=10, n_gt=4)
    warped = [[Detection(d.box, d.class_id, d.score ** 3 * 0.5 + 0.1) for d in ds] for ds in dets]
    a, b = evaluate(dets, gts, 2), evaluate(warped, gts, 2)
    assert a.ap == b.ap


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_removing_a_matched_detection_never_raises_recall(seed):
    rng = np.random.default_rng(seed)
    dets, gts = random_instance(rng, n_det=10, n_gt=4, classes=1)
    rep = evaluate(dets, gts, 1)
    tps = [m for m in rep.matches if m.true_positive]
    if not tps:
        return
    full_recall = rep.pr_curves[1][0][-1]
    victim = tps[0]
    pruned = [[d for d in ds if not (img == victim.image and d.score == victim.score and d.class_id == 1)]
              for img, ds in enumerate(dets)]
    curve = evaluate(pruned, gts, 1).pr_curves[1][0]
    assert (curve[-1] if len(curve) else 0.0) <= full_recall


def test_values_stay_in_unit_interval():
    rng = np.random.default_rng(3)
    for _ in range(30):
        dets, gts = random_instance(rng)
        rep = evaluate(dets, gts, 2)
        assert all(0 <= v <= 1 for v in list(rep.ap.values()) + [rep.mAP, rep.precision, rep.recall])


def test_table_and_csv(tmp_path):
    gts = [[(1, Box(0, 0, 10, 10)), (2, Box(0, 0, 5, 5))]]
    rep = evaluate([[Detection(Box(0, 0, 10, 10), 1, 0.9)]], gts, 2)
    text = format_table(rep, {1: "circle", 2: "triangle"})
    assert "circle" in text and "mAP" in text and "max-F1" in text
    write_csv(rep, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["class", "ap"] and rows[-1][0] == "mAP" and float(rows[-1][1]) == pytest.approx(0.5)
