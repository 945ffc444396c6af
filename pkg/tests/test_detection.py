import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vssanet.autodiff import Tensor, new_tape
from vssanet.detection import (ASPECT_RATIOS, AnchorSet, Box, MatchResult, corners_to_cxcywh, decode_and_nms,
                               decode_boxes, encode_boxes, generate_anchors, iou, iou_matrix, match, mine_negatives,
                               multitask_loss, nms)


def raster_iou(a, b):
    """IoU of integer boxes by counting covered unit pixels."""
    hi = int(max(a[2], a[3], b[2], b[3])) + 1
    ma = np.zeros((hi, hi), bool)
    mb = np.zeros((hi, hi), bool)
    ma[int(a[1]):int(a[3]), int(a[0]):int(a[2])] = True
    mb[int(b[1]):int(b[3]), int(b[0]):int(b[2])] = True
    union = (ma | mb).sum()
    return (ma & mb).sum() / union if union else 0.0


int_box = st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 12), st.integers(1, 12)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


def random_boxes(rng, n, lo=0, hi=100, min_side=2, max_side=40):
    xy = rng.uniform(lo, hi, size=(n, 2))
    wh = rng.uniform(min_side, max_side, size=(n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def anchor_set(boxes_corners):
    c = corners_to_cxcywh(boxes_corners)
    n = len(c)
    return AnchorSet(c, np.zeros(n, int), np.zeros((n, 2), int), np.zeros(n, int))


# ---------------------------------------------------------------------------
# anchors
# ---------------------------------------------------------------------------

def test_anchor_count_for_standard_pyramid():
    a = generate_anchors([(19, 19), (10, 10), (5, 5)], 300)
    assert len(a) == 5 * (361 + 100 + 25) == 2430


def test_anchors_match_enumeration_oracle():
    sizes, S = [(3, 4), (2, 2)], 120
    a = generate_anchors(sizes, S)
    rows = []
    for k, (H, W) in enumerate(sizes):
        s = 0.2 + (0.95 - 0.2) * k / (len(sizes) - 1)
        for y in range(H):
            for x in range(W):
                for r in ASPECT_RATIOS:
                    rows.append(((x + 0.5) * S / W, (y + 0.5) * S / H, s * S * math.sqrt(r), s * S / math.sqrt(r)))
    np.testing.assert_allclose(a.boxes, np.array(rows), rtol=1e-12)


def test_center_anchor_of_5x5_is_centered():
    a = generate_anchors([(19, 19), (10, 10), (5, 5)], 300)
    sel = (a.level == 2) & (a.cell[:, 0] == 2) & (a.cell[:, 1] == 2) & (a.ratio_index == 0)
    cx, cy, w, h = a.boxes[sel][0]
    assert (cx, cy) == (150.0, 150.0) and w == h


def test_ratio_two_anchor_aspect():
    a = generate_anchors([(2, 2)], 100)
    w, h = a.boxes[a.ratio_index == 1][0, 2:]
    assert w / h == pytest.approx(2.0, rel=1e-12)


def test_empty_pyramid_rejected():
    with pytest.raises(ValueError):
        generate_anchors([], 300)


# ---------------------------------------------------------------------------
# IoU and box coding
# ---------------------------------------------------------------------------

def test_iou_examples():
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0


@settings(max_examples=200, deadline=None)
@given(a=int_box, b=int_box)
def test_iou_matches_pixel_count(a, b):
    assert iou(a, b) == pytest.approx(raster_iou(a, b), abs=1e-12)
    assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(a=int_box, b=int_box, dx=st.integers(-50, 50), dy=st.integers(-50, 50))
def test_iou_translation_invariant(a, b, dx, dy):
    shift = lambda t: (t[0] + dx, t[1] + dy, t[2] + dx, t[3] + dy)
    assert iou(shift(a), shift(b)) == pytest.approx(iou(a, b), abs=1e-12)


def test_iou_matrix_agrees_with_scalar():
    rng = np.random.default_rng(0)
    a, b = random_boxes(rng, 7), random_boxes(rng, 5)
    m = iou_matrix(a, b)
    for i in range(7):
        for j in range(5):
            assert m[i, j] == pytest.approx(iou(a[i], b[j]), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4), st.lists(st.floats(1, 100), min_size=4, max_size=4))
def test_encode_decode_inverse(g, a):
    anchor = np.array([a[0], a[1], a[2], a[3]])
    gt_c = np.array([anchor[0] + g[0] * anchor[2], anchor[1] + g[1] * anchor[3],
                     anchor[2] * math.exp(g[2]), anchor[3] * math.exp(g[3])])
    gt = np.concatenate([gt_c[:2] - gt_c[2:] / 2, gt_c[:2] + gt_c[2:] / 2])
    d = encode_boxes(gt[None], anchor[None])
    np.testing.assert_allclose(decode_boxes(d, anchor[None])[0], gt, rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(encode_boxes(decode_boxes(d, anchor[None]), anchor[None]), d, atol=1e-5)


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

def brute_match(anchor_corners, gt, labels, thr=0.5):
    M, G = len(anchor_corners), len(gt)
    ious = [[iou(anchor_corners[i], gt[j]) for j in range(G)] for i in range(M)]
    owner = [-1] * M
    for i in range(M):
        best_j, best = 0, ious[i][0]
        for j in range(1, G):
            if ious[i][j] > best:
                best_j, best = j, ious[i][j]
        if best >= thr:
            owner[i] = best_j
    taken = set()
    for j in range(G):
        best_i, best = None, -1.0
        for i in range(M):
            if i not in taken and ious[i][j] > best:
                best_i, best = i, ious[i][j]
        owner[best_i] = j
        taken.add(best_i)
    lab = [labels[owner[i]] if owner[i] >= 0 else 0 for i in range(M)]
    return np.array(lab), np.array(owner)


def test_match_equals_brute_force_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(100):
        M, G = int(rng.integers(5, 51)), int(rng.integers(1, 4))
        anchors = random_boxes(rng, M, max_side=30)
        if rng.random() < 0.3:
            anchors[: G] = random_boxes(rng, G)  # exact duplicates make ties
            anchors[G: 2 * G] = anchors[:G]
        gt = random_boxes(rng, G, max_side=30)
        labels = rng.integers(1, 4, size=G)
        got = match(anchor_set(anchors), gt, labels)
        exp_lab, exp_owner = brute_match(anchors, gt, labels)
        np.testing.assert_array_equal(got.labels, exp_lab)
        np.testing.assert_array_equal(got.matched_gt, exp_owner)


def test_match_identical_anchor_has_zero_target():
    gt = np.array([[10.0, 20.0, 50.0, 40.0]])
    m = match(anchor_set(gt), gt, [2])
    assert m.labels[0] == 2
    np.testing.assert_allclose(m.targets[0], 0.0, atol=1e-12)


def test_match_without_gt_is_all_background():
    m = match(anchor_set(random_boxes(np.random.default_rng(0), 10)), np.zeros((0, 4)), [])
    assert (m.labels == 0).all() and (m.matched_gt == -1).all()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_every_gt_gets_a_positive(seed):
    rng = np.random.default_rng(seed)
    anchors = random_boxes(rng, 30, max_side=10)
    gt = random_boxes(rng, 4, max_side=60)
    m = match(anchor_set(anchors), gt, [1, 2, 3, 1])
    assert set(m.matched_gt[m.matched_gt >= 0]) == {0, 1, 2, 3}


def test_match_clips_outside_box_with_warning(caplog):
    a = anchor_set(np.array([[0.0, 0.0, 10.0, 10.0]]))
    m = match(a, np.array([[-5.0, 0.0, 10.0, 10.0]]), [1], image_hw=(10, 10))
    assert m.labels[0] == 1 and "clipped" in caplog.text


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def loss_oracle(logits, deltas, labels, targets, alpha, ratio=3):
    total, n_pos = 0.0, int((labels > 0).sum())
    for i in range(labels.shape[0]):
        lse = np.log(np.exp(logits[i]).sum(-1))
        ce = lse - logits[i][np.arange(labels.shape[1]), labels[i]]
        pos = labels[i] > 0
        neg_losses = sorted(((ce[k], -k) for k in np.nonzero(~pos)[0]), reverse=True)
        keep = [-k for _, k in neg_losses[: ratio * max(int(pos.sum()), 1)]]
        total += ce[pos].sum() + ce[keep].sum()
        d = deltas[i][pos] - targets[i][pos]
        ad = np.abs(d)
        total += alpha * np.where(ad < 1, 0.5 * d * d, ad - 0.5).sum()
    return total / max(n_pos, 1)


def _loss_case(seed, alpha):
    rng = np.random.default_rng(seed)
    N, M, C = 2, 30, 3
    labels = np.where(rng.random((N, M)) < 0.15, rng.integers(1, C + 1, (N, M)), 0)
    targets = rng.normal(size=(N, M, 4)) * (labels[..., None] > 0)
    logits, deltas = rng.normal(size=(N, M, C + 1)) * 2, rng.normal(size=(N, M, 4))
    ms = [MatchResult(labels[i], targets[i], np.where(labels[i] > 0, 0, -1)) for i in range(N)]
    return logits, deltas, labels, targets, ms


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("alpha", [0.0, 0.1, 1.0])
def test_loss_matches_direct_formula(seed, alpha):
    logits, deltas, labels, targets, ms = _loss_case(seed, alpha)
    got = multitask_loss(Tensor(logits, dtype=np.float64), Tensor(deltas, dtype=np.float64), ms, alpha=alpha)
    assert got.total.item() == pytest.approx(loss_oracle(logits, deltas, labels, targets, alpha), rel=1e-12)
    assert got.total.item() >= 0


def test_alpha_zero_regression_gradient_is_exactly_zero():
    logits, deltas, _, _, ms = _loss_case(3, 0.0)
    d = Tensor(deltas, requires_grad=True, dtype=np.float64)
    with new_tape():
        multitask_loss(Tensor(logits, requires_grad=True, dtype=np.float64), d, ms, alpha=0.0).total.backward()
    assert d.grad is None or not np.any(d.grad)


def test_perfect_predictions_drive_loss_to_zero():
    labels = np.array([1, 0, 0, 2, 0, 0, 0, 0])
    targets = np.zeros((8, 4))
    targets[0] = [0.1, -0.2, 0.3, 0.0]
    logits = np.full((8, 3), -50.0)
    logits[np.arange(8), labels] = 50.0
    m = MatchResult(labels, targets, np.where(labels > 0, 0, -1))
    out = multitask_loss(Tensor(logits, dtype=np.float64), Tensor(targets.copy(), dtype=np.float64), [m])
    assert out.total.item() < 1e-30


def test_loss_rejects_empty_selection():
    m = MatchResult(np.zeros(0, int), np.zeros((0, 4)), np.zeros(0, int))
    with pytest.raises(ValueError):
        multitask_loss(Tensor(np.zeros((0, 3))), Tensor(np.zeros((0, 4))), [m])


def test_mining_keeps_three_per_positive():
    rng = np.random.default_rng(0)
    labels = np.zeros(40, int)
    labels[:4] = 1
    mask = mine_negatives(rng.normal(size=(40, 3)), labels)
    assert mask.sum() == 12 and not mask[:4].any()


def test_mining_with_no_positive_keeps_three():
    mask = mine_negatives(np.random.default_rng(1).normal(size=(10, 3)), np.zeros(10, int))
    assert mask.sum() == 3


# ---------------------------------------------------------------------------
# NMS and decoding
# ---------------------------------------------------------------------------

def brute_nms(boxes, scores, thr):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(iou(boxes[i], boxes[k]) <= thr for k in kept):
            kept.append(i)
    return kept


def test_nms_equals_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(150):
        n = int(rng.integers(1, 51))
        boxes = random_boxes(rng, n, hi=60)
        scores = np.round(rng.random(n), 2)  # rounding creates ties
        thr = float(rng.choice([0.3, 0.45, 0.7]))
        assert list(nms(boxes, scores, thr)) == brute_nms(boxes, scores, thr)


def test_nms_identical_boxes_keep_best():
    b = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], float)
    assert list(nms(b, np.array([0.8, 0.9]), 0.45)) == [1]


def test_decode_and_nms_background_only_is_empty():
    anchors = anchor_set(np.array([[0.0, 0.0, 10.0, 10.0]]))
    assert decode_and_nms(np.array([[1.0, 0.0, 0.0]]), np.zeros((1, 4)), anchors, (20, 20)) == []


def test_decode_and_nms_suppresses_duplicate():
    anchors = anchor_set(np.array([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]]))
    probs = np.array([[0.1, 0.9, 0.0], [0.2, 0.8, 0.0]])
    dets = decode_and_nms(probs, np.zeros((2, 4)), anchors, (20, 20))
    assert len(dets) == 1 and dets[0].score == pytest.approx(0.9) and dets[0].class_id == 1


def test_decode_and_nms_clips_and_sorts():
    rng = np.random.default_rng(5)
    anchors = anchor_set(random_boxes(rng, 40, hi=90))
    probs = rng.dirichlet(np.ones(4), size=40)
    dets = decode_and_nms(probs, rng.normal(0, 0.5, (40, 4)), anchors, (100, 100), max_out=7)
    assert len(dets) <= 7
    assert all(0 <= d.box.xmin < d.box.xmax <= 100 and 0 <= d.box.ymin < d.box.ymax <= 100 for d in dets)
    assert [d.score for d in dets] == sorted((d.score for d in dets), reverse=True)


def test_box_rejects_degenerate():
    with pytest.raises(ValueError):
        Box(5, 5, 5, 10)
