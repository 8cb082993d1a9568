import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimmatch.datasets import synth_scene
from dimmatch.dim import PatchSpec, match
from dimmatch.evaluation import (BoundingBox, Homography, apply_homography, argmax_point, detect_matches, iou,
                                 local_maxima_points, match_detections, pr_curve, pr_from_matches,
                                 success_curve, top_k_peaks)

boxes = st.builds(BoundingBox, st.integers(-20, 20), st.integers(-20, 20), st.integers(1, 25), st.integers(1, 25))


def test_iou_cases():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(20, 0, 5, 5)) == 0.0
    assert iou(a, BoundingBox(5, 0, 10, 10)) == pytest.approx(1 / 3)


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == 1.0


@given(boxes, st.integers(0, 10))
def test_iou_falls_as_box_slides_away(a, d):
    assert iou(a, BoundingBox(a.x + d + 1, a.y, a.w, a.h)) <= iou(a, BoundingBox(a.x + d, a.y, a.w, a.h))


def test_box_helpers():
    b = BoundingBox.around(10, 20, 17, 16)
    assert b.as_tuple() == (2, 13, 17, 16)
    assert b.centre == (10, 20)
    assert BoundingBox(-3, 95, 10, 10).clipped(100, 100).as_tuple() == (0, 90, 10, 10)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 4)


def test_homography_mapping():
    assert apply_homography(Homography(np.eye(3)), (3.5, -2)) == (3.5, -2)
    T = Homography(np.array([[1, 0, 5], [0, 1, -7], [0, 0, 1.0]]))
    assert apply_homography(T, (1, 1)) == (6, -6)
    with pytest.raises(ValueError):
        Homography(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        apply_homography(Homography(np.array([[1, 0, 0], [0, 1, 0], [1, 0, 0.0]]) + np.diag([0, 0, 1e-3])),
                         (-1e-3, 0))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30)
def test_homography_roundtrip(seed):
    rng = np.random.default_rng(seed)
    m = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    m[2] = [1e-4 * rng.standard_normal(), 1e-4 * rng.standard_normal(), 1.0]
    H = Homography(m)
    p = rng.uniform(0, 100, 2)
    q = apply_homography(H.inverse(), apply_homography(H, p))
    np.testing.assert_allclose(q, p, atol=1e-9)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 4.0))
@settings(max_examples=30)
def test_homography_rescaling_consistent(seed, s):
    rng = np.random.default_rng(seed)
    m = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    m[2] = [1e-4, -1e-4, 1.0]
    H = Homography(m)
    p = rng.uniform(0, 200, 2)
    mapped = np.array(apply_homography(H, p)) * s
    np.testing.assert_allclose(apply_homography(H.scaled(s), p * s), mapped, rtol=1e-9, atol=1e-9)


# -- success curve -------------------------------------------------------------

def test_success_auc_cases():
    assert success_curve([1.0, 1.0]).auc == 1.0
    assert success_curve([0.0]).auc == 0.0
    # step function: 1 on [0, 0.2), 0.5 on [0.2, 0.8), 0 beyond
    assert success_curve([0.2, 0.8]).auc == pytest.approx(0.2 * 1.0 + 0.6 * 0.5)
    c = success_curve([0.2, 0.8])
    assert (c.values[19], c.values[20], c.values[79], c.values[80]) == (1.0, 0.5, 0.5, 0.0)
    with pytest.raises(ValueError):
        success_curve([])
    with pytest.raises(ValueError):
        success_curve([1.2])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_success_curve_shape(ious):
    c = success_curve(ious)
    assert np.all(np.diff(c.values) <= 0)
    assert 0 <= c.auc <= 1
    # fine-grid Riemann sum of the exceedance fraction
    grid = (np.arange(20000) + 0.5) / 20000
    expect = np.mean(np.array(ious)[None, :] > grid[:, None])
    assert c.auc == pytest.approx(expect, abs=1e-3)
    assert abs(c.auc - c.values.mean()) <= 1 / 101 + 1e-12


# -- peaks -------------------------------------------------------------------

def test_local_maxima_cases():
    Y = np.zeros((9, 9))
    assert local_maxima_points(Y) == []
    Y[4, 5] = 1.0
    assert local_maxima_points(Y) == [(5, 4, 1.0)]
    yy, xx = np.mgrid[:40, :40]
    surf = 2 * np.exp(-((xx - 10) ** 2 + (yy - 12) ** 2) / 8) + np.exp(-((xx - 30) ** 2 + (yy - 25) ** 2) / 8)
    assert [(x, y) for x, y, _ in top_k_peaks(surf, 5)] == [(10, 12), (30, 25)]
    assert argmax_point(surf) == (10, 12)


def test_plateau_counts_once():
    Y = np.zeros((7, 7))
    Y[2:5, 1:4] = 1.0
    assert local_maxima_points(Y) == [(2, 3, 1.0)]


def test_detect_matches_threshold_and_scene():
    Y = np.zeros((50, 50))
    Y[10, 10], Y[30, 40] = 0.9, 0.5
    assert detect_matches(Y, 1.0, (9, 9)) == []
    got = detect_matches(Y, 0.1, (9, 9))
    assert [b.centre for b, _ in got] == [(10, 10), (40, 30)]
    assert {b.as_tuple() for b, _ in detect_matches(Y, 0.6, (9, 9))} <= {b.as_tuple() for b, _ in got}


def test_detect_matches_on_planted_scenes():
    img, bx, _ = synth_scene(7, 2, (13, 13), (90, 90))
    for target, other in ((bx[0], bx[1]), (bx[1], bx[0])):
        Y = match(img, PatchSpec(img, target.as_tuple()), [PatchSpec(img, other.as_tuple())])[0]
        dets = detect_matches(Y, 0.5 * Y.max(), (13, 13))
        assert len(dets) == 1 and iou(dets[0][0], target) == 1.0
    # two copies of one template give two detections
    img2 = img.copy()
    b0, b1 = bx
    img2[b1.y:b1.y + 13, b1.x:b1.x + 13] = img[b0.y:b0.y + 13, b0.x:b0.x + 13]
    Y = match(img2, PatchSpec(img2, b0.as_tuple()), postprocess=False)[0]
    dets = detect_matches(Y, 0.3 * Y.max(), (13, 13))
    assert {d[0].as_tuple() for d in dets} == {b0.as_tuple(), b1.as_tuple()}


@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=30)
def test_detection_subset_property(seed, t1, t2):
    t1, t2 = sorted((t1, t2))
    Y = np.random.default_rng(seed).random((20, 20))
    lo = {(b.as_tuple(), s) for b, s in detect_matches(Y, t1, (5, 5))}
    hi = {(b.as_tuple(), s) for b, s in detect_matches(Y, t2, (5, 5))}
    assert hi <= lo


# -- precision / recall ------------------------------------------------------

def test_pr_counting_cases():
    gt = BoundingBox(0, 0, 10, 10)
    perfect = pr_curve([[(gt, 0.9)]], [gt])
    assert perfect.best_fscore == 1.0
    none = pr_curve([[]], [gt])
    assert none.best_fscore == 0.0 and np.all(none.recall == 0)
    double = pr_curve([[(gt, 0.9), (BoundingBox(1, 0, 10, 10), 0.8)]], [gt], thresholds=[0.0, 0.5])
    assert double.values[0] == pytest.approx(2 / 3)
    assert double.precision[0] == 0.5 and double.recall[0] == 1.0


def test_pr_absent_template_only_false_positives():
    c = pr_curve([[(BoundingBox(0, 0, 5, 5), 0.7)]], [None], thresholds=[0.0])
    assert c.precision[0] == 0.0 and c.values[0] == 0.0


def test_match_detections_greedy_order():
    g1, g2 = BoundingBox(0, 0, 10, 10), BoundingBox(30, 0, 10, 10)
    dets = [(BoundingBox(1, 0, 10, 10), 0.2), (g1, 0.9), (BoundingBox(31, 0, 10, 10), 0.5)]
    scores, tp = match_detections(dets, [g1, g2])
    assert list(scores) == [0.9, 0.5, 0.2]
    assert list(tp) == [True, True, False]


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), max_size=40), st.integers(0, 5))
def test_pr_sweep_invariants(items, extra_truth):
    scores = np.array([s for s, _ in items])
    is_tp = np.array([t for _, t in items], dtype=bool)
    n_truth = int(is_tp.sum()) + extra_truth
    c = pr_from_matches(scores, is_tp, n_truth)
    assert np.all(np.diff(c.recall) <= 1e-12)
    for t, r in zip(c.thresholds, c.recall):
        tp = int(np.sum(is_tp & (scores > t)))
        fn = n_truth - tp
        assert tp + fn == n_truth
        if n_truth:
            assert r == pytest.approx(tp / n_truth)
