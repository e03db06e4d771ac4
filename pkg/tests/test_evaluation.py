import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from textfield.evaluation import EvalReport, greedy_match, iou_matrix, match_and_score, match_masks
from textfield.geometry import PolygonScene, rasterize

BOXES = ([(2, 2), (12, 2), (12, 8), (2, 8)],
         [(2, 12), (12, 12), (12, 18), (2, 18)],
         [(16, 2), (28, 2), (28, 18), (16, 18)])


def test_identity():
    scene = PolygonScene(32, 24, BOXES)
    _, labels = rasterize(scene)
    r = match_and_score(labels, scene)
    assert (r.tp, r.fp, r.fn) == (3, 0, 0)
    assert r.precision == r.recall == r.f_measure == 1.0


def test_no_detections():
    scene = PolygonScene(32, 24, BOXES[:2])
    r = match_and_score(np.zeros((24, 32), np.int32), scene)
    assert (r.tp, r.fp, r.fn) == (0, 0, 2)
    assert r.precision == r.recall == r.f_measure == 0.0


def test_partial_overlap_iou_06():
    scene = PolygonScene(32, 24, BOXES[:2])   # box 1 is 10x6 = 60 px
    det = np.zeros((24, 32), np.int32)
    det[2:8, 2:8] = 1                        # 36 px inside box 1: IOU 0.6
    r = match_and_score(det, scene)
    assert (r.tp, r.fp, r.fn) == (1, 0, 1)
    assert r.precision == 1.0 and r.recall == 0.5
    assert r.f_measure == pytest.approx(2 / 3, abs=1e-12)


def test_threshold_is_strict():
    scene = PolygonScene(32, 24, BOXES[:1])
    det = np.zeros((24, 32), np.int32)
    det[2:8, 2:7] = 1                        # IOU exactly 0.5
    assert match_and_score(det, scene).tp == 0
    assert match_and_score(det, scene, 0.49).tp == 1


def test_shape_mismatch():
    with pytest.raises(ValueError):
        match_and_score(np.zeros((5, 5), np.int32), PolygonScene(32, 24, BOXES))


def test_greedy_prefers_highest_iou():
    ious = np.array([[0.6, 0.9], [0.0, 0.8]])
    assert greedy_match(ious, 0.5) == [(0, 1, 0.9)]
    ious = np.array([[0.7, 0.7], [0.7, 0.0]])
    # ties: lower detection first, then lower gt
    assert greedy_match(ious, 0.5) == [(0, 0, 0.7)]


def test_report_arithmetic():
    a = EvalReport(2, 1, 0)
    b = EvalReport(1, 0, 3)
    s = a + b
    assert (s.tp, s.fp, s.fn) == (3, 1, 3)
    assert s.summary().startswith("P=0.750000 R=0.500000 F=0.600000")
    with pytest.raises(ValueError):
        a + EvalReport(0, 0, 0, 0.7)


@settings(max_examples=80, deadline=None)
@given(arrays(np.int32, (6, 8), elements=st.integers(0, 4)),
       arrays(np.int32, (6, 8), elements=st.integers(0, 3)),
       st.sampled_from([0.1, 0.3, 0.5, 0.7]))
def test_count_identities(dets, gt, thr):
    masks = [gt == k for k in range(1, 4)]
    report, pairs = match_masks(dets, masks, thr)
    n_det = np.unique(dets[dets != 0]).size
    assert report.tp + report.fn == len(masks)
    assert report.tp + report.fp == n_det
    assert len({d for d, _, _ in pairs}) == len({g for _, g, _ in pairs}) == report.tp
    assert all(iou > thr for _, _, iou in pairs)


def test_iou_matrix_values():
    det = np.array([[1, 1, 0, 2]])
    ids, m = iou_matrix(det, [np.array([[True, False, False, True]])])
    assert ids.tolist() == [1, 2]
    np.testing.assert_allclose(m[:, 0], [1 / 3, 1 / 2])
