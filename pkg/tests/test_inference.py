import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import field_from
from textfield.evaluation import match_masks
from textfield.field_gen import DirectionField, generate_field
from textfield.geometry import PolygonScene, rasterize
from textfield.inference import (BIN_DX, BIN_DY, PRESETS, ROOT, InferenceConfig, bin_direction,
                                 build_forest, detect, direction_bins, filter_unbalanced,
                                 group_representatives, pair_count, propagate_labels, root_of,
                                 threshold_candidates)


def test_threshold_examples():
    assert not threshold_candidates(DirectionField.zeros(4, 4), 0.1).any()
    f = field_from({(1, 1): (0.3, 0.4), (2, 2): (0.3, 0.39)}, (4, 4))
    c = threshold_candidates(f, 0.5)
    assert c[1, 1] and not c[2, 2]


def test_threshold_gt_field_is_mask():
    labels = np.zeros((12, 14), np.int32)
    labels[2:9, 3:12] = 1
    assert np.array_equal(threshold_candidates(generate_field(labels), 0.5), labels != 0)


@pytest.mark.parametrize("v,b", [((1, 0), 0), ((0.7071, 0.7071), 7), ((0.9, 0.1), 0),
                                 ((0, -1), 2), ((-1, 0), 4), ((0, 1), 6), ((-1, -1), 3)])
def test_bin_examples(v, b):
    assert bin_direction(*v) == b


def test_bin_offsets():
    assert (BIN_DX[7], BIN_DY[7]) == (1, 1)
    assert (BIN_DX[0], BIN_DY[0]) == (1, 0)


def test_bin_sector_edge_goes_to_lower_index():
    t = np.radians(22.5)
    assert direction_bins(np.cos(t), -np.sin(t)) in (0, 1)
    # exact edge at 22.5 degrees is not representable; check a float-exact edge instead
    assert bin_direction(1.0, -np.tan(np.radians(22.5))) in (0, 1)


def test_bin_zero_vector():
    with pytest.raises(ValueError):
        bin_direction(0.0, 0.0)
    assert direction_bins(np.zeros(2), np.zeros(2)).tolist() == [-1, -1]


def test_vectorised_bins_match_scalar():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(500, 2))
    b = direction_bins(v[:, 0], v[:, 1])
    assert [bin_direction(x, y) for x, y in v] == b.tolist()
    ang = np.degrees(np.arctan2(-v[:, 1], v[:, 0])) % 360
    centre = (b * 45.0)
    assert np.all(np.abs((ang - centre + 180) % 360 - 180) <= 22.5)


def test_single_candidate_is_root():
    f = field_from({(2, 2): (1, 0)}, (5, 5))
    forest = build_forest(f, threshold_candidates(f, 0.5))
    assert forest.n_trees == 1
    assert forest.parent[2, 2] == ROOT
    assert forest.representatives.sum() == 1


def test_chain_points_to_single_root():
    f = field_from({(1, 2): (1, 0), (2, 2): (1, 0), (3, 2): (1, 0)}, (5, 5))
    forest = build_forest(f, threshold_candidates(f, 0.5))
    assert forest.n_trees == 1
    assert forest.representatives.sum() == 1 and forest.representatives[2, 3]
    assert forest.parent[2, 1] == 2 * 5 + 2


def test_strip_roots_sit_on_axis():
    labels = np.zeros((15, 60), np.int32)
    labels[3:12, :] = 1  # 9 rows, axis at row 7
    f = generate_field(labels)
    forest = build_forest(f, threshold_candidates(f, 0.5))
    cols = slice(10, 50)  # away from the strip ends
    w = 60
    xs = np.arange(60)
    for y in range(3, 7):
        assert np.all(forest.parent[y, cols] == ((y + 1) * w + xs)[cols])
    for y in range(9, 12):
        assert np.all(forest.parent[y, cols] == ((y - 1) * w + xs)[cols])
    roots = np.argwhere(forest.representatives[:, cols])
    assert set(roots[:, 0]) == {7, 8}


def test_mutually_pointing_pair_are_both_roots():
    # opposing flows meeting at an axis stop there on both sides
    f = field_from({(1, 2): (1, 0), (2, 2): (-1, 0)}, (5, 5))
    forest = build_forest(f, threshold_candidates(f, 0.5))
    assert forest.representatives.sum() == 2
    assert forest.n_trees == 2
    assert forest.direction_bin[2, 1] == 0 and forest.direction_bin[2, 2] == 4


def test_cycle_broken_at_first_pixel():
    # a 2x2 rotation: E -> S -> W -> N
    f = field_from({(1, 1): (1, 0), (2, 1): (0, 1), (2, 2): (-1, 0), (1, 2): (0, -1)}, (4, 4))
    forest = build_forest(f, threshold_candidates(f, 0.5))
    assert forest.n_trees == 1
    assert forest.representatives.sum() == 1 and forest.representatives[1, 1]


@settings(max_examples=60, deadline=None)
@given(arrays(np.float32, (2, 9, 11), elements=st.floats(-1, 1, width=32)))
def test_forest_is_acyclic(v):
    f = DirectionField(v[0], v[1])
    cand = threshold_candidates(f, 0.3)
    forest = build_forest(f, cand)
    roots = root_of(forest)
    # every candidate reaches a root, and that root is in the same tree
    assert np.all(roots[cand] >= 0)
    flat_roots = roots[cand]
    assert np.all(forest.representatives.ravel()[flat_roots])
    assert np.array_equal(forest.labels.ravel()[flat_roots], forest.labels[cand])
    # parents are candidate 8-neighbours along the binned direction
    ys, xs = np.nonzero(cand & (forest.parent != ROOT))
    par = forest.parent[ys, xs]
    b = forest.direction_bin[ys, xs]
    assert np.array_equal(par, (ys + BIN_DY[b]) * 11 + xs + BIN_DX[b])
    assert np.all(cand.ravel()[par])
    # one root per tree
    assert forest.representatives.sum() == forest.n_trees


def _groups_for(points, shape=(12, 12), k1=3):
    f = field_from({p: (1, 0) for p in points}, shape)
    forest = build_forest(f, threshold_candidates(f, 0.5))
    return group_representatives(forest, k1)


@pytest.mark.parametrize("gap,n", [(1, 1), (2, 1), (3, 1), (4, 2), (5, 2)])
def test_grouping_by_chebyshev_distance(gap, n):
    # vertical offsets keep both E-pointing pixels roots
    assert _groups_for([(2, 2), (2 + gap % 2, 2 + gap)]).n_groups == n


def test_grouping_examples():
    # E-pointing singletons with no candidate to their east are roots
    assert _groups_for([(2, 2), (2, 3)]).n_groups == 1       # Chebyshev 1
    assert _groups_for([(2, 2), (2, 6)]).n_groups == 2       # Chebyshev 4
    assert _groups_for([]).n_groups == 0


@pytest.mark.parametrize("hist,ratio", [
    ({0: 3, 4: 3}, 1.0),
    ({0: 10}, 0.0),
    ({2: 2, 6: 1, 0: 1}, 0.5),
])
def test_pairing_examples(hist, ratio):
    h = np.zeros((1, 8), np.int64)
    for b, n in hist.items():
        h[0, b] = n
    assert pair_count(h)[0] / h.sum() == ratio


def test_pair_tolerance_uses_near_opposites():
    h = np.zeros((1, 8), np.int64)
    h[0, 0] = 4
    h[0, 3] = 4
    assert pair_count(h, 0)[0] == 0
    assert pair_count(h, 1)[0] == 8


def test_filter_unbalanced_on_forest():
    pts = {(2, 2): (1, 0), (2, 3): (1, 0), (2, 4): (1, 0), (3, 2): (-1, 0), (3, 3): (-1, 0),
           (3, 4): (-1, 0), (9, 2): (1, 0), (9, 3): (1, 0)}
    f = field_from(pts, (8, 12))
    forest = build_forest(f, threshold_candidates(f, 0.5))
    groups = group_representatives(forest, 3)
    assert groups.n_groups == 2
    keep = filter_unbalanced(groups, forest, 0.6)
    assert keep.tolist() == [groups.rep_group[2, 2]]


def test_propagation_is_constant_per_tree():
    _, labels = rasterize(PolygonScene(80, 40, ([(5, 5), (65, 5), (65, 17), (5, 17)],
                                               [(5, 20), (65, 20), (65, 32), (5, 32)])))
    f = generate_field(labels)
    forest = build_forest(f, threshold_candidates(f, 0.3))
    groups = group_representatives(forest, 3)
    lab = propagate_labels(forest, groups, np.arange(1, groups.n_groups + 1))
    for t in range(1, forest.n_trees + 1):
        assert np.unique(lab[forest.labels == t]).size == 1
    assert not lab[~forest.candidates].any()


def test_detect_two_bars_with_gap():
    a = [(10, 10), (70, 10), (70, 22), (10, 22)]
    b = [(10, 25), (70, 25), (70, 37), (10, 37)]
    _, labels = rasterize(PolygonScene(80, 48, (a, b)))
    dets = detect(generate_field(labels), InferenceConfig(lambda_m=0.3))
    assert dets.max() == 2
    report, pairs = match_masks(dets, [labels == 1, labels == 2])
    assert report.tp == 2
    assert all(iou >= 0.9 for _, _, iou in pairs)


def test_detect_zero_field():
    assert not detect(DirectionField.zeros(20, 30)).any()


def test_detect_small_blob_dropped():
    labels = np.zeros((30, 30), np.int32)
    labels[5:15, 5:20] = 1  # 150 pixels
    assert not detect(generate_field(labels), InferenceConfig(lambda_m=0.3)).any()
    labels[5:20, 5:20] = 1  # 225 pixels
    assert detect(generate_field(labels), InferenceConfig(lambda_m=0.3)).max() == 1


def test_detect_labels_in_scan_order():
    a = [(40, 4), (100, 4), (100, 18), (40, 18)]
    b = [(4, 30), (64, 30), (64, 44), (4, 44)]
    _, labels = rasterize(PolygonScene(110, 50, (a, b)))
    dets = detect(generate_field(labels), InferenceConfig(lambda_m=0.3))
    assert dets[10, 70] == 1 and dets[37, 30] == 2


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, (2, 8, 8), elements=st.floats(-1, 1, width=32)),
       st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_threshold_monotone(v, a, b):
    f = DirectionField(v[0], v[1])
    lo, hi = sorted((a, b))
    assert not (threshold_candidates(f, hi) & ~threshold_candidates(f, lo)).any()


def test_config_validation_and_presets():
    assert PRESETS == {"ctw1500": 0.59, "totaltext": 0.50, "ic15": 0.69, "td500": 0.64}
    c = InferenceConfig.preset("ic15", k2=5)
    assert c.lambda_m == 0.69 and c.k2 == 5 and c.lambda_a == 200 and c.lambda_r == 0.6
    d = InferenceConfig()
    assert (d.k1, d.k2, d.lambda_a) == (3, 11, 200)
    for bad in (dict(lambda_m=0), dict(lambda_m=1), dict(k1=2), dict(k2=0), dict(lambda_r=1.5),
                dict(lambda_a=-1), dict(pair_tolerance=2)):
        with pytest.raises(ValueError):
            InferenceConfig(**bad)
    with pytest.raises(ValueError):
        InferenceConfig.preset("nope")
