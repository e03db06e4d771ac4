"""Morphological post-processing: direction field -> text instance map.

Pipeline:

1. candidate pixels are those whose vector magnitude reaches ``lambda_m``;
2. each candidate points (by its direction, binned to 8 neighbours) at a
   parent; stack-based blob labeling collects the resulting trees, or text
   superpixels;
3. tree roots (representatives) are dilated with a ``k1 x k1`` square and
   labeled with 8-connectivity to form candidate instances;
4. candidates whose representatives are not mostly in opposite-direction
   pairs are dropped;
5. surviving ids are propagated over their trees, each instance is closed
   with a ``k2 x k2`` square, and instances smaller than ``lambda_a`` pixels
   are removed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np
from scipy import ndimage

from .field_gen import DirectionField, magnitude

# bin index -> neighbour offset; E, NE, N, NW, W, SW, S, SE with y pointing down
BIN_DX = np.array([1, 1, 0, -1, -1, -1, 0, 1], dtype=np.int64)
BIN_DY = np.array([0, -1, -1, -1, 0, 1, 1, 1], dtype=np.int64)
BIN_NAMES = ("E", "NE", "N", "NW", "W", "SW", "S", "SE")

ROOT = -1
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class InferenceConfig:
    lambda_m: float = 0.5
    lambda_r: float = 0.6
    lambda_a: float = 200
    k1: int = 3
    k2: int = 11
    pair_tolerance: int = 0

    def __post_init__(self):
        if not 0 < self.lambda_m < 1:
            raise ValueError(f"lambda_m must be in (0, 1), got {self.lambda_m}")
        if not 0 <= self.lambda_r <= 1:
            raise ValueError(f"lambda_r must be in [0, 1], got {self.lambda_r}")
        if self.lambda_a < 0:
            raise ValueError(f"lambda_a must be non-negative, got {self.lambda_a}")
        for name in ("k1", "k2"):
            k = getattr(self, name)
            if int(k) != k or k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be an odd positive integer, got {k}")
        if self.pair_tolerance not in (0, 1):
            raise ValueError("pair_tolerance must be 0 (exact) or 1 (near-opposite allowed)")

    @classmethod
    def preset(cls, name: str, **overrides) -> "InferenceConfig":
        try:
            lambda_m = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        return replace(cls(lambda_m=lambda_m), **overrides)


# magnitude thresholds reported per benchmark
PRESETS = {
    "ctw1500": 0.59,
    "totaltext": 0.50,
    "ic15": 0.69,
    "td500": 0.64,
}


@dataclass(frozen=True)
class SuperpixelForest:
    """Parent-pointer forest over candidate pixels.

    ``parent`` holds the flat (row-major) index of each candidate's parent,
    ``ROOT`` for roots and for non-candidates.  ``labels`` numbers the trees
    (text superpixels) 1..n in scan order of their first pixel.
    """

    candidates: np.ndarray
    parent: np.ndarray
    labels: np.ndarray
    direction_bin: np.ndarray

    @property
    def shape(self):
        return self.candidates.shape

    @property
    def representatives(self) -> np.ndarray:
        """Boolean map of tree roots."""
        return self.candidates & (self.parent == ROOT)

    @property
    def n_trees(self) -> int:
        return int(self.labels.max(initial=0))


@dataclass(frozen=True)
class RepresentativeGroups:
    """Connected components of the dilated representative map.

    ``component`` labels the dilated map; ``rep_group`` carries the group id
    on representative pixels and 0 elsewhere.
    """

    component: np.ndarray
    rep_group: np.ndarray
    n_groups: int


def threshold_candidates(field: DirectionField, lambda_m: float) -> np.ndarray:
    return magnitude(field) >= lambda_m


def direction_bins(vx, vy) -> np.ndarray:
    """Vectorised :func:`bin_direction`; zero vectors map to -1."""
    vx = np.asarray(vx, dtype=np.float64)
    vy = np.asarray(vy, dtype=np.float64)
    t = np.mod(np.degrees(np.arctan2(-vy, vx)), 360.0) / 45.0
    b = np.floor(t + 0.5)
    on_edge = (t + 0.5) == b
    b = b.astype(np.int64)
    b = np.where(on_edge, np.minimum((b - 1) % 8, b % 8), b % 8)
    return np.where((vx == 0) & (vy == 0), -1, b).astype(np.int8)


def bin_direction(vx: float, vy: float) -> int:
    """Index (0..7) of the 8-neighbour whose direction is nearest the vector.

    Sectors are 45 degrees wide around E, NE, N, NW, W, SW, S, SE; a vector
    exactly on a sector edge goes to the lower index.
    """
    if vx == 0 and vy == 0:
        raise ValueError("cannot bin a zero vector")
    return int(direction_bins(vx, vy))


@numba.njit(cache=True)
def _forest_kernel(cand, bins, vx, vy, dxs, dys):
    h, w = cand.shape
    n = h * w
    parent = np.full(n, -1, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            if not cand[y, x]:
                continue
            b = bins[y, x]
            qx = x + dxs[b]
            qy = y + dys[b]
            if 0 <= qx < w and 0 <= qy < h and cand[qy, qx]:
                # opposing flows meet here: stop the chain
                if vx[y, x] * vx[qy, qx] + vy[y, x] * vy[qy, qx] >= 0:
                    parent[y * w + x] = qy * w + qx

    # break any remaining cycle at its first pixel in scan order
    state = np.zeros(n, dtype=np.int8)
    path = np.empty(n, dtype=np.int64)
    pos = np.empty(n, dtype=np.int64)
    for p in range(n):
        if not cand[p // w, p % w] or state[p] != 0:
            continue
        k = 0
        cur = p
        while cur != -1 and state[cur] == 0:
            state[cur] = 1
            path[k] = cur
            pos[cur] = k
            k += 1
            cur = parent[cur]
        if cur != -1 and state[cur] == 1:
            m = cur
            for i in range(pos[cur], k):
                if path[i] < m:
                    m = path[i]
            parent[m] = -1
        for i in range(k):
            state[path[i]] = 2

    # stack-based blob labeling over parent links
    labels = np.zeros(n, dtype=np.int64)
    visited = np.zeros(n, dtype=np.bool_)
    stack = np.empty(9 * n + 1, dtype=np.int64)
    lab = 0
    for p in range(n):
        if not cand[p // w, p % w] or visited[p]:
            continue
        lab += 1
        top = 0
        stack[top] = p
        top += 1
        while top > 0:
            top -= 1
            cur = stack[top]
            if visited[cur]:
                continue
            visited[cur] = True
            labels[cur] = lab
            cy = cur // w
            cx = cur % w
            for oy in range(-1, 2):
                for ox in range(-1, 2):
                    if ox == 0 and oy == 0:
                        continue
                    qy = cy + oy
                    qx = cx + ox
                    if qy < 0 or qy >= h or qx < 0 or qx >= w:
                        continue
                    q = qy * w + qx
                    if cand[qy, qx] and not visited[q] and (parent[cur] == q or parent[q] == cur):
                        stack[top] = q
                        top += 1
    return parent, labels


def build_forest(field: DirectionField, candidates: np.ndarray) -> SuperpixelForest:
    """Link every candidate to the neighbour its direction points at.

    A candidate becomes a root when that neighbour is outside the image, is
    not a candidate, or carries a vector pointing against its own (negative
    dot product).  The last case marks the seam where flows from opposite
    boundaries meet, i.e. the symmetry axis; there both pixels of a
    mutually-pointing pair become roots.  Longer cycles are broken at their
    first pixel in scan order.
    """
    cand = np.ascontiguousarray(candidates, dtype=np.bool_)
    if cand.shape != field.shape:
        raise ValueError(f"candidate map {cand.shape} does not match field {field.shape}")
    bins = direction_bins(field.vx, field.vy)
    if np.any(bins[cand] < 0):
        raise ValueError("candidate pixels must have non-zero vectors")
    bins = np.where(cand, bins, -1).astype(np.int8)
    safe_bins = np.where(cand, bins, 0).astype(np.int64)
    vx = field.vx.astype(np.float64)
    vy = field.vy.astype(np.float64)
    parent, labels = _forest_kernel(cand, safe_bins, vx, vy, BIN_DX, BIN_DY)
    shape = cand.shape
    return SuperpixelForest(
        candidates=cand,
        parent=parent.reshape(shape),
        labels=labels.reshape(shape),
        direction_bin=bins,
    )


def group_representatives(forest: SuperpixelForest, k1: int = 3) -> RepresentativeGroups:
    reps = forest.representatives
    if k1 > 1:
        grown = ndimage.binary_dilation(reps, structure=np.ones((k1, k1), dtype=bool))
    else:
        grown = reps
    component, n = ndimage.label(grown, structure=_EIGHT)
    rep_group = np.where(reps, component, 0)
    return RepresentativeGroups(component.astype(np.int32), rep_group.astype(np.int32), int(n))


def pair_count(hist: np.ndarray, tolerance: int = 0) -> np.ndarray:
    """Number of paired representatives from per-group bin histograms.

    ``hist`` has shape ``(n, 8)``.  Bins ``b`` and ``b + 4`` pair greedily,
    giving ``2 * min(n_b, n_b+4)``.  With ``tolerance=1`` the leftovers are
    then paired with the two near-opposite bins ``b + 3`` and ``b + 5``.
    """
    hist = np.array(hist, dtype=np.int64, copy=True)
    m = np.minimum(hist[:, :4], hist[:, 4:])
    paired = 2 * m.sum(axis=1)
    if tolerance:
        hist[:, :4] -= m
        hist[:, 4:] -= m
        for b in range(8):
            c = (b + 3) % 8
            k = np.minimum(hist[:, b], hist[:, c])
            hist[:, b] -= k
            hist[:, c] -= k
            paired += 2 * k
    return paired


def pairing_ratios(groups: RepresentativeGroups, forest: SuperpixelForest,
                   tolerance: int = 0) -> np.ndarray:
    """Fraction of paired representatives per group (index 0 unused)."""
    reps = forest.representatives
    grp = groups.rep_group[reps].astype(np.int64)
    bins = forest.direction_bin[reps].astype(np.int64)
    hist = np.bincount(grp * 8 + bins, minlength=(groups.n_groups + 1) * 8)
    hist = hist.reshape(groups.n_groups + 1, 8)
    ratio = pair_count(hist, tolerance) / np.maximum(hist.sum(axis=1), 1)
    ratio[0] = 0.0
    return ratio


def filter_unbalanced(groups: RepresentativeGroups, forest: SuperpixelForest,
                      lambda_r: float, tolerance: int = 0) -> np.ndarray:
    """Ids of groups whose paired ratio is at least ``lambda_r``.

    Symmetric text has its representatives in opposite-direction pairs on
    either side of the axis; clutter does not.
    """
    ratio = pairing_ratios(groups, forest, tolerance)
    keep = ratio >= lambda_r
    keep[0] = False
    return np.flatnonzero(keep)


def propagate_labels(forest: SuperpixelForest, groups: RepresentativeGroups,
                     surviving) -> np.ndarray:
    """Give every pixel of a tree the id of its root's group, if it survived."""
    alive = np.zeros(groups.n_groups + 1, dtype=bool)
    alive[np.asarray(surviving, dtype=np.int64)] = True
    tree_group = np.zeros(forest.n_trees + 1, dtype=np.int32)
    reps = forest.representatives
    tree_group[forest.labels[reps]] = np.where(alive[groups.rep_group[reps]], groups.rep_group[reps], 0)
    out = tree_group[forest.labels]
    out[~forest.candidates] = 0
    return out


def close_instances(label_map: np.ndarray, k2: int) -> np.ndarray:
    """Close each instance on its own mask; lower ids win where they collide."""
    out = np.zeros_like(label_map)
    if k2 <= 1:
        return label_map.copy()
    r = k2 // 2
    se = np.ones((k2, k2), dtype=bool)
    h, w = label_map.shape
    slices = ndimage.find_objects(label_map)
    for lab in range(len(slices), 0, -1):
        sl = slices[lab - 1]
        if sl is None:
            continue
        y0, y1 = sl[0].start, sl[0].stop
        x0, x1 = sl[1].start, sl[1].stop
        crop = np.pad(label_map[y0:y1, x0:x1] == lab, 2 * r)
        closed = ndimage.binary_closing(crop, structure=se)[2 * r:-2 * r, 2 * r:-2 * r]
        region = out[y0:y1, x0:x1]
        region[closed] = lab
    return out


def filter_small_regions(label_map: np.ndarray, lambda_a: float) -> np.ndarray:
    areas = np.bincount(label_map.ravel(), minlength=1)
    small = areas < lambda_a
    small[0] = False
    out = label_map.copy()
    out[small[label_map]] = 0
    return out


def relabel_scan_order(label_map: np.ndarray) -> np.ndarray:
    """Renumber instances 1..K by the position of their first pixel."""
    flat = label_map.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids != 0
    ids, first = ids[keep], first[keep]
    lut = np.zeros(int(flat.max(initial=0)) + 1, dtype=np.int32)
    lut[ids[np.argsort(first)]] = np.arange(1, ids.size + 1, dtype=np.int32)
    return lut[label_map]


def detect(field: DirectionField, config: InferenceConfig | None = None) -> np.ndarray:
    """Run the full post-processing and return an int32 instance map."""
    config = config or InferenceConfig()
    cand = threshold_candidates(field, config.lambda_m)
    if not cand.any():
        return np.zeros(field.shape, dtype=np.int32)
    forest = build_forest(field, cand)
    groups = group_representatives(forest, config.k1)
    surviving = filter_unbalanced(groups, forest, config.lambda_r, config.pair_tolerance)
    labels = propagate_labels(forest, groups, surviving)
    labels = close_instances(labels, config.k2)
    labels = filter_small_regions(labels, config.lambda_a)
    return relabel_scan_order(labels).astype(np.int32)


def root_of(forest: SuperpixelForest) -> np.ndarray:
    """Flat index of the root reached from each candidate (-1 elsewhere)."""
    parent = forest.parent.ravel()
    cand = forest.candidates.ravel()
    root = np.where(cand, np.arange(parent.size), -1)
    nxt = np.where(cand & (parent != ROOT), parent, root)
    # pointer doubling; a forest of n nodes needs at most log2(n) rounds
    for _ in range(max(1, math.ceil(math.log2(max(parent.size, 2)))) + 1):
        nxt = np.where(nxt >= 0, nxt[np.maximum(nxt, 0)], nxt)
    return nxt.reshape(forest.shape)
