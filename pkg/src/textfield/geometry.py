"""Polygon annotations, rasterization and mask overlap.

Images are row-major ``(height, width)`` arrays with the origin at the top-left
corner.  Pixel ``(x, y)`` covers the unit square ``[x, x+1) x [y, y+1)`` and is
sampled at its center ``(x + 0.5, y + 0.5)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    """Raised for invalid polygons or scenes."""


class DegeneratePolygonWarning(UserWarning):
    pass


def _segments_cross(p1, p2, q1, q2):
    """True if closed segments p1p2 and q1q2 share at least one point."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def _adjacent_overlap(a, b, c):
    """Edges a-b and b-c share vertex b; True if they fold back over each other."""
    cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
    if cross != 0:
        return False
    dot = (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1])
    return dot < 0


@dataclass(frozen=True)
class Polygon:
    """A simple closed polygon given by its vertices ``[(x, y), ...]``.

    Construction validates the polygon: at least three vertices, no two
    consecutive vertices equal (the closing edge included) and no
    self-intersection.
    """

    points: tuple

    def __init__(self, points: Sequence[Sequence[float]]):
        pts = tuple((float(x), float(y)) for x, y in points)
        object.__setattr__(self, "points", pts)
        self._validate()

    def _validate(self):
        pts = self.points
        n = len(pts)
        if n < 3:
            raise GeometryError(f"polygon needs at least 3 vertices, got {n}")
        for i in range(n):
            if pts[i] == pts[(i + 1) % n]:
                raise GeometryError(f"consecutive duplicate vertex {pts[i]} at index {i}")
        for i in range(n):
            if _adjacent_overlap(pts[i - 1], pts[i], pts[(i + 1) % n]):
                raise GeometryError(f"polygon folds back on itself at vertex {i}")
        for i in range(n):
            a, b = pts[i], pts[(i + 1) % n]
            # edges i and j are adjacent when they share a vertex
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                if _segments_cross(a, b, pts[j], pts[(j + 1) % n]):
                    raise GeometryError(f"polygon self-intersects (edges {i} and {j})")

    def __len__(self):
        return len(self.points)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)

    def area(self) -> float:
        """Absolute shoelace area."""
        p = self.array
        x, y = p[:, 0], p[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def bounds(self):
        p = self.array
        return p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max()


@dataclass(frozen=True)
class PolygonScene:
    """An image domain ``width x height`` and its text instances."""

    width: int
    height: int
    instances: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"invalid domain {self.width}x{self.height}")
        inst = tuple(p if isinstance(p, Polygon) else Polygon(p) for p in self.instances)
        object.__setattr__(self, "instances", inst)
        for k, poly in enumerate(inst):
            x0, y0, x1, y1 = poly.bounds()
            if x0 < 0 or y0 < 0 or x1 > self.width or y1 > self.height:
                raise GeometryError(
                    f"instance {k} has vertices outside [0, {self.width}] x [0, {self.height}]"
                )

    @property
    def shape(self):
        return (self.height, self.width)


def rasterize_polygon(poly: Polygon, width: int, height: int) -> np.ndarray:
    """Boolean mask of pixels whose centers are inside or on ``poly``.

    Uses the even-odd crossing rule; centers lying exactly on an edge count
    as inside.
    """
    mask = np.zeros((height, width), dtype=bool)
    x0, y0, x1, y1 = poly.bounds()
    i0 = max(int(np.ceil(x0 - 0.5)), 0)
    i1 = min(int(np.floor(x1 - 0.5)), width - 1)
    j0 = max(int(np.ceil(y0 - 0.5)), 0)
    j1 = min(int(np.floor(y1 - 0.5)), height - 1)
    if i1 < i0 or j1 < j0:
        return mask

    cx = np.arange(i0, i1 + 1, dtype=np.float64)[None, :] + 0.5
    cy = np.arange(j0, j1 + 1, dtype=np.float64)[:, None] + 0.5
    inside = np.zeros((cy.shape[0], cx.shape[1]), dtype=bool)
    boundary = np.zeros_like(inside)

    pts = poly.points
    n = len(pts)
    for k in range(n):
        ax, ay = pts[k]
        bx, by = pts[(k + 1) % n]
        if ay != by:
            straddle = (ay > cy) != (by > cy)
            xint = ax + (cy - ay) * (bx - ax) / (by - ay)
            inside ^= straddle & (cx < xint)
        cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        boundary |= (
            (cross == 0)
            & (cx >= min(ax, bx)) & (cx <= max(ax, bx))
            & (cy >= min(ay, by)) & (cy <= max(ay, by))
        )
    mask[j0:j1 + 1, i0:i1 + 1] = inside | boundary
    return mask


def rasterize(scene: PolygonScene):
    """Rasterize all instances of ``scene``.

    Returns ``(mask, labels)``: a boolean text mask and an int32 label map
    holding the 1-based index of the containing instance (0 for background).
    Where instances overlap the lowest index wins.
    """
    labels = np.zeros(scene.shape, dtype=np.int32)
    # paint in reverse so lower indices overwrite higher ones
    for k in range(len(scene.instances) - 1, -1, -1):
        m = rasterize_polygon(scene.instances[k], scene.width, scene.height)
        if not m.any():
            warnings.warn(
                f"instance {k + 1} covers no pixel centers and is ignored",
                DegeneratePolygonWarning,
                stacklevel=2,
            )
            continue
        labels[m] = k + 1
    return labels != 0, labels


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks (0 when both are empty)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def outline_polygon(mask: np.ndarray):
    """Integer polygon tracing the outer pixel-edge boundary of ``mask``.

    Only the largest 4-connected component is traced, with its holes filled,
    so the outline is simple.  Vertices are pixel corners; rasterizing the
    result reproduces the filled component.  Returns ``None`` for an empty
    mask.
    """
    from scipy import ndimage

    mask = np.asarray(mask, dtype=bool)
    comp, n = ndimage.label(mask)
    if n == 0:
        return None
    sizes = np.bincount(comp.ravel())
    sizes[0] = 0
    region = ndimage.binary_fill_holes(comp == int(np.argmax(sizes)))
    p = np.pad(region, 1)
    ys, xs = np.nonzero(p[1:-1, 1:-1])
    nxt = {}
    for y, x in zip(ys.tolist(), xs.tolist()):
        py, px = y + 1, x + 1
        # clockwise on screen (y down): region lies to the right of each edge
        if not p[py - 1, px]:
            nxt[(x, y)] = (x + 1, y)
        if not p[py, px + 1]:
            nxt[(x + 1, y)] = (x + 1, y + 1)
        if not p[py + 1, px]:
            nxt[(x + 1, y + 1)] = (x, y + 1)
        if not p[py, px - 1]:
            nxt[(x, y + 1)] = (x, y)
    start = min(nxt, key=lambda v: (v[1], v[0]))
    path = [start]
    cur = nxt[start]
    while cur != start:
        path.append(cur)
        cur = nxt[cur]
    # drop collinear vertices
    out = []
    m = len(path)
    for i in range(m):
        a, b, c = path[i - 1], path[i], path[(i + 1) % m]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            out.append(b)
    return out
