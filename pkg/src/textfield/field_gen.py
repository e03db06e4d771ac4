"""Ground-truth direction fields from rasterized annotations.

For a text pixel ``p`` let ``N_p`` be the nearest pixel (Euclidean) outside the
instance containing ``p``.  The field at ``p`` is the unit vector from ``N_p``
to ``p``; it is ``(0, 0)`` on background.  Vectors are stored as ``(vx, vy)``
with x to the right and y downward.

Nearest sites are exact.  Squared distances come from a separable two-pass
lower-envelope transform in integer arithmetic; among equidistant sites the
one with the lowest y, then the lowest x, is returned.  Pixels outside the
image count as background (a one-pixel virtual ring).
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class DirectionField:
    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        vx = np.asarray(self.vx, dtype=np.float32)
        vy = np.asarray(self.vy, dtype=np.float32)
        if vx.shape != vy.shape or vx.ndim != 2:
            raise ValueError(f"component shapes differ or are not 2-D: {vx.shape} vs {vy.shape}")
        object.__setattr__(self, "vx", vx)
        object.__setattr__(self, "vy", vy)

    @property
    def shape(self):
        return self.vx.shape

    @property
    def width(self):
        return self.vx.shape[1]

    @property
    def height(self):
        return self.vx.shape[0]

    @classmethod
    def zeros(cls, height, width):
        z = np.zeros((height, width), dtype=np.float32)
        return cls(z, z.copy())


@dataclass(frozen=True)
class FeatureTransform:
    """Nearest background site for every text pixel.

    ``nearest_x``/``nearest_y`` are only meaningful where ``text`` is set;
    they may be -1 or width/height when the site is on the virtual ring.
    """

    text: np.ndarray
    nearest_x: np.ndarray
    nearest_y: np.ndarray
    sqdist: np.ndarray

    @property
    def distance(self) -> np.ndarray:
        return np.sqrt(self.sqdist)


@numba.njit(cache=True)
def _isqrt(n):
    r = int(np.sqrt(float(n)))
    while r * r > n:
        r -= 1
    while (r + 1) * (r + 1) <= n:
        r += 1
    return r


@numba.njit(cache=True)
def _squared_edt(text):
    """Exact squared distance to the nearest False pixel (integer)."""
    h, w = text.shape
    inf = h + w
    g = np.empty((h, w), dtype=np.int64)
    for x in range(w):
        g[0, x] = inf if text[0, x] else 0
        for y in range(1, h):
            g[y, x] = g[y - 1, x] + 1 if text[y, x] else 0
        for y in range(h - 2, -1, -1):
            if g[y + 1, x] < g[y, x]:
                g[y, x] = g[y + 1, x] + 1

    dt = np.empty((h, w), dtype=np.int64)
    s = np.empty(w, dtype=np.int64)
    t = np.empty(w, dtype=np.int64)
    for y in range(h):
        gy = g[y]
        q = 0
        s[0] = 0
        t[0] = 0
        for u in range(1, w):
            while q >= 0 and ((t[q] - s[q]) ** 2 + gy[s[q]] ** 2) > ((t[q] - u) ** 2 + gy[u] ** 2):
                q -= 1
            if q < 0:
                q = 0
                s[0] = u
            else:
                i = s[q]
                sep = (u * u - i * i + gy[u] ** 2 - gy[i] ** 2) // (2 * (u - i))
                wpos = 1 + sep
                if wpos < w:
                    q += 1
                    s[q] = u
                    t[q] = wpos
        for u in range(w - 1, -1, -1):
            dt[y, u] = (u - s[q]) ** 2 + gy[s[q]] ** 2
            if u == t[q]:
                q -= 1
    return dt


@numba.njit(cache=True)
def _resolve_sites(text, dt):
    """Pick, among background pixels at squared distance dt, the lowest (y, x)."""
    h, w = text.shape
    ny = np.full((h, w), -1, dtype=np.int64)
    nx = np.full((h, w), -1, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            if not text[y, x]:
                continue
            d = dt[y, x]
            r = _isqrt(d)
            found = False
            for dy in range(-r, r + 1):
                rem = d - dy * dy
                dx = _isqrt(rem)
                if dx * dx != rem:
                    continue
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for sx in (x - dx, x + dx):
                    if 0 <= sx < w and not text[yy, sx]:
                        ny[y, x] = yy
                        nx[y, x] = sx
                        found = True
                        break
                if found:
                    break
    return ny, nx


def _transform(text: np.ndarray, pad: bool):
    text = np.ascontiguousarray(text, dtype=np.bool_)
    if pad:
        text = np.pad(text, 1, constant_values=False)
    dt = _squared_edt(text)
    ny, nx = _resolve_sites(text, dt)
    if pad:
        sl = (slice(1, -1), slice(1, -1))
        dt, ny, nx, text = dt[sl], ny[sl] - 1, nx[sl] - 1, text[sl]
    dt = np.where(text, dt, 0)
    return dt, ny, nx


def feature_transform(mask: np.ndarray, border: str = "background") -> FeatureTransform:
    """Exact Euclidean feature transform of a boolean text mask.

    ``border="background"`` treats the ring of pixels just outside the image
    as background; ``border="text"`` uses in-image background pixels only and
    raises ``ValueError`` when there are none.
    """
    if border not in ("background", "text"):
        raise ValueError(f"border must be 'background' or 'text', not {border!r}")
    text = np.asarray(mask, dtype=bool)
    if text.ndim != 2:
        raise ValueError("mask must be two-dimensional")
    if border == "text" and text.all():
        raise ValueError("no background sites")
    dt, ny, nx = _transform(text, pad=(border == "background"))
    return FeatureTransform(text.copy(), nx, ny, dt)


def _unit_vectors(dx: np.ndarray, dy: np.ndarray):
    """float32 unit vectors whose float32 norm is exactly 1."""
    d = np.sqrt(dx.astype(np.float64) ** 2 + dy.astype(np.float64) ** 2)
    vx = (dx / d).astype(np.float32)
    vy = (dy / d).astype(np.float32)
    match_norm(vx, vy, np.ones_like(vx))
    return vx, vy


def _step(v: np.ndarray, n: int) -> np.ndarray:
    toward = np.float32(np.inf if n > 0 else -np.inf)
    for _ in range(abs(n)):
        v = np.nextafter(v, toward)
    return v


def match_norm(vx: np.ndarray, vy: np.ndarray, target: np.ndarray, reach: int = 3):
    """Nudge float32 components in place so ``hypot(vx, vy) == target`` exactly.

    Rounding a correctly scaled vector to float32 occasionally misses the
    target norm by an ulp; the closest pair within ``reach`` ulps per
    component that hits it is substituted.
    """
    target = np.asarray(target, dtype=np.float32)
    bad = (np.hypot(vx, vy) != target) & (target != 0)
    if not bad.any():
        return
    a, b, t = vx[bad], vy[bad], target[bad]
    best_a, best_b = a.copy(), b.copy()
    cost = np.full(a.shape, np.inf)
    for i in range(-reach, reach + 1):
        ai = _step(a, i)
        for j in range(-reach, reach + 1):
            bj = _step(b, j)
            hit = (np.hypot(ai, bj) == t) & (abs(i) + abs(j) < cost)
            best_a[hit], best_b[hit] = ai[hit], bj[hit]
            cost[hit] = abs(i) + abs(j)
    if np.isinf(cost).any():
        raise ArithmeticError("cannot represent a vector of the requested norm in float32")
    vx[bad], vy[bad] = best_a, best_b


def generate_field(labels: np.ndarray) -> DirectionField:
    """Ground-truth direction field of a label map (or boolean mask).

    Each instance is measured against the complement of its own pixels, so
    neighbouring instances act as background for one another.  A boolean
    mask is treated as a single instance.
    """
    labels = np.asarray(labels)
    if labels.dtype == bool:
        labels = labels.astype(np.int32)
    h, w = labels.shape
    vx = np.zeros((h, w), dtype=np.float32)
    vy = np.zeros((h, w), dtype=np.float32)
    padded = np.pad(labels, 1, constant_values=0)
    ids = np.unique(labels)
    for lab in ids[ids != 0]:
        ys, xs = np.nonzero(labels == lab)
        # window in padded coordinates, grown by one so its edge is background
        y0, y1 = ys.min(), ys.max() + 3
        x0, x1 = xs.min(), xs.max() + 3
        local = padded[y0:y1, x0:x1] == lab
        dt, ny, nx = _transform(local, pad=False)
        ly, lx = np.nonzero(local)
        py, px = ly + y0 - 1, lx + x0 - 1
        sy, sx = ny[ly, lx] + y0 - 1, nx[ly, lx] + x0 - 1
        ux, uy = _unit_vectors(px - sx, py - sy)
        vx[py, px] = ux
        vy[py, px] = uy
    return DirectionField(vx, vy)


def magnitude(field: DirectionField) -> np.ndarray:
    """Per-pixel Euclidean norm of the field (float32)."""
    return np.hypot(field.vx, field.vy)
