"""Synthetic text-like scenes and a noise model for direction fields.

Scenes hold straight bars, rotated bars and circular-arc ribbons with
integer vertices, placed by rejection sampling so that instances keep a
minimum gap and stay clear of the image border.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .field_gen import DirectionField, match_norm
from .geometry import GeometryError, Polygon, PolygonScene, rasterize_polygon

FAMILIES = ("bar", "rotated", "arc")


class InfeasibleSpecError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    width: int = 256
    height: int = 256
    min_count: int = 2
    max_count: int = 6
    families: tuple = FAMILIES
    stroke_min: int = 12
    stroke_max: int = 22
    length_min: int = 50
    length_max: int = 140
    min_gap: int = 3
    margin: int = 2
    min_area: int = 400
    max_tries: int = 500

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        bad = set(self.families) - set(FAMILIES)
        if bad:
            raise ValueError(f"unknown shape families {sorted(bad)}")
        if not self.families:
            raise ValueError("at least one shape family is required")
        if not 0 <= self.min_count <= self.max_count:
            raise ValueError("need 0 <= min_count <= max_count")
        if not 1 <= self.stroke_min <= self.stroke_max:
            raise ValueError("need 1 <= stroke_min <= stroke_max")
        if not 1 <= self.length_min <= self.length_max:
            raise ValueError("need 1 <= length_min <= length_max")
        if self.min_gap < 0 or self.margin < 0:
            raise ValueError("min_gap and margin must be non-negative")

    def to_json(self) -> str:
        d = asdict(self)
        d["families"] = list(self.families)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown SynthSpec keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class NoiseModel:
    angle_sigma: float = 0.0  # degrees
    magnitude_sigma: float = 0.0
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.angle_sigma < 0 or self.magnitude_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0 <= self.dropout_rate <= 1:
            raise ValueError("dropout_rate must lie in [0, 1]")


def _bar(rng, spec, angle):
    length = int(rng.integers(spec.length_min, spec.length_max + 1))
    stroke = int(rng.integers(spec.stroke_min, spec.stroke_max + 1))
    cx = rng.uniform(0, spec.width)
    cy = rng.uniform(0, spec.height)
    c, s = math.cos(angle), math.sin(angle)
    hl, hs = length / 2, stroke / 2
    corners = [(-hl, -hs), (hl, -hs), (hl, hs), (-hl, hs)]
    return [(round(cx + u * c - v * s), round(cy + u * s + v * c)) for u, v in corners]


def _arc(rng, spec, chord_error=1.0):
    stroke = int(rng.integers(spec.stroke_min, spec.stroke_max + 1))
    length = int(rng.integers(spec.length_min, spec.length_max + 1))
    radius = rng.uniform(max(1.5 * stroke, 30.0), max(1.5 * stroke, 30.0) + 90.0)
    span = min(length / radius, math.pi)
    start = rng.uniform(0, 2 * math.pi)
    cx = rng.uniform(0, spec.width)
    cy = rng.uniform(0, spec.height)
    r_out, r_in = radius + stroke / 2, radius - stroke / 2
    # sagitta r(1 - cos(step/2)) <= chord_error on the outer edge
    step = 2 * math.acos(max(-1.0, 1 - chord_error / r_out))
    n = max(2, math.ceil(span / step))
    ts = np.linspace(start, start + span, n + 1)
    outer = [(cx + r_out * math.cos(t), cy + r_out * math.sin(t)) for t in ts]
    inner = [(cx + r_in * math.cos(t), cy + r_in * math.sin(t)) for t in ts[::-1]]
    pts = []
    for x, y in outer + inner:
        q = (round(x), round(y))
        if not pts or pts[-1] != q:
            pts.append(q)
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts.pop()
    return pts


def _candidate(rng, spec, family):
    if family == "bar":
        return _bar(rng, spec, 0.0 if rng.random() < 0.7 else math.pi / 2)
    if family == "rotated":
        return _bar(rng, spec, rng.uniform(-math.pi / 2, math.pi / 2))
    return _arc(rng, spec)


def generate_scene(spec: SynthSpec) -> PolygonScene:
    """Draw a scene; identical specs give identical scenes."""
    rng = np.random.default_rng(spec.seed)
    count = int(rng.integers(spec.min_count, spec.max_count + 1))
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    grow = np.ones((2 * spec.min_gap + 1,) * 2, dtype=bool)
    lo, hi_x, hi_y = spec.margin, spec.width - spec.margin, spec.height - spec.margin
    polys = []
    for _ in range(count):
        for _attempt in range(spec.max_tries):
            family = spec.families[int(rng.integers(len(spec.families)))]
            pts = _candidate(rng, spec, family)
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            if min(xs) < lo or min(ys) < lo or max(xs) > hi_x or max(ys) > hi_y:
                continue
            try:
                poly = Polygon(pts)
            except GeometryError:
                continue
            m = rasterize_polygon(poly, spec.width, spec.height)
            if m.sum() < max(spec.min_area, 1):
                continue
            if spec.min_gap > 0:
                near = ndimage.binary_dilation(m, structure=grow)
            else:
                near = m
            if (near & occupied).any():
                continue
            occupied |= m
            polys.append(poly)
            break
        else:
            raise InfeasibleSpecError(
                f"could not place instance {len(polys) + 1} of {count} after {spec.max_tries} tries"
            )
    return PolygonScene(spec.width, spec.height, tuple(polys))


def perturb_field(field: DirectionField, noise: NoiseModel) -> DirectionField:
    """Rotate, rescale and drop vectors of a field.

    Every non-zero vector is rotated by a Gaussian angle, scaled by
    ``max(0, 1 + N(0, magnitude_sigma))`` and zeroed with probability
    ``dropout_rate``.  Noise is drawn for the whole grid from a counter-based
    generator, so each pixel's draw depends only on the seed and its position.
    """
    h, w = field.shape
    rng = np.random.Generator(np.random.Philox(noise.seed))
    angle = np.radians(noise.angle_sigma) * rng.standard_normal((h, w))
    scale = np.maximum(0.0, 1.0 + noise.magnitude_sigma * rng.standard_normal((h, w)))
    drop = rng.random((h, w)) < noise.dropout_rate

    vx = field.vx.astype(np.float64)
    vy = field.vy.astype(np.float64)
    live = (vx != 0) | (vy != 0)
    c, s = np.cos(angle), np.sin(angle)
    rx = ((vx * c - vy * s) * scale).astype(np.float32)
    ry = ((vx * s + vy * c) * scale).astype(np.float32)
    if noise.magnitude_sigma == 0:
        # rotation alone keeps each norm; undo float32 rounding drift
        target = np.where(live, np.hypot(field.vx, field.vy), 0).astype(np.float32)
        match_norm(rx, ry, target)
    keep = live & ~drop
    out_x = np.where(keep, rx, np.float32(0))
    out_y = np.where(keep, ry, np.float32(0))
    return DirectionField(out_x, out_y)
