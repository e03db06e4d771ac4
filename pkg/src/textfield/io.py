"""Readers and writers for annotation text files, PGM images and DFF1 fields."""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .field_gen import DirectionField
from .geometry import Polygon, PolygonScene

DFF_MAGIC = b"DFF1"
_SIZE_RE = re.compile(r"#\s*size\s*[:=]?\s*(\d+)\s*[x, ]\s*(\d+)", re.IGNORECASE)


class FormatError(ValueError):
    pass


# -- annotations -----------------------------------------------------------

def parse_annotation(text: str, width: int | None = None, height: int | None = None,
                     source: str = "<string>") -> PolygonScene:
    """Parse one annotation document into a scene.

    Each non-comment line is ``x1,y1,...,xn,yn``.  The domain size comes from
    ``width``/``height`` when given, otherwise from a ``# size WxH`` comment.
    """
    polys = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _SIZE_RE.match(line)
            if m and width is None and height is None:
                width, height = int(m.group(1)), int(m.group(2))
            continue
        try:
            vals = [int(v) for v in line.split(",")]
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: non-integer coordinate") from exc
        if len(vals) % 2 or len(vals) < 6:
            raise FormatError(f"{source}:{lineno}: expected an even count of at least 6 integers")
        try:
            polys.append(Polygon(list(zip(vals[0::2], vals[1::2]))))
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from exc
    if width is None or height is None:
        raise FormatError(f"{source}: image size unknown (no '# size WxH' line and none given)")
    try:
        return PolygonScene(width, height, tuple(polys))
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from exc


def read_annotation(path, width=None, height=None) -> PolygonScene:
    path = Path(path)
    return parse_annotation(path.read_text(encoding="utf-8"), width, height, source=str(path))


def format_annotation(scene: PolygonScene) -> str:
    lines = [f"# size {scene.width}x{scene.height}"]
    for poly in scene.instances:
        coords = []
        for x, y in poly.points:
            if x != int(x) or y != int(y):
                raise FormatError("annotation format holds integer coordinates only")
            coords += [str(int(x)), str(int(y))]
        lines.append(",".join(coords))
    return "\n".join(lines) + "\n"


def write_annotation(path, scene: PolygonScene):
    Path(path).write_text(format_annotation(scene), encoding="utf-8")


def write_polygons(path, polygons):
    """Write bare integer polygons (one per line, no size header)."""
    lines = [",".join(f"{int(x)},{int(y)}" for x, y in p) for p in polygons]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# -- PGM -------------------------------------------------------------------

def write_pgm(path, image: np.ndarray, maxval: int | None = None):
    """Write a binary (P5) PGM.  8-bit when ``maxval`` < 256, else 16-bit big-endian."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM images are two-dimensional")
    if maxval is None:
        maxval = 255 if image.dtype in (np.bool_, np.uint8) else 65535
    if image.size and (image.min() < 0 or image.max() > maxval):
        raise ValueError(f"pixel values outside [0, {maxval}]")
    h, w = image.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    if maxval < 256:
        data = image.astype(np.uint8).tobytes()
    else:
        data = image.astype(">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + data)


def write_mask_pgm(path, mask: np.ndarray):
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), 255)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    if len(data) - pos < n:
        raise FormatError(f"{path}: truncated PGM data")
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(
        np.int32 if maxval >= 256 else np.uint8)


# -- DFF1 ------------------------------------------------------------------

def write_dff(path, field: DirectionField):
    h, w = field.shape
    with open(path, "wb") as fh:
        fh.write(DFF_MAGIC + struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(field.vx, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(field.vy, dtype="<f4").tobytes())


def read_dff(path) -> DirectionField:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != DFF_MAGIC:
        raise FormatError(f"{path}: not a DFF1 file")
    w, h = struct.unpack("<II", data[4:12])
    n = w * h
    if len(data) != 12 + 8 * n:
        raise FormatError(f"{path}: expected {12 + 8 * n} bytes, found {len(data)}")
    vx = np.frombuffer(data, dtype="<f4", count=n, offset=12).reshape(h, w)
    vy = np.frombuffer(data, dtype="<f4", count=n, offset=12 + 4 * n).reshape(h, w)
    return DirectionField(vx.astype(np.float32), vy.astype(np.float32))
