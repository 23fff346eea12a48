"""Point-cloud and mesh I/O, surface sampling, normalization and augmentation.

All random operations take an explicit integer seed and draw from numpy's
PCG64 generator (``numpy.random.default_rng``), so clouds are reproducible
bit-for-bit across platforms for a given numpy version.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np


class PcioError(ValueError):
    """Base class for all input/format errors raised by this module."""


class MalformedHeader(PcioError):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TruncatedFile(PcioError):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class IndexOutOfRange(PcioError):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MalformedLine(PcioError):
    def __init__(self, line: int, message: str = "malformed line", offset: Optional[int] = None):
        where = f"line {line}" if offset is None else f"line {line}, byte offset {offset}"
        super().__init__(f"{message} ({where})")
        self.line = line
        self.offset = offset


class ZeroAreaMesh(PcioError):
    pass


class DegenerateCloud(PcioError):
    pass


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise PcioError("mesh vertices must be finite")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise IndexOutOfRange("face references a missing vertex")

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    label: Optional[int] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 1:
            raise PcioError(f"points must be an (n>=1, 3) array, got shape {self.points.shape}")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64)
            if self.colors.shape != self.points.shape:
                raise PcioError("colors must have the same shape as points")

    def __len__(self) -> int:
        return len(self.points)


# ---------------------------------------------------------------------------
# OFF

def _lines_with_offsets(data: bytes):
    """Yield (lineno, byte_offset, tokens) for non-empty, non-comment lines."""
    offset = 0
    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        start = offset
        offset += len(raw) + 1
        text = raw.split(b"#", 1)[0].decode("latin-1").strip()
        if text:
            yield lineno, start, text.split()


def _parse_float(tok: str, lineno: int, offset: int) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise MalformedLine(lineno, f"not a number: {tok[:20]!r}", offset) from None
    if not math.isfinite(value):
        raise MalformedLine(lineno, "non-finite coordinate", offset)
    return value


_INT = re.compile(r"[+-]?[0-9]{1,18}\Z")


def _parse_int(tok: str, lineno: int, offset: int) -> int:
    if not _INT.match(tok):
        raise MalformedLine(lineno, f"not an integer: {tok[:20]!r}", offset)
    return int(tok)


def parse_off(data: bytes) -> TriangleMesh:
    """Parse an ASCII OFF mesh. Polygons are fan-triangulated from their first vertex."""
    if isinstance(data, str):
        data = data.encode("latin-1", errors="replace")
    lines = _lines_with_offsets(data)

    first = next(lines, None)
    if first is None or not first[2][0].startswith("OFF"):
        raise MalformedHeader("missing OFF header", 0 if first is None else first[1])
    lineno, offset, tokens = first
    counts = tokens[1:]
    if tokens[0] != "OFF":
        counts = [tokens[0][3:]] + counts  # header fused with the counts line, e.g. "OFF3 1 0"
    if not counts:
        nxt = next(lines, None)
        if nxt is None:
            raise TruncatedFile("missing counts line", len(data))
        lineno, offset, counts = nxt
    if len(counts) < 2:
        raise MalformedHeader("counts line needs V F [E]", offset)
    try:
        n_verts, n_faces = (_parse_int(t, lineno, offset) for t in counts[:2])
    except MalformedLine:
        raise MalformedHeader("counts must be integers", offset) from None
    if n_verts < 0 or n_faces < 0:
        raise MalformedHeader("negative element count", offset)

    vertices = []
    for _ in range(n_verts):
        nxt = next(lines, None)
        if nxt is None:
            raise TruncatedFile(f"expected {n_verts} vertices, got {len(vertices)}", len(data))
        lineno, offset, tokens = nxt
        if len(tokens) < 3:
            raise MalformedLine(lineno, "vertex needs 3 coordinates", offset)
        vertices.append([_parse_float(t, lineno, offset) for t in tokens[:3]])

    faces = []
    for f in range(n_faces):
        nxt = next(lines, None)
        if nxt is None:
            raise TruncatedFile(f"expected {n_faces} faces, got {f}", len(data))
        lineno, offset, tokens = nxt
        size = _parse_int(tokens[0], lineno, offset)
        if size < 3 or len(tokens) < size + 1:
            raise MalformedLine(lineno, "face needs at least 3 vertex indices", offset)
        ids = [_parse_int(t, lineno, offset) for t in tokens[1:size + 1]]
        for i in ids:
            if i < 0 or i >= n_verts:
                raise IndexOutOfRange(f"face index {i} with {n_verts} vertices (line {lineno})", offset)
        faces.extend((ids[0], ids[j], ids[j + 1]) for j in range(1, size - 1))

    return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_off(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        return parse_off(fh.read())


# ---------------------------------------------------------------------------
# sampling / normalization / augmentation

def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Draw ``n`` points uniformly over the mesh surface (area-weighted faces)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if len(areas) == 0 or not np.isfinite(total) or total <= 0:
        raise ZeroAreaMesh("mesh has no positive surface area")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[chosen]]  # (n, 3 corners, 3)
    w = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    return PointCloud(np.einsum("nc,ncd->nd", w, tri))


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    centered = cloud.points - cloud.points.mean(axis=0)
    radius = np.sqrt((centered ** 2).sum(axis=1)).max()
    if not radius > 0:
        raise DegenerateCloud("all points coincide")
    return PointCloud(centered / radius, cloud.colors, cloud.label)


@dataclass(frozen=True)
class AugmentConfig:
    """Uniform ranges for scale, rotation about the up (y) axis, and per-axis shift."""

    scale: tuple[float, float] = (0.8, 1.25)
    rotation: tuple[float, float] = (0.0, 2.0 * math.pi)
    shift: tuple[float, float] = (-0.1, 0.1)

    def __post_init__(self):
        for name in ("scale", "rotation", "shift"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"{name} range must be finite with lo <= hi")
        if self.scale[0] <= 0:
            raise ValueError("scale range must be positive")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(scale=(1.0, 1.0), rotation=(0.0, 0.0), shift=(0.0, 0.0))


def rotation_about_y(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def augment_points(points: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    s = rng.uniform(*cfg.scale)
    theta = rng.uniform(*cfg.rotation)
    t = rng.uniform(cfg.shift[0], cfg.shift[1], size=3)
    return (points @ rotation_about_y(theta).T) * s + t


def augment(cloud: PointCloud, cfg: AugmentConfig = AugmentConfig(), seed: int = 0) -> PointCloud:
    rng = np.random.default_rng(seed)
    return PointCloud(augment_points(cloud.points, cfg, rng), cloud.colors, cloud.label)


# ---------------------------------------------------------------------------
# XYZ

def write_xyz(cloud: PointCloud, path) -> None:
    with open(path, "w") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def parse_xyz(data: bytes) -> PointCloud:
    if isinstance(data, str):
        data = data.encode("latin-1", errors="replace")
    rows = []
    offset = 0
    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        start = offset
        offset += len(raw) + 1
        tokens = raw.decode("latin-1").split()
        if not tokens:
            continue
        if len(tokens) != 3:
            raise MalformedLine(lineno, "expected 'x y z'", start)
        rows.append([_parse_float(t, lineno, start) for t in tokens])
    if not rows:
        raise TruncatedFile("XYZ file contains no points", 0)
    return PointCloud(np.array(rows, dtype=np.float64))


def read_xyz(path) -> PointCloud:
    with open(path, "rb") as fh:
        return parse_xyz(fh.read())


# ---------------------------------------------------------------------------
# PLY (ASCII) with depth coloring

# viridis sampled at 11 evenly spaced stops; linear interpolation between them
_VIRIDIS = np.array([
    [0.267004, 0.004874, 0.329415],
    [0.282623, 0.140926, 0.457517],
    [0.253935, 0.265254, 0.529983],
    [0.206756, 0.371758, 0.553117],
    [0.163625, 0.471133, 0.558148],
    [0.127568, 0.566949, 0.550556],
    [0.134692, 0.658636, 0.517649],
    [0.266941, 0.748751, 0.440573],
    [0.477504, 0.821444, 0.318195],
    [0.741388, 0.873449, 0.149561],
    [0.993248, 0.906157, 0.143936],
])
_VIRIDIS_STOPS = np.linspace(0.0, 1.0, len(_VIRIDIS))

PLY_HEADER = (
    "ply\n"
    "format ascii 1.0\n"
    "element vertex {n}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "property uchar red\n"
    "property uchar green\n"
    "property uchar blue\n"
    "end_header\n"
)


def ramp(t) -> np.ndarray:
    """Viridis-style color for t in [0, 1]; returns (..., 3) floats in [0, 1]."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    return np.stack([np.interp(t, _VIRIDIS_STOPS, _VIRIDIS[:, c]) for c in range(3)], axis=-1)


def depth_colors(points: np.ndarray, axis: int = 2) -> np.ndarray:
    depth = points[:, axis]
    lo, hi = depth.min(), depth.max()
    if hi > lo:
        t = (depth - lo) / (hi - lo)
    else:
        t = np.full(len(depth), 0.5)
    return ramp(t)


def write_ply(cloud: PointCloud, path) -> None:
    colors = cloud.colors if cloud.colors is not None else np.full(cloud.points.shape, 1.0)
    rgb = np.rint(np.clip(colors, 0.0, 1.0) * 255).astype(int)
    with open(path, "w") as fh:
        fh.write(PLY_HEADER.format(n=len(cloud)))
        for (x, y, z), (r, g, b) in zip(cloud.points, rgb):
            fh.write(f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}\n")


def write_ply_depth_colored(cloud: PointCloud, path, axis: int = 2) -> None:
    """Write an ASCII PLY whose vertex colors encode depth (z by default)."""
    write_ply(PointCloud(cloud.points, depth_colors(cloud.points, axis), cloud.label), path)


def read_ply(path) -> PointCloud:
    """Read the ASCII PLY layout produced by :func:`write_ply`."""
    with open(path, "rb") as fh:
        data = fh.read()
    head, sep, body = data.partition(b"end_header\n")
    if not sep or not head.startswith(b"ply\n") or b"format ascii 1.0" not in head:
        raise MalformedHeader("not an ASCII PLY file", 0)
    n = None
    for line in head.decode("latin-1").splitlines():
        parts = line.split()
        if parts[:2] == ["element", "vertex"] and len(parts) == 3 \
                and parts[2].isascii() and parts[2].isdigit():
            n = int(parts[2])
    if n is None:
        raise MalformedHeader("missing vertex element", 0)
    rows = [r.split() for r in body.decode("latin-1").splitlines() if r.strip()]
    if len(rows) < n:
        raise TruncatedFile(f"expected {n} vertices, got {len(rows)}", len(data))
    base = len(head) + len(sep)
    try:
        values = np.array([[float(v) for v in r[:6]] for r in rows[:n]], dtype=np.float64)
    except ValueError:
        raise MalformedLine(0, "bad vertex record", base) from None
    if values.shape != (n, 6):
        raise MalformedLine(0, "vertex records need x y z r g b", base)
    return PointCloud(values[:, :3], values[:, 3:] / 255.0)
