"""Binary STL export of fiber models as tessellated closed cylinders."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_TRI_DTYPE = np.dtype([
    ("normal", "<f4", 3),
    ("v0", "<f4", 3),
    ("v1", "<f4", 3),
    ("v2", "<f4", 3),
    ("attr", "<u2"),
])

_HEADER = b"fibervox cylinder mesh (binary stl)"


def _frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed orthonormal pair (e1, e2) with e1 x e2 = axis."""
    helper = np.zeros(3)
    helper[np.argmin(np.abs(axis))] = 1.0
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def cylinder_triangles(p0, p1, radius: float, sides: int) -> np.ndarray:
    """Triangles (t, 3, 3) float32 of a closed cylinder with ``sides`` side
    quads (2 triangles each) and two cap fans (``sides`` triangles each).

    Ring vertices are computed once and cast to float32 once, so every edge is
    shared bitwise-exactly by its two incident triangles (watertight mesh).
    Outward winding throughout (counter-clockwise seen from outside).
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length
    e1, e2 = _frame(axis)

    ang = 2.0 * np.pi * np.arange(sides) / sides
    offsets = radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
    ring0 = (p0 + offsets).astype(np.float32)
    ring1 = (p1 + offsets).astype(np.float32)
    c0 = p0.astype(np.float32)
    c1 = p1.astype(np.float32)

    nxt = np.roll(np.arange(sides), -1)
    tris = np.empty((4 * sides, 3, 3), dtype=np.float32)
    tris[0:sides, 0] = ring0
    tris[0:sides, 1] = ring0[nxt]
    tris[0:sides, 2] = ring1[nxt]
    tris[sides:2 * sides, 0] = ring0
    tris[sides:2 * sides, 1] = ring1[nxt]
    tris[sides:2 * sides, 2] = ring1
    tris[2 * sides:3 * sides, 0] = c0
    tris[2 * sides:3 * sides, 1] = ring0[nxt]
    tris[2 * sides:3 * sides, 2] = ring0
    tris[3 * sides:4 * sides, 0] = c1
    tris[3 * sides:4 * sides, 1] = ring1
    tris[3 * sides:4 * sides, 2] = ring1[nxt]
    return tris


def _facet_normals(tris: np.ndarray) -> np.ndarray:
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]).astype(np.float64)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = np.where(norm > 0, n / norm, 0.0)
    return n.astype(np.float32)


def export_stl(model, segments_per_circle: int = 24) -> bytes:
    """Binary STL bytes of all fibers in a model (or plain fiber list):
    80-byte header, u32 triangle count, 50 bytes per triangle.

    Each fiber contributes 4 * segments_per_circle triangles.
    """
    if segments_per_circle < 3:
        raise ValueError(f"segments_per_circle must be >= 3, got {segments_per_circle}")
    fibers = getattr(model, "fibers", model)

    chunks = [cylinder_triangles(f.p0, f.p1, f.radius, segments_per_circle)
              for f in fibers]
    if chunks:
        tris = np.concatenate(chunks, axis=0)
    else:
        tris = np.empty((0, 3, 3), dtype=np.float32)

    record = np.empty(len(tris), dtype=_TRI_DTYPE)
    record["normal"] = _facet_normals(tris)
    record["v0"] = tris[:, 0]
    record["v1"] = tris[:, 1]
    record["v2"] = tris[:, 2]
    record["attr"] = 0
    return _HEADER.ljust(80, b"\0") + np.uint32(len(tris)).tobytes() + record.tobytes()


def write_stl(model, path: str | Path, segments_per_circle: int = 24) -> int:
    """Write the model's STL to a file; returns the triangle count."""
    payload = export_stl(model, segments_per_circle)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise OSError(f"cannot write STL '{path}': {exc}") from exc
    return (len(payload) - 84) // 50


def read_stl_triangles(source) -> np.ndarray:
    """Read binary STL bytes or file back as float32 triangles (t, 3, 3)."""
    raw = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    count = int(np.frombuffer(raw[80:84], dtype="<u4")[0])
    record = np.frombuffer(raw[84:], dtype=_TRI_DTYPE, count=count)
    tris = np.empty((count, 3, 3), dtype=np.float32)
    tris[:, 0] = record["v0"]
    tris[:, 1] = record["v1"]
    tris[:, 2] = record["v2"]
    return tris
