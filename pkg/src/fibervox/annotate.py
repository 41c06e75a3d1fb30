"""Polyline fiber annotations to voxel ground truth.

Chains are rendered onto the grid with an integer-only 3D Bresenham walk and
then expanded by seeded region growing on the gray volume. Growth is
round-synchronous: every label front advances one 26-connected ring per round,
and a voxel contested within a round goes to the smallest claiming label id,
so results do not depend on traversal order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import NEIGHBORS_26, GridSpec, LabelVolume, Volume

_UNCLAIMED = np.int64(2**62)


@dataclass
class PolylineAnnotation:
    """One annotated fiber: a chain of at least two integer voxel coordinates."""

    id: int
    points: list[tuple[int, int, int]]

    def __post_init__(self):
        if self.id < 1:
            raise ValueError(f"annotation id must be positive, got {self.id}")
        if len(self.points) < 2:
            raise ValueError(f"annotation {self.id} needs at least 2 points")
        cleaned = []
        for idx, p in enumerate(self.points):
            p = tuple(int(v) for v in p)
            if len(p) != 3:
                raise ValueError(f"annotation {self.id} point {idx} is not 3D")
            cleaned.append(p)
        for idx in range(1, len(cleaned)):
            if cleaned[idx] == cleaned[idx - 1]:
                raise ValueError(
                    f"annotation {self.id} has identical consecutive points at index {idx}")
        self.points = cleaned


def bresenham3d(p0, p1) -> list[tuple[int, int, int]]:
    """Integer voxel walk from p0 to p1 inclusive.

    Dominant-axis error accumulation; consecutive voxels are 26-adjacent and
    the list has max(|dx|, |dy|, |dz|) + 1 entries.
    """
    x, y, z = (int(v) for v in p0)
    x1, y1, z1 = (int(v) for v in p1)
    dx, dy, dz = x1 - x, y1 - y, z1 - z
    ax, ay, az = abs(dx), abs(dy), abs(dz)
    sx = (dx > 0) - (dx < 0)
    sy = (dy > 0) - (dy < 0)
    sz = (dz > 0) - (dz < 0)
    points = [(x, y, z)]
    if ax >= ay and ax >= az:
        e1 = 2 * ay - ax
        e2 = 2 * az - ax
        for _ in range(ax):
            if e1 > 0:
                y += sy
                e1 -= 2 * ax
            if e2 > 0:
                z += sz
                e2 -= 2 * ax
            e1 += 2 * ay
            e2 += 2 * az
            x += sx
            points.append((x, y, z))
    elif ay >= az:
        e1 = 2 * ax - ay
        e2 = 2 * az - ay
        for _ in range(ay):
            if e1 > 0:
                x += sx
                e1 -= 2 * ay
            if e2 > 0:
                z += sz
                e2 -= 2 * ay
            e1 += 2 * ax
            e2 += 2 * az
            y += sy
            points.append((x, y, z))
    else:
        e1 = 2 * ax - az
        e2 = 2 * ay - az
        for _ in range(az):
            if e1 > 0:
                x += sx
                e1 -= 2 * az
            if e2 > 0:
                y += sy
                e2 -= 2 * az
            e1 += 2 * ax
            e2 += 2 * ay
            z += sz
            points.append((x, y, z))
    return points


def render_polylines(annotations: list[PolylineAnnotation],
                     grid: GridSpec) -> tuple[LabelVolume, int]:
    """Rasterize chains as seed labels.

    Returns the seed volume and the number of conflicts: write attempts on a
    voxel already holding a different nonzero id (the first id wins).
    """
    seeds = LabelVolume.zeros(grid)
    data = seeds.data
    nx, ny, nz = grid.dims
    conflicts = 0
    for ann in annotations:
        for idx, p in enumerate(ann.points):
            if not (0 <= p[0] < nx and 0 <= p[1] < ny and 0 <= p[2] < nz):
                raise ValueError(
                    f"annotation {ann.id} point {idx} {p} is outside grid dims {grid.dims}")
        for seg in range(len(ann.points) - 1):
            for vox in bresenham3d(ann.points[seg], ann.points[seg + 1]):
                current = int(data[vox])
                if current == 0:
                    data[vox] = ann.id
                elif current != ann.id:
                    conflicts += 1
    return seeds, conflicts


def _neighbor_view(arr: np.ndarray, offset: tuple[int, int, int]):
    """Views (dst, src) so that dst[v] corresponds to arr[v + offset]."""
    dst = []
    src = []
    for n, o in zip(arr.shape, offset):
        dst.append(slice(max(0, -o), n - max(0, o)))
        src.append(slice(max(0, o), n - max(0, -o)))
    return tuple(dst), tuple(src)


def region_grow(gray: Volume, seeds: LabelVolume, threshold: float) -> LabelVolume:
    """Multi-source seeded growth over voxels with gray value >= threshold.

    Seed voxels always keep their labels, even below the threshold. Each round
    every labeled voxel offers its label to unclaimed 26-neighbors that meet
    the threshold; a voxel offered several labels in one round takes the
    smallest id. Runs until no voxel is claimed.
    """
    if gray.grid != seeds.grid:
        raise ValueError(
            f"grid mismatch: gray {gray.grid.dims} vs seeds {seeds.grid.dims}")
    labels = seeds.data.astype(np.int64)
    eligible = gray.data >= threshold
    best = np.empty_like(labels)
    while True:
        best.fill(_UNCLAIMED)
        for offset in NEIGHBORS_26:
            dst, src = _neighbor_view(labels, offset)
            neighbor = labels[src]
            np.minimum(best[dst], np.where(neighbor > 0, neighbor, _UNCLAIMED),
                       out=best[dst])
        claim = (labels == 0) & eligible & (best != _UNCLAIMED)
        if not claim.any():
            break
        labels[claim] = best[claim]
    return LabelVolume(grid=seeds.grid, data=labels.astype(np.uint32))


def annotations_from_fibers(fibers, grid: GridSpec) -> list[PolylineAnnotation]:
    """Two-point chains from fiber endpoints, in voxel coordinates.

    Endpoints map to the nearest voxel center and are clamped into the grid;
    fibers whose endpoints collapse onto one voxel are skipped.
    """
    h = grid.voxel_size
    bounds = np.asarray(grid.dims) - 1
    chains = []
    for fiber in fibers:
        a = np.clip(np.round(np.asarray(fiber.p0) / h - 0.5).astype(int), 0, bounds)
        b = np.clip(np.round(np.asarray(fiber.p1) / h - 0.5).astype(int), 0, bounds)
        if (a == b).all():
            continue
        chains.append(PolylineAnnotation(id=fiber.id, points=[tuple(a), tuple(b)]))
    return chains


def write_annotations(annotations: list[PolylineAnnotation], path: str | Path) -> None:
    payload = [{"id": a.id, "points": [list(p) for p in a.points]} for a in annotations]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_annotations(path: str | Path) -> list[PolylineAnnotation]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"bad annotation JSON '{path}': {exc}") from exc
    if not isinstance(payload, list):
        raise ValueError(f"annotation JSON '{path}' must be a list of chains")
    return [PolylineAnnotation(id=entry["id"], points=entry["points"])
            for entry in payload]
