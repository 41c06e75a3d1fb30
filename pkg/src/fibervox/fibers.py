"""Random non-overlapping cylinder packing for synthetic short-fiber composites.

A fiber is a straight segment with a radius. Volume accounting treats fibers
as flat-ended cylinders (pi*r^2*L); the non-overlap test uses the capsule
predicate (segment-segment distance >= sum of radii), which is exact, cheap,
and slightly conservative near fiber ends.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Glass fiber / epoxy matrix densities in g/cc used for weight-fraction accounting.
GLASS_DENSITY = 2.54
EPOXY_DENSITY = 1.31

THETA_BINS = 18  # 5 degree bins over [0, 90]
PHI_BINS = 36    # 10 degree bins over [0, 360)


@dataclass
class Fiber:
    """Straight cylinder: endpoints in micrometers plus radius."""

    id: int
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=np.float64)
        self.p1 = np.asarray(self.p1, dtype=np.float64)
        self.radius = float(self.radius)
        if self.id < 1:
            raise ValueError(f"fiber id must be positive, got {self.id}")
        if self.p0.shape != (3,) or self.p1.shape != (3,):
            raise ValueError("fiber endpoints must be 3D points")
        if not self.radius > 0:
            raise ValueError(f"fiber radius must be > 0, got {self.radius}")
        if not self.length > 0:
            raise ValueError("fiber length must be > 0")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def volume(self) -> float:
        """Flat-ended cylinder volume pi*r^2*L in cubic micrometers."""
        return math.pi * self.radius**2 * self.length


@dataclass(frozen=True)
class ModelParams:
    """Packing parameters: cubic box edge, fiber radius, length law, stop rules.

    ``max_attempts`` bounds the number of consecutive rejected placements
    before packing gives up (not the total attempt count)."""

    box_edge: float = 2000.0
    radius: float = 6.5
    mean_length: float = 500.0
    length_stddev: float = 100.0
    target_fraction: float = 0.054
    max_attempts: int = 150_000
    seed: int = 0

    def __post_init__(self):
        if not self.box_edge > 0:
            raise ValueError(f"box_edge must be > 0, got {self.box_edge}")
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if not 2 * self.radius < self.box_edge:
            raise ValueError("fiber diameter must be smaller than the box edge")
        if not self.mean_length > 0:
            raise ValueError(f"mean_length must be > 0, got {self.mean_length}")
        if self.length_stddev < 0:
            raise ValueError(f"length_stddev must be >= 0, got {self.length_stddev}")
        if not 0 < self.target_fraction < 1:
            raise ValueError(f"target_fraction must be in (0, 1), got {self.target_fraction}")
        if self.max_attempts < 0:
            raise ValueError(f"max_attempts must be >= 0, got {self.max_attempts}")


@dataclass
class FiberModel:
    params: ModelParams
    fibers: list[Fiber] = field(default_factory=list)
    attempts_used: int = 0

    @property
    def volume_fraction(self) -> float:
        return sum(f.volume for f in self.fibers) / self.params.box_edge**3


@dataclass
class ModelStats:
    """Aggregate packing statistics; orientation histograms use fixed bins
    (theta: 18 x 5 deg over [0, 90]; phi: 36 x 10 deg over [0, 360))."""

    fiber_count: int
    min_length: float
    max_length: float
    mean_length: float
    total_fiber_volume: float
    volume_fraction: float
    weight_fraction: float
    theta_hist: np.ndarray
    phi_hist: np.ndarray

    def to_dict(self) -> dict:
        return {
            "fiber_count": self.fiber_count,
            "min_length_um": self.min_length,
            "max_length_um": self.max_length,
            "mean_length_um": self.mean_length,
            "total_fiber_volume_um3": self.total_fiber_volume,
            "volume_fraction": self.volume_fraction,
            "weight_fraction": self.weight_fraction,
            "theta_hist": {"bin_deg": 90 / THETA_BINS, "range_deg": [0, 90],
                           "counts": [int(c) for c in self.theta_hist]},
            "phi_hist": {"bin_deg": 360 / PHI_BINS, "range_deg": [0, 360],
                         "counts": [int(c) for c in self.phi_hist]},
        }


def segment_distance_sq(p0, p1, q0, q1) -> np.ndarray:
    """Squared minimum distance between segments [p0,p1] and [q0,q1].

    Inputs are broadcastable arrays of 3D points. Uses the standard
    closest-point-between-segments computation; robust to parallel and
    degenerate (zero-length) configurations.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)

    tiny = 1e-14
    a_deg = a <= tiny
    e_deg = e <= tiny
    sa = np.where(a_deg, 1.0, a)
    se = np.where(e_deg, 1.0, e)

    denom = a * e - b * b
    parallel = denom <= tiny * sa * se
    s = np.where(parallel, 0.0,
                 np.clip((b * f - c * e) / np.where(parallel, 1.0, denom), 0.0, 1.0))
    t = (b * s + f) / se
    # Re-clamp: if t left [0,1], pin it and recompute the closest s.
    s = np.where(t < 0.0, np.clip(-c / sa, 0.0, 1.0),
                 np.where(t > 1.0, np.clip((b - c) / sa, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)
    # Degenerate segments reduce to point-segment / point-point cases.
    s = np.where(a_deg, 0.0, s)
    t = np.where(a_deg & ~e_deg, np.clip(f / se, 0.0, 1.0), t)
    t = np.where(e_deg, 0.0, t)
    s = np.where(e_deg & ~a_deg, np.clip(-c / sa, 0.0, 1.0), s)

    diff = (p0 + s[..., None] * d1) - (q0 + t[..., None] * d2)
    return np.einsum("...i,...i->...", diff, diff)


def capsules_overlap(a: Fiber, b: Fiber) -> bool:
    """True iff the two capsules interpenetrate (distance < sum of radii)."""
    d2 = segment_distance_sq(a.p0, a.p1, b.p0, b.p1)
    return bool(d2 < (a.radius + b.radius) ** 2)


def _sample_direction(rng: np.random.Generator) -> np.ndarray:
    # Marsaglia: uniform z, uniform azimuth.
    u = rng.uniform(-1.0, 1.0)
    ang = rng.uniform(0.0, 2.0 * math.pi)
    s = math.sqrt(max(0.0, 1.0 - u * u))
    return np.array([s * math.cos(ang), s * math.sin(ang), u])


def _sample_length(rng: np.random.Generator, params: ModelParams, direction: np.ndarray):
    """Draw a length; redraw while non-positive or unable to fit in the box at
    any position for this direction (axis extent L*|d_i| + 2r must not exceed
    the edge). Returns None if no draw fits (possible only for stddev 0)."""
    free = params.box_edge - 2 * params.radius
    abs_d = np.abs(direction)
    for _ in range(1000):
        length = rng.normal(params.mean_length, params.length_stddev)
        if length > 0 and np.all(length * abs_d <= free):
            return length
        if params.length_stddev == 0:
            return None
    return None


def generate_model(params: ModelParams) -> FiberModel:
    """Pack random fibers into the box by sequential rejection sampling.

    One fiber is pending at a time: its axis direction is uniform on the unit
    sphere and its length normal, redrawn until positive and able to fit in
    the box for that direction. Each attempt offers the pending fiber one
    center, uniform over the region where its capsule lies entirely inside
    the box; the offer is rejected if the capsule overlaps an accepted fiber,
    and the same fiber is re-offered on the next attempt until it places.
    Packing stops when the cylinder volume fraction reaches
    ``target_fraction`` or after ``max_attempts`` consecutive rejections
    (saturation guard; ``max_attempts`` 0 means no attempts at all).
    ``attempts_used`` reports the total placements tried. Deterministic for a
    given seed.
    """
    rng = np.random.default_rng(params.seed)
    edge = params.box_edge
    radius = params.radius
    box_volume = edge**3
    target = params.target_fraction

    cap = 4096
    p0s = np.empty((cap, 3))
    p1s = np.empty((cap, 3))
    mids = np.empty((cap, 3))
    # Bounding-sphere reach of each accepted fiber: half length + both radii.
    reach = np.empty(cap)
    lengths = np.empty(cap)

    count = 0
    attempts = 0
    rejections = 0
    total_volume = 0.0
    min_d2 = (2 * radius) ** 2
    pending = None

    while rejections < params.max_attempts and total_volume / box_volume < target:
        attempts += 1
        if pending is None:
            direction = _sample_direction(rng)
            length = _sample_length(rng, params, direction)
            if length is None:
                rejections += 1
                continue
            half = 0.5 * length
            span = half * np.abs(direction)
            pending = (direction, length, half, radius + span, edge - radius - span)
        direction, length, half, c_lo, c_hi = pending
        center = rng.uniform(c_lo, c_hi)
        p0 = center - half * direction
        p1 = center + half * direction
        if count:
            # Bounding-sphere prefilter on midpoints, then the exact capsule test.
            diff = mids[:count] - center
            d2 = np.einsum("ij,ij->i", diff, diff)
            near = d2 < (reach[:count] + half) ** 2
            if near.any():
                idx = np.nonzero(near)[0]
                dist2 = segment_distance_sq(p0, p1, p0s[idx], p1s[idx])
                if dist2.min() < min_d2:
                    rejections += 1
                    continue
        if count == cap:
            cap *= 2
            p0s = np.resize(p0s, (cap, 3))
            p1s = np.resize(p1s, (cap, 3))
            mids = np.resize(mids, (cap, 3))
            reach = np.resize(reach, cap)
            lengths = np.resize(lengths, cap)
        p0s[count] = p0
        p1s[count] = p1
        mids[count] = center
        reach[count] = half + 2 * radius
        lengths[count] = length
        count += 1
        total_volume += math.pi * radius**2 * length
        pending = None
        rejections = 0

    fibers = [Fiber(i + 1, p0s[i].copy(), p1s[i].copy(), radius) for i in range(count)]
    return FiberModel(params=params, fibers=fibers, attempts_used=attempts)


def audit_model(model: FiberModel) -> dict:
    """Brute-force O(n^2) validity audit of a packed model.

    Returns counts of capsule overlap violations over all fiber pairs and of
    fibers whose end-spheres stick out of the box.
    """
    n = len(model.fibers)
    p0 = np.array([f.p0 for f in model.fibers]).reshape(n, 3)
    p1 = np.array([f.p1 for f in model.fibers]).reshape(n, 3)
    radii = np.array([f.radius for f in model.fibers]).reshape(n)
    overlaps = 0
    for i in range(n - 1):
        d2 = segment_distance_sq(p0[i], p1[i], p0[i + 1:], p1[i + 1:])
        overlaps += int(np.count_nonzero(d2 < (radii[i] + radii[i + 1:]) ** 2))
    lo = radii[:, None]
    hi = model.params.box_edge - radii[:, None]
    inside = ((p0 >= lo) & (p0 <= hi) & (p1 >= lo) & (p1 <= hi)).all(axis=1)
    return {
        "overlap_violations": overlaps,
        "out_of_bounds": int(np.count_nonzero(~inside)) if n else 0,
    }


def canonical_axes(fibers: list[Fiber]) -> np.ndarray:
    """Unit axis per fiber, canonicalized for unoriented fibers: z >= 0,
    ties broken by y >= 0, then x >= 0."""
    if not fibers:
        return np.zeros((0, 3))
    p0 = np.array([f.p0 for f in fibers])
    p1 = np.array([f.p1 for f in fibers])
    axes = p1 - p0
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    flip = (axes[:, 2] < 0) \
        | ((axes[:, 2] == 0) & (axes[:, 1] < 0)) \
        | ((axes[:, 2] == 0) & (axes[:, 1] == 0) & (axes[:, 0] < 0))
    axes[flip] *= -1.0
    return axes


def weight_fraction(volume_fraction: float,
                    fiber_density: float = GLASS_DENSITY,
                    matrix_density: float = EPOXY_DENSITY) -> float:
    """Weight fraction of fibers for a given volume fraction and densities."""
    if volume_fraction == 0:
        return 0.0
    fiber_mass = fiber_density * volume_fraction
    return fiber_mass / (fiber_mass + matrix_density * (1.0 - volume_fraction))


def model_statistics(model: FiberModel) -> ModelStats:
    """Length, volume-fraction, weight-fraction, and orientation statistics.

    Theta is the elevation of the canonical axis above the XY plane in
    [0, 90] degrees; phi is the azimuth of its XY projection in [0, 360).
    An empty model yields zero counts and fractions.
    """
    n = len(model.fibers)
    if n == 0:
        return ModelStats(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                          np.zeros(THETA_BINS, dtype=np.int64),
                          np.zeros(PHI_BINS, dtype=np.int64))
    lengths = np.array([f.length for f in model.fibers])
    total_volume = float(sum(f.volume for f in model.fibers))
    vf = total_volume / model.params.box_edge**3
    axes = canonical_axes(model.fibers)
    theta = np.degrees(np.arcsin(np.clip(axes[:, 2], 0.0, 1.0)))
    phi = np.degrees(np.arctan2(axes[:, 1], axes[:, 0])) % 360.0
    theta_hist, _ = np.histogram(theta, bins=THETA_BINS, range=(0.0, 90.0))
    phi_hist, _ = np.histogram(phi, bins=PHI_BINS, range=(0.0, 360.0))
    return ModelStats(
        fiber_count=n,
        min_length=float(lengths.min()),
        max_length=float(lengths.max()),
        mean_length=float(lengths.mean()),
        total_fiber_volume=total_volume,
        volume_fraction=vf,
        weight_fraction=weight_fraction(vf),
        theta_hist=theta_hist.astype(np.int64),
        phi_hist=phi_hist.astype(np.int64),
    )


def write_fibers_csv(fibers: list[Fiber], path: str | Path) -> None:
    """Write the fiber list as CSV: id,x0,y0,z0,x1,y1,z1,radius_um (6 decimals)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("id,x0,y0,z0,x1,y1,z1,radius_um\n")
        for f in fibers:
            coords = [*f.p0, *f.p1, f.radius]
            fh.write(f"{f.id}," + ",".join(f"{v:.6f}" for v in coords) + "\n")


def read_fibers_csv(path: str | Path) -> list[Fiber]:
    path = Path(path)
    fibers = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["id", "x0", "y0", "z0", "x1", "y1", "z1", "radius_um"]
        if reader.fieldnames != expected:
            raise ValueError(f"bad fiber CSV header in '{path}': {reader.fieldnames}")
        for row in reader:
            fibers.append(Fiber(
                id=int(row["id"]),
                p0=[float(row["x0"]), float(row["y0"]), float(row["z0"])],
                p1=[float(row["x1"]), float(row["y1"]), float(row["z1"])],
                radius=float(row["radius_um"]),
            ))
    return fibers
