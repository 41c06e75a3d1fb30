"""Dense 3D grids with physical voxel size and raw-file I/O.

Grids are isotropic. Array data has shape ``(nx, ny, nz)``; the canonical
linear (on-disk) ordering is x-fastest, i.e. flat index ``x + nx*(y + ny*z)``,
which corresponds to Fortran-order raveling of the array.

On disk a volume is a pair of files sharing a stem: ``<stem>.json`` carries
the metadata and ``<stem>.raw`` the little-endian sample stream. Gray data is
32-bit float (tag ``"f32"``), label data 32-bit unsigned int (tag ``"u32"``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RAW_ORDER = "x-fastest"
RAW_ENDIANNESS = "little"
FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "u32": np.dtype("<u4")}

# Offsets of the 26 face/edge/corner neighbors of a voxel.
NEIGHBORS_26 = tuple(
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
)


@dataclass(frozen=True)
class GridSpec:
    """Voxel counts per axis plus the isotropic voxel edge length in micrometers."""

    dims: tuple[int, int, int]
    voxel_size: float

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"grid dims must be three voxel counts >= 1, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be > 0, got {self.voxel_size}")

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def extent(self) -> tuple[float, float, float]:
        """Physical edge lengths in micrometers, exactly dims * voxel_size."""
        return tuple(d * self.voxel_size for d in self.dims)

    def linear_index(self, x: int, y: int, z: int) -> int:
        nx, ny, _ = self.dims
        return x + nx * (y + ny * z)


def _check_shape(grid: GridSpec, data: np.ndarray) -> None:
    if data.shape != grid.dims:
        raise ValueError(f"data shape {data.shape} does not match grid dims {grid.dims}")


@dataclass
class Volume:
    """Gray-value volume (float32). Treated as immutable once constructed."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        _check_shape(self.grid, data)
        if not np.all(np.isfinite(data)):
            raise ValueError("volume data must be finite (no NaN/Inf)")
        self.data = data

    @classmethod
    def from_flat(cls, grid: GridSpec, flat) -> "Volume":
        flat = np.asarray(flat, dtype=np.float32)
        if flat.size != grid.voxel_count:
            raise ValueError(f"expected {grid.voxel_count} values, got {flat.size}")
        return cls(grid, flat.reshape(grid.dims, order="F"))

    @property
    def flat(self) -> np.ndarray:
        """Samples in canonical linear order x + nx*(y + ny*z)."""
        return self.data.ravel(order="F")


@dataclass
class LabelVolume:
    """Integer label volume (uint32); 0 is reserved for background."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.integer) and not data.dtype == np.bool_:
            raise ValueError(f"label data must be integer, got dtype {data.dtype}")
        if data.size and (np.min(data) < 0 or np.max(data) > np.iinfo(np.uint32).max):
            raise ValueError("label values must fit in uint32")
        data = data.astype(np.uint32, copy=False)
        _check_shape(self.grid, data)
        self.data = data

    @classmethod
    def from_flat(cls, grid: GridSpec, flat) -> "LabelVolume":
        flat = np.asarray(flat)
        if flat.size != grid.voxel_count:
            raise ValueError(f"expected {grid.voxel_count} values, got {flat.size}")
        return cls(grid, flat.reshape(grid.dims, order="F"))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "LabelVolume":
        return cls(grid, np.zeros(grid.dims, dtype=np.uint32))

    @property
    def flat(self) -> np.ndarray:
        return self.data.ravel(order="F")


def write_volume(vol: Volume | LabelVolume, path_stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.json`` metadata and ``<stem>.raw`` sample stream.

    The raw file holds exactly nx*ny*nz values, little-endian, x-fastest.
    Returns the two paths written.
    """
    stem = Path(path_stem)
    if isinstance(vol, Volume):
        tag = "f32"
    elif isinstance(vol, LabelVolume):
        tag = "u32"
    else:
        raise TypeError(f"expected Volume or LabelVolume, got {type(vol).__name__}")
    meta = {
        "dims": list(vol.grid.dims),
        "voxel_size_um": vol.grid.voxel_size,
        "dtype": tag,
        "order": RAW_ORDER,
        "endianness": RAW_ENDIANNESS,
    }
    json_path = stem.with_name(stem.name + ".json")
    raw_path = stem.with_name(stem.name + ".raw")
    try:
        json_path.write_text(json.dumps(meta) + "\n")
        raw_path.write_bytes(vol.flat.astype(_DTYPES[tag], copy=False).tobytes())
    except OSError as exc:
        raise OSError(f"failed to write volume '{stem}': {exc}") from exc
    return json_path, raw_path


def read_volume(path_stem: str | Path) -> Volume | LabelVolume:
    """Read a volume pair written by :func:`write_volume`, bit-exactly."""
    stem = Path(path_stem)
    json_path = stem.with_name(stem.name + ".json")
    raw_path = stem.with_name(stem.name + ".raw")
    try:
        meta = json.loads(json_path.read_text())
        raw = raw_path.read_bytes()
    except OSError as exc:
        raise OSError(f"failed to read volume '{stem}': {exc}") from exc
    tag = meta.get("dtype")
    if tag not in _DTYPES:
        raise ValueError(f"unknown dtype {tag!r} in '{json_path}'")
    grid = GridSpec(tuple(meta["dims"]), meta["voxel_size_um"])
    expected = grid.voxel_count * _DTYPES[tag].itemsize
    if len(raw) != expected:
        raise ValueError(
            f"size mismatch in '{raw_path}': header implies {expected} bytes "
            f"({grid.voxel_count} voxels of {tag}), raw file has {len(raw)} bytes"
        )
    flat = np.frombuffer(raw, dtype=_DTYPES[tag])
    if tag == "f32":
        return Volume.from_flat(grid, flat)
    return LabelVolume.from_flat(grid, flat)
