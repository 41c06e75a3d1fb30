"""Multi-scale Hessian tubularity filtering and instance extraction.

The filter favors bright tubular structures on a dark background: Hessian
eigenvalues at each scale feed a per-voxel response built from the
plate-vs-line ratio, the blobness ratio, and the second-order energy; the
multi-scale result is the voxel-wise maximum over scales. A structure-tensor
orientation estimator for the extracted fibers lives here too.

Memory note: single-scale filtering holds roughly ten float64 arrays of the
volume size; intended for desk-scale volumes (up to ~256^3), not full
high-resolution scans.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import GridSpec, LabelVolume, Volume, read_volume, write_volume


@dataclass(frozen=True)
class VesselnessParams:
    """Response weights: alpha (plate/line), beta (blobness), c (energy).

    With ``c_auto`` the energy weight is derived per scale as half the maximum
    second-order energy S over the volume, which makes the response invariant
    to scaling the input intensities.
    """

    alpha: float = 0.5
    beta: float = 0.5
    c: float | None = None
    c_auto: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.c_auto and not (self.c is not None and self.c > 0):
            raise ValueError("c must be a positive real when c_auto is off")


@dataclass(frozen=True)
class ScaleSet:
    """Strictly ascending positive filter scales, in voxels."""

    sigmas: tuple[float, ...]

    def __post_init__(self):
        sigmas = tuple(float(s) for s in self.sigmas)
        if not sigmas:
            raise ValueError("scale set must not be empty")
        if any(s <= 0 for s in sigmas):
            raise ValueError(f"scales must be positive, got {sigmas}")
        if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
            raise ValueError(f"scales must be strictly ascending, got {sigmas}")
        object.__setattr__(self, "sigmas", sigmas)


@dataclass
class EigenField:
    """Per-voxel Hessian eigenvalues ordered by |l1| <= |l2| <= |l3|."""

    grid: GridSpec
    l1: np.ndarray
    l2: np.ndarray
    l3: np.ndarray


def gaussian_kernel(sigma: float, order: int = 0) -> np.ndarray:
    """Sampled 1D Gaussian derivative kernel of the given order (0, 1 or 2).

    Support is ceil(4*sigma) + 1 taps each side; the extra tap keeps the
    truncated second moment accurate enough for the x^2 response check.
    Discrete normalization: order 0 sums to 1; order 1 is odd (sums to 0);
    order 2 is mean-subtracted to sum exactly to 0.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(4.0 * sigma) + 1
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-x * x / (2.0 * sigma * sigma))
    g /= g.sum()
    if order == 0:
        return g
    if order == 1:
        return -x / sigma**2 * g
    if order == 2:
        k = (x * x / sigma**4 - 1.0 / sigma**2) * g
        return k - k.mean()
    raise ValueError(f"unsupported derivative order {order}")


def _separable(data: np.ndarray, kernels: tuple[np.ndarray, np.ndarray, np.ndarray]) -> np.ndarray:
    out = data
    for axis, kernel in enumerate(kernels):
        out = ndimage.convolve1d(out, kernel, axis=axis, mode="reflect")
    return out


def _eig3_symmetric(a11, a22, a33, a12, a13, a23):
    """Closed-form eigenvalues of symmetric 3x3 matrices (trigonometric form).

    Inputs are broadcastable float64 arrays; returns three arrays sorted
    ascending by signed value.
    """
    q = (a11 + a22 + a33) / 3.0
    d11 = a11 - q
    d22 = a22 - q
    d33 = a33 - q
    p2 = d11 * d11 + d22 * d22 + d33 * d33 + 2.0 * (a12 * a12 + a13 * a13 + a23 * a23)
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0, p, 1.0)
    b11 = d11 / safe_p
    b22 = d22 / safe_p
    b33 = d33 / safe_p
    b12 = a12 / safe_p
    b13 = a13 / safe_p
    b23 = a23 / safe_p
    half_det = 0.5 * (b11 * (b22 * b33 - b23 * b23)
                      - b12 * (b12 * b33 - b23 * b13)
                      + b13 * (b12 * b23 - b22 * b13))
    phi = np.arccos(np.clip(half_det, -1.0, 1.0)) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - hi - lo
    return lo, mid, hi


def _sort_by_magnitude(lo, mid, hi):
    """Reorder per voxel by |value| ascending, ties by signed value ascending."""
    vals = np.stack([lo, mid, hi])
    order = np.lexsort((vals, np.abs(vals)), axis=0)
    out = np.take_along_axis(vals, order, axis=0)
    return out[0], out[1], out[2]


def hessian_at_scale(v: Volume, sigma: float) -> EigenField:
    """Scale-normalized Hessian eigenvalues of the volume at one scale.

    Six Hessian components via separable sampled-Gaussian-derivative
    convolution (reflect boundary), multiplied by sigma^2 (gamma = 2 scale
    normalization), then a closed-form symmetric eigensolve per voxel.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    g = gaussian_kernel(sigma, 0)
    d1 = gaussian_kernel(sigma, 1)
    d2 = gaussian_kernel(sigma, 2)
    data = v.data.astype(np.float64)
    s2 = sigma * sigma
    hxx = _separable(data, (d2, g, g)) * s2
    hyy = _separable(data, (g, d2, g)) * s2
    hzz = _separable(data, (g, g, d2)) * s2
    hxy = _separable(data, (d1, d1, g)) * s2
    hxz = _separable(data, (d1, g, d1)) * s2
    hyz = _separable(data, (g, d1, d1)) * s2
    lo, mid, hi = _eig3_symmetric(hxx, hyy, hzz, hxy, hxz, hyz)
    l1, l2, l3 = _sort_by_magnitude(lo, mid, hi)
    return EigenField(grid=v.grid, l1=l1, l2=l2, l3=l3)


def _divide_nonzero(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


def frangi_response(e: EigenField, p: VesselnessParams) -> Volume:
    """Single-scale tubularity response in [0, 1].

    Zero wherever l2 > 0 or l3 > 0 (dark-on-bright) and wherever l3 = 0
    (ratios undefined). With ``c_auto`` the energy weight is half the maximum
    S over this field.
    """
    l1, l2, l3 = e.l1, e.l2, e.l3
    s2 = l1 * l1 + l2 * l2 + l3 * l3
    if p.c_auto:
        c = 0.5 * math.sqrt(float(s2.max()))
    else:
        c = float(p.c)
    bright_tube = (l2 <= 0) & (l3 < 0)
    if c == 0:
        return Volume(grid=e.grid, data=np.zeros(e.grid.dims, dtype=np.float32))
    abs2 = np.abs(l2)
    abs3 = np.abs(l3)
    ra2 = _divide_nonzero(abs2 * abs2, abs3 * abs3)
    rb2 = _divide_nonzero(l1 * l1, abs2 * abs3)
    response = ((1.0 - np.exp(-ra2 / (2.0 * p.alpha**2)))
                * np.exp(-rb2 / (2.0 * p.beta**2))
                * (1.0 - np.exp(-s2 / (2.0 * c * c))))
    response = np.where(bright_tube, response, 0.0)
    return Volume(grid=e.grid, data=np.clip(response, 0.0, 1.0).astype(np.float32))


def frangi_multiscale(v: Volume, scales: ScaleSet, p: VesselnessParams) -> Volume:
    """Voxel-wise maximum of the single-scale responses over all scales."""
    out = None
    for sigma in scales.sigmas:
        response = frangi_response(hessian_at_scale(v, sigma), p).data
        out = response if out is None else np.maximum(out, response)
    return Volume(grid=v.grid, data=out)


def default_scales(radius_um: float, voxel_size_um: float) -> ScaleSet:
    """Physics-derived default scales: fiber radius in voxels times
    {0.6, 0.9, 1.2}, e.g. {1.0, 1.5, 2.0} for radius 6.5 um at 3.9 um."""
    base = radius_um / voxel_size_um
    return ScaleSet(sigmas=tuple(round(base * f, 6) for f in (0.6, 0.9, 1.2)))


def otsu_threshold(v: Volume) -> float:
    """Threshold maximizing between-class variance on a 256-bin histogram.

    Returns the lower edge of the first foreground bin; classify as
    foreground with value >= threshold. Raises on a constant volume.
    """
    data = v.data
    mn = float(data.min())
    mx = float(data.max())
    if mn == mx:
        raise ValueError("degenerate histogram: constant volume has no threshold")
    hist, edges = np.histogram(data, bins=256, range=(mn, mx))
    hist = hist.astype(np.float64)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    sum0 = np.cumsum(hist * centers)
    mu0 = _divide_nonzero(sum0, w0)
    mu1 = _divide_nonzero(sum0[-1] - sum0, w1)
    variance = w0[:-1] * w1[:-1] * (mu0[:-1] - mu1[:-1]) ** 2
    split = int(np.argmax(variance))
    return float(edges[split + 1])


def binarize(v: Volume, method: str = "otsu", threshold: float | None = None) -> LabelVolume:
    """Binary mask: value >= threshold, with the threshold either fixed or
    chosen by the Otsu histogram criterion."""
    if method == "fixed":
        if threshold is None or not math.isfinite(threshold):
            raise ValueError("fixed binarization needs a finite threshold")
        t = float(threshold)
    elif method == "otsu":
        t = otsu_threshold(v)
    else:
        raise ValueError(f"unknown binarization method '{method}'")
    return LabelVolume(grid=v.grid, data=(v.data >= t).astype(np.uint32))


def connected_components(b: LabelVolume) -> LabelVolume:
    """26-connectivity components of a binary mask, labeled 1..K in order of
    each component's first voxel in linear-index (x-fastest) scan order."""
    if b.data.max(initial=0) > 1:
        raise ValueError("connected_components requires a binary volume")
    structure = np.ones((3, 3, 3), dtype=np.int8)
    raw, count = ndimage.label(b.data, structure=structure)
    if count == 0:
        return LabelVolume.zeros(b.grid)
    flat = raw.ravel(order="F")
    labels, first = np.unique(flat, return_index=True)
    nonzero = labels != 0
    order = np.argsort(first[nonzero], kind="stable")
    remap = np.zeros(int(labels.max()) + 1, dtype=np.uint32)
    remap[labels[nonzero][order]] = np.arange(1, int(nonzero.sum()) + 1, dtype=np.uint32)
    return LabelVolume(grid=b.grid, data=remap[raw])


@dataclass
class OrientationField:
    """Per-voxel unit fiber axis plus validity mask (False where the local
    structure tensor is effectively zero)."""

    grid: GridSpec
    axes: np.ndarray   # (nx, ny, nz, 3) float32
    valid: np.ndarray  # (nx, ny, nz) bool


def structure_tensor_orientation(v: Volume, sigma_g: float, rho: float) -> OrientationField:
    """Local fiber direction from the structure tensor.

    Gradient from Gaussian first derivatives at ``sigma_g``; the gradient
    outer product is smoothed component-wise at ``rho``; the orientation is
    the eigenvector of the smallest tensor eigenvalue, canonicalized to
    z >= 0 (then y >= 0, then x >= 0 on ties). Voxels whose tensor trace is
    below 1e-12 of the volume maximum are flagged invalid.
    """
    if sigma_g <= 0:
        raise ValueError(f"sigma_g must be > 0, got {sigma_g}")
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    g = gaussian_kernel(sigma_g, 0)
    d1 = gaussian_kernel(sigma_g, 1)
    data = v.data.astype(np.float64)
    gx = _separable(data, (d1, g, g))
    gy = _separable(data, (g, d1, g))
    gz = _separable(data, (g, g, d1))

    def smooth(component: np.ndarray) -> np.ndarray:
        if rho == 0:
            return component
        k = gaussian_kernel(rho, 0)
        return _separable(component, (k, k, k))

    jxx = smooth(gx * gx)
    jyy = smooth(gy * gy)
    jzz = smooth(gz * gz)
    jxy = smooth(gx * gy)
    jxz = smooth(gx * gz)
    jyz = smooth(gy * gz)

    trace = jxx + jyy + jzz
    max_trace = float(trace.max())
    valid = (trace >= 1e-12 * max_trace) & (max_trace > 0)

    tensor = np.empty(v.grid.dims + (3, 3), dtype=np.float64)
    tensor[..., 0, 0] = jxx
    tensor[..., 1, 1] = jyy
    tensor[..., 2, 2] = jzz
    tensor[..., 0, 1] = tensor[..., 1, 0] = jxy
    tensor[..., 0, 2] = tensor[..., 2, 0] = jxz
    tensor[..., 1, 2] = tensor[..., 2, 1] = jyz
    _, vectors = np.linalg.eigh(tensor)
    axes = vectors[..., :, 0]
    flip = (axes[..., 2] < 0) \
        | ((axes[..., 2] == 0) & (axes[..., 1] < 0)) \
        | ((axes[..., 2] == 0) & (axes[..., 1] == 0) & (axes[..., 0] < 0))
    axes = np.where(flip[..., None], -axes, axes)
    return OrientationField(grid=v.grid, axes=axes.astype(np.float32),
                            valid=valid)


def write_orientation_field(field: OrientationField, path_stem: str | Path) -> None:
    """Persist as four sibling volumes: stem.ox/.oy/.oz (f32 components) and
    stem.valid (u8 mask, same raw+JSON layout with dtype tag "u8")."""
    stem = str(path_stem)
    for suffix, idx in ((".ox", 0), (".oy", 1), (".oz", 2)):
        write_volume(Volume(grid=field.grid,
                            data=np.ascontiguousarray(field.axes[..., idx])),
                     stem + suffix)
    meta = {
        "dims": list(field.grid.dims),
        "voxel_size_um": field.grid.voxel_size,
        "dtype": "u8",
        "order": "x-fastest",
        "endianness": "little",
    }
    Path(stem + ".valid.json").write_text(json.dumps(meta, indent=2) + "\n")
    Path(stem + ".valid.raw").write_bytes(
        field.valid.astype(np.uint8).ravel(order="F").tobytes())


def read_orientation_field(path_stem: str | Path) -> OrientationField:
    stem = str(path_stem)
    components = [read_volume(stem + suffix) for suffix in (".ox", ".oy", ".oz")]
    grid = components[0].grid
    axes = np.stack([c.data for c in components], axis=-1)
    meta = json.loads(Path(stem + ".valid.json").read_text())
    if meta.get("dtype") != "u8":
        raise ValueError(f"validity mask '{stem}.valid' must have dtype u8")
    raw = np.frombuffer(Path(stem + ".valid.raw").read_bytes(), dtype=np.uint8)
    valid = raw.reshape(grid.dims, order="F").astype(bool)
    return OrientationField(grid=grid, axes=axes, valid=valid)
