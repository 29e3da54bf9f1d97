"""Volume-level processing: baseline, smoothing, exclusion, batch fitting,
parameter-map assembly, and multiplanar slice resampling.

The fit stage is data-parallel over voxels: the included series are split
into chunks that are fit independently (optionally in worker processes)
and scattered back in index order, so the maps are bitwise identical for
any worker count.
"""

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .fitting import FitConfig

PARAM_NAMES = ("y_max", "t_peak", "alpha", "t01", "rt", "rmse", "r_squared")

DEFAULT_SIGMA_MM = 1.0
DEFAULT_THRESHOLD_HU = 100.0


@dataclass(frozen=True)
class VolumeSeries:
    """Registered 4D image; data indexed (frame, z, y, x)."""

    dims: tuple          # (nx, ny, nz)
    spacing: tuple       # (sx, sy, sz) mm
    frame_times: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        times = np.ascontiguousarray(self.frame_times, dtype=np.float64)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError("dims must be three positive counts")
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError("spacing must be three positive lengths")
        if times.ndim != 1 or times.size < 4 or np.any(np.diff(times) <= 0):
            raise ValueError("frame_times must be >= 4 strictly increasing values")
        nx, ny, nz = dims
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        expected = (times.size, nz, ny, nx)
        if data.shape != expected:
            if data.size == times.size * nz * ny * nx:
                data = data.reshape(expected)
            else:
                raise ValueError("data size does not match dims and frame count")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "frame_times", times)
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self):
        return self.frame_times.size


@dataclass(frozen=True)
class RoiMask:
    dims: tuple
    mask: np.ndarray  # bool, shape (nz, ny, nx)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        nx, ny, nz = dims
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        if mask.shape != (nz, ny, nx):
            if mask.size == nz * ny * nx:
                mask = mask.reshape((nz, ny, nx))
            else:
                raise ValueError("shape mismatch: mask does not match dims")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class BaselineEstimate:
    y_b: float


@dataclass
class ParameterMaps:
    """Per-voxel scalar maps plus a status map.

    Scalar maps are NaN wherever no fit was produced (excluded / no-signal
    voxels); the status map carries the code for every voxel.
    """

    dims: tuple
    spacing: tuple
    maps: dict            # name -> float64 array (nz, ny, nx)
    status: np.ndarray    # uint8 array (nz, ny, nx)

    def __getitem__(self, name):
        return self.maps[name]


@dataclass(frozen=True)
class PlaneSpec:
    """An oriented sampling plane in mm space."""

    origin: np.ndarray          # mm
    axis_u: np.ndarray          # unit vector
    axis_v: np.ndarray          # unit vector, orthogonal to axis_u
    size: tuple                 # (nu, nv)
    sample_spacing: float       # mm

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64)
        u = np.asarray(self.axis_u, dtype=np.float64)
        v = np.asarray(self.axis_v, dtype=np.float64)
        if origin.shape != (3,) or u.shape != (3,) or v.shape != (3,):
            raise ValueError("origin and axes must be 3-vectors")
        if abs(np.linalg.norm(u) - 1.0) > 1e-9 or abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("plane axes must be unit vectors")
        if abs(float(u @ v)) > 1e-9:
            raise ValueError("plane axes must be orthogonal")
        size = (int(self.size[0]), int(self.size[1]))
        if size[0] <= 0 or size[1] <= 0 or self.sample_spacing <= 0:
            raise ValueError("plane size and spacing must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "axis_u", u)
        object.__setattr__(self, "axis_v", v)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "sample_spacing", float(self.sample_spacing))


def compute_baseline(series, aorta_roi):
    """Mean HU over the ROI voxels across the first three frames."""
    if series.n_frames < 3:
        raise ValueError("need at least 3 frames for the baseline")
    mask = aorta_roi.mask
    if not mask.any():
        raise ValueError("empty ROI")
    return BaselineEstimate(y_b=float(series.data[:3, mask].mean()))


def subtract_baseline(series, baseline):
    """Subtract the scalar baseline from every sample; negatives retained."""
    return VolumeSeries(series.dims, series.spacing, series.frame_times,
                        series.data - baseline.y_b)


def gaussian_smooth(series, sigma_mm):
    """Smooth each frame with a 3D Gaussian of physical width sigma_mm.

    Per-axis sigma in voxels is sigma_mm / spacing; the kernel is truncated
    at 3 sigma, normalized to unit sum, and edges use replicate padding.
    sigma_mm = 0 is the identity.
    """
    if sigma_mm < 0:
        raise ValueError("sigma_mm must be non-negative")
    if sigma_mm == 0:
        return VolumeSeries(series.dims, series.spacing, series.frame_times,
                            series.data.copy())
    sx, sy, sz = series.spacing
    sigma_vox = (0.0, sigma_mm / sz, sigma_mm / sy, sigma_mm / sx)
    smoothed = gaussian_filter(series.data, sigma=sigma_vox, mode="nearest",
                               truncate=3.0)
    return VolumeSeries(series.dims, series.spacing, series.frame_times,
                        smoothed)


def exclusion_mask(contrast, threshold_hu=DEFAULT_THRESHOLD_HU):
    """Include voxels whose contrast sum over time reaches the threshold."""
    sums = contrast.data.sum(axis=0)
    return RoiMask(contrast.dims, sums >= threshold_hu)


def sphere_mask(dims, spacing, center_mm, radius_mm):
    """Boolean mask of voxels whose centers lie within the given sphere."""
    nx, ny, nz = dims
    sx, sy, sz = spacing
    zz, yy, xx = np.meshgrid(np.arange(nz) * sz, np.arange(ny) * sy,
                             np.arange(nx) * sx, indexing="ij")
    cx, cy, cz = center_mm
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2 + (zz - cz) ** 2
    return RoiMask(dims, d2 <= radius_mm ** 2)


def box_mask(dims, spacing, lo_mm, hi_mm):
    """Boolean mask of voxels whose centers lie inside the given mm box."""
    nx, ny, nz = dims
    sx, sy, sz = spacing
    zz, yy, xx = np.meshgrid(np.arange(nz) * sz, np.arange(ny) * sy,
                             np.arange(nx) * sx, indexing="ij")
    inside = ((xx >= lo_mm[0]) & (xx <= hi_mm[0])
              & (yy >= lo_mm[1]) & (yy <= hi_mm[1])
              & (zz >= lo_mm[2]) & (zz <= hi_mm[2]))
    return RoiMask(dims, inside)


def _fit_chunk(args):
    times, series, cfg = args
    out = np.empty((series.shape[0], kernels.N_OUT), dtype=np.float64)
    kernels.fit_batch(times, series, cfg[0], cfg[1], cfg[2], cfg[3], cfg[4],
                      cfg[5], out)
    return out


def fit_volume(contrast, mask, config=FitConfig(), workers=1):
    """Fit every included voxel's time series and assemble parameter maps.

    The result is bitwise independent of ``workers``; each voxel fit only
    reads its own series and writes its own map entries.
    """
    if tuple(mask.dims) != tuple(contrast.dims):
        raise ValueError("shape mismatch: mask does not match volume dims")
    nx, ny, nz = contrast.dims
    n_vox = nx * ny * nz
    flat_mask = mask.mask.reshape(-1)
    included = np.flatnonzero(flat_mask)

    cfg = (config.max_iterations, config.sse_rel_tolerance,
           config.step_tolerance, config.alpha_cap, config.initial_alpha,
           config.no_signal_floor_hu)
    times = contrast.frame_times

    if included.size:
        series = np.ascontiguousarray(
            contrast.data.reshape(contrast.n_frames, n_vox)[:, included].T)
        if workers <= 1 or included.size < 2 * workers:
            out = _fit_chunk((times, series, cfg))
        else:
            chunks = np.array_split(series, workers)
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
                parts = list(ex.map(_fit_chunk,
                                    [(times, c, cfg) for c in chunks]))
            out = np.concatenate(parts, axis=0)
    else:
        out = np.empty((0, kernels.N_OUT), dtype=np.float64)

    maps = {name: np.full(n_vox, np.nan) for name in PARAM_NAMES}
    status = np.full(n_vox, kernels.STATUS_EXCLUDED, dtype=np.uint8)
    for col, name in enumerate(PARAM_NAMES):
        maps[name][included] = out[:, col]
    status[included] = out[:, 9].astype(np.uint8)

    shape = (nz, ny, nx)
    return ParameterMaps(dims=contrast.dims, spacing=contrast.spacing,
                         maps={k: v.reshape(shape) for k, v in maps.items()},
                         status=status.reshape(shape))


def mpr_slice(volume, spacing, plane):
    """Resample a scalar volume on an oblique plane by trilinear interpolation.

    ``volume`` is indexed (z, y, x); voxel (i, j, k) sits at mm position
    (k*sx, j*sy, i*sz). Sample (i, j) of the output image lies at
    origin + i*spacing*axis_u + j*spacing*axis_v; the output array has
    shape (nv, nu), row index along axis_v. Samples outside the volume, or
    interpolating any NaN corner, come out NaN.
    """
    nz, ny, nx = volume.shape
    sx, sy, sz = spacing
    nu, nv = plane.size
    ii, jj = np.meshgrid(np.arange(nu), np.arange(nv), indexing="xy")
    pts = (plane.origin[None, None, :]
           + ii[..., None] * plane.sample_spacing * plane.axis_u[None, None, :]
           + jj[..., None] * plane.sample_spacing * plane.axis_v[None, None, :])

    fx = pts[..., 0] / sx
    fy = pts[..., 1] / sy
    fz = pts[..., 2] / sz
    inside = ((fx >= 0) & (fx <= nx - 1)
              & (fy >= 0) & (fy <= ny - 1)
              & (fz >= 0) & (fz <= nz - 1))

    # clip so indexing is safe; outside samples get overwritten with NaN
    fx = np.clip(fx, 0, nx - 1)
    fy = np.clip(fy, 0, ny - 1)
    fz = np.clip(fz, 0, nz - 1)
    x0 = np.minimum(fx.astype(np.intp), nx - 2) if nx > 1 else np.zeros_like(fx, dtype=np.intp)
    y0 = np.minimum(fy.astype(np.intp), ny - 2) if ny > 1 else np.zeros_like(fy, dtype=np.intp)
    z0 = np.minimum(fz.astype(np.intp), nz - 2) if nz > 1 else np.zeros_like(fz, dtype=np.intp)
    wx = fx - x0
    wy = fy - y0
    wz = fz - z0
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    z1 = np.minimum(z0 + 1, nz - 1)

    c000 = volume[z0, y0, x0]
    c001 = volume[z0, y0, x1]
    c010 = volume[z0, y1, x0]
    c011 = volume[z0, y1, x1]
    c100 = volume[z1, y0, x0]
    c101 = volume[z1, y0, x1]
    c110 = volume[z1, y1, x0]
    c111 = volume[z1, y1, x1]

    out = ((1 - wz) * ((1 - wy) * ((1 - wx) * c000 + wx * c001)
                       + wy * ((1 - wx) * c010 + wx * c011))
           + wz * ((1 - wy) * ((1 - wx) * c100 + wx * c101)
                   + wy * ((1 - wx) * c110 + wx * c111)))
    out[~inside] = np.nan
    return out


def default_workers():
    return os.cpu_count() or 1


def run_fit_pipeline(series, aorta_roi, sigma_mm=DEFAULT_SIGMA_MM,
                     threshold_hu=DEFAULT_THRESHOLD_HU, config=FitConfig(),
                     workers=1):
    """The fixed processing chain: baseline -> subtract -> smooth ->
    exclusion mask -> batch fit. Returns (maps, baseline, mask)."""
    baseline = compute_baseline(series, aorta_roi)
    contrast = subtract_baseline(series, baseline)
    smoothed = gaussian_smooth(contrast, sigma_mm)
    mask = exclusion_mask(smoothed, threshold_hu)
    maps = fit_volume(smoothed, mask, config, workers)
    return maps, baseline, mask
