"""Synthetic ground-truth phantoms, acquisition schedules, noise, and the
frame-budget study.

A phantom is a set of non-overlapping geometric regions, each carrying one
gamma-variate truth, voxelized on a regular grid and sampled on a
heartbeat-gated schedule. Everything downstream (noise, refits, study
tables) is deterministic for a fixed seed.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .fitting import FitConfig
from .model import (EPS_DEGENERATE, GammaVariateParams, arrival_time_t01,
                    eval_model, residence_time)
from .pipeline import (PARAM_NAMES, ParameterMaps, VolumeSeries,
                       box_mask, exclusion_mask, fit_volume, sphere_mask)

TRUTH_PARAM_NAMES = ("y_max", "t_peak", "alpha", "t01", "rt")


@dataclass(frozen=True)
class Sphere:
    center_mm: tuple
    radius_mm: float

    def voxel_mask(self, dims, spacing):
        return sphere_mask(dims, spacing, self.center_mm, self.radius_mm).mask


@dataclass(frozen=True)
class Box:
    lo_mm: tuple
    hi_mm: tuple

    def voxel_mask(self, dims, spacing):
        return box_mask(dims, spacing, self.lo_mm, self.hi_mm).mask


@dataclass(frozen=True)
class Region:
    shape: object                      # Sphere or Box
    truth: GammaVariateParams
    onset_shift: float = 0.0           # seconds; creates model-misspecified data


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple
    spacing: tuple
    background_hu: float
    regions: tuple
    noise_sigma_hu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "regions", tuple(self.regions))
        if self.noise_sigma_hu < 0:
            raise ValueError("noise_sigma_hu must be non-negative")
        # later regions may not intersect earlier ones
        covered = None
        for region in self.regions:
            m = region.shape.voxel_mask(self.dims, self.spacing)
            if covered is not None and np.any(covered & m):
                raise ValueError("overlapping regions")
            covered = m if covered is None else covered | m

    def region_masks(self):
        return [r.shape.voxel_mask(self.dims, self.spacing)
                for r in self.regions]


@dataclass(frozen=True)
class SamplingSchedule:
    frame_times: np.ndarray

    def __post_init__(self):
        times = np.ascontiguousarray(self.frame_times, dtype=np.float64)
        if times.ndim != 1 or times.size < 4 or np.any(np.diff(times) <= 0):
            raise ValueError("need >= 4 strictly increasing frame times")
        object.__setattr__(self, "frame_times", times)

    def __len__(self):
        return self.frame_times.size


@dataclass
class RecoveryStats:
    """Voxelwise fit-vs-truth errors over jointly converged voxels."""

    signed: dict          # name -> array of fitted - truth
    abs_rel: dict         # name -> array of |error| / |truth|
    median: dict          # name -> median abs rel error
    p90: dict             # name -> 90th percentile abs rel error
    n_voxels: int = 0


def make_schedule(heart_rate_bpm, beats_per_frame, n_dynamic_frames=26,
                  late_frame_time=100.0):
    """Heartbeat-gated schedule: evenly spaced dynamic frames plus one late
    washout frame."""
    if heart_rate_bpm <= 0:
        raise ValueError("heart_rate_bpm must be positive")
    if beats_per_frame not in (1, 2, 3):
        raise ValueError("beats_per_frame must be 1, 2, or 3")
    dt = beats_per_frame * 60.0 / heart_rate_bpm
    dynamic = np.arange(n_dynamic_frames) * dt
    if late_frame_time <= dynamic[-1]:
        raise ValueError("schedule overlap: late frame not after last dynamic frame")
    return SamplingSchedule(np.append(dynamic, late_frame_time))


def synthesize(spec, schedule):
    """Forward-model a phantom: returns (VolumeSeries, truth ParameterMaps).

    Region voxels follow their truth curve (shifted by onset_shift, zero
    before onset); background voxels are constant. Truth maps carry the
    region parameters with analytically derived t01 and RT, NaN elsewhere.
    """
    nx, ny, nz = spec.dims
    times = schedule.frame_times
    data = np.full((len(schedule), nz, ny, nx), spec.background_hu)

    shape3 = (nz, ny, nx)
    truth_maps = {name: np.full(shape3, np.nan) for name in PARAM_NAMES}
    status = np.full(shape3, kernels.STATUS_EXCLUDED, dtype=np.uint8)

    for region, mask in zip(spec.regions, spec.region_masks()):
        shifted = times - region.onset_shift
        curve = np.where(shifted > 0,
                         eval_model(region.truth, np.maximum(shifted, 0.0)),
                         0.0)
        data[:, mask] = curve[:, None]

        truth_maps["y_max"][mask] = region.truth.y_max
        truth_maps["t_peak"][mask] = region.truth.t_peak
        truth_maps["alpha"][mask] = region.truth.alpha
        truth_maps["rt"][mask] = residence_time(region.truth)
        if region.truth.alpha > EPS_DEGENERATE:
            truth_maps["t01"][mask] = arrival_time_t01(region.truth)
        truth_maps["rmse"][mask] = 0.0
        truth_maps["r_squared"][mask] = 1.0
        status[mask] = kernels.STATUS_CONVERGED

    series = VolumeSeries(spec.dims, spec.spacing, times, data)
    truth = ParameterMaps(dims=spec.dims, spacing=spec.spacing,
                          maps=truth_maps, status=status)
    return series, truth


def add_noise(series, sigma_hu, seed):
    """Additive white Gaussian noise in HU, from a counter-based (Philox)
    stream so the result depends only on the seed."""
    if sigma_hu < 0:
        raise ValueError("sigma_hu must be non-negative")
    if sigma_hu == 0:
        return VolumeSeries(series.dims, series.spacing, series.frame_times,
                            series.data.copy())
    rng = np.random.Generator(np.random.Philox(seed))
    noisy = series.data + rng.normal(0.0, sigma_hu, size=series.data.shape)
    return VolumeSeries(series.dims, series.spacing, series.frame_times, noisy)


def recovery_error(fitted, truth):
    """Fit-vs-truth error statistics over voxels converged in both maps."""
    if tuple(fitted.dims) != tuple(truth.dims):
        raise ValueError("shape mismatch: map dims differ")
    both = ((fitted.status == kernels.STATUS_CONVERGED)
            & (truth.status == kernels.STATUS_CONVERGED))

    signed, abs_rel, median, p90 = {}, {}, {}, {}
    for name in TRUTH_PARAM_NAMES:
        f = fitted.maps[name][both]
        t = truth.maps[name][both]
        ok = np.isfinite(f) & np.isfinite(t) & (t != 0)
        err = f[ok] - t[ok]
        rel = np.abs(err) / np.abs(t[ok])
        signed[name] = err
        abs_rel[name] = rel
        median[name] = float(np.median(rel)) if rel.size else math.nan
        p90[name] = float(np.percentile(rel, 90)) if rel.size else math.nan
    return RecoveryStats(signed=signed, abs_rel=abs_rel, median=median,
                         p90=p90, n_voxels=int(both.sum()))


def select_frames(schedule, budget, t_peak_ref):
    """Deterministic frame subset: always keeps the first frame, the frame
    nearest t_peak_ref, and the late frame; the rest evenly spaced."""
    n = len(schedule)
    if budget < 4:
        raise ValueError("insufficient frames: budget must be >= 4")
    if budget > n:
        raise ValueError("insufficient frames: budget exceeds schedule length")
    i_peak = int(np.argmin(np.abs(schedule.frame_times - t_peak_ref)))
    keep = {0, i_peak, n - 1}
    rest = [i for i in range(n) if i not in keep]
    need = budget - len(keep)
    for k in range(need):
        keep.add(rest[(k * len(rest)) // need])
    return np.array(sorted(keep), dtype=np.intp)


def frame_count_study(spec, schedule, frame_budgets, replicates, seed,
                      config=FitConfig(), threshold_hu=100.0):
    """Refit the phantom under reduced frame budgets with fresh noise per
    replicate; returns rows of (budget, parameter, median, p90) with the
    voxel errors pooled across replicates."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    for b in frame_budgets:
        if b < 4:
            raise ValueError("insufficient frames: budget must be >= 4")
        if b > len(schedule):
            raise ValueError("insufficient frames: budget exceeds schedule length")

    clean, truth = synthesize(spec, schedule)
    t_peak_ref = float(np.median([r.truth.t_peak for r in spec.regions]))

    rows = []
    for bi, budget in enumerate(frame_budgets):
        idx = select_frames(schedule, budget, t_peak_ref)
        sub = VolumeSeries(spec.dims, spec.spacing,
                           schedule.frame_times[idx], clean.data[idx])
        pooled = {name: [] for name in TRUTH_PARAM_NAMES}
        for rep in range(replicates):
            rep_seed = int(np.random.SeedSequence(
                [spec.seed if seed is None else seed, bi, rep]
            ).generate_state(1)[0])
            noisy = add_noise(sub, spec.noise_sigma_hu, rep_seed)
            mask = exclusion_mask(noisy, threshold_hu)
            fitted = fit_volume(noisy, mask, config)
            stats = recovery_error(fitted, truth)
            for name in TRUTH_PARAM_NAMES:
                pooled[name].append(stats.abs_rel[name])
        for name in TRUTH_PARAM_NAMES:
            all_rel = np.concatenate(pooled[name]) if pooled[name] else np.array([])
            rows.append({
                "budget": int(budget),
                "parameter": name,
                "median_abs_rel_error": float(np.median(all_rel)) if all_rel.size else math.nan,
                "p90_abs_rel_error": float(np.percentile(all_rel, 90)) if all_rel.size else math.nan,
            })
    return rows


def write_study_csv(rows, path):
    fields = ["budget", "parameter", "median_abs_rel_error", "p90_abs_rel_error"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in fields})
