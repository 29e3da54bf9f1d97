"""File formats beyond the NIfTI volumes: JSON sidecars (frame times,
planes, phantom specs), the parameter-map directory with its run manifest,
study CSVs, and PGM slice export."""

import json
import math
import os
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .fitting import FitConfig
from .kernels import T_PEAK_FLOOR_S, T_PEAK_MARGIN_S, Y_MAX_MARGIN_HU
from .model import GammaVariateParams
from .nifti import read_nifti, write_nifti
from .phantom import Box, PhantomSpec, Region, SamplingSchedule, Sphere
from .pipeline import PARAM_NAMES, ParameterMaps, PlaneSpec, VolumeSeries

MAP_FILENAMES = {
    "y_max": "y_max.nii",
    "t_peak": "t_peak.nii",
    "alpha": "alpha.nii",
    "t01": "t01.nii",
    "rt": "rt.nii",
    "rmse": "rmse.nii",
    "r_squared": "r2.nii",
}
STATUS_FILENAME = "status.nii"
MANIFEST_FILENAME = "manifest.json"

PIPELINE_ORDER = ("read", "subtract_baseline", "gaussian_smooth",
                  "exclusion_mask", "fit_volume", "write_maps")


# -- frame-time sidecar ------------------------------------------------------

def write_times_sidecar(path, frame_times, **metadata):
    doc = {"frame_times_s": [float(t) for t in frame_times]}
    doc.update(metadata)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_times_sidecar(path):
    with open(path) as fh:
        doc = json.load(fh)
    times = np.asarray(doc["frame_times_s"], dtype=np.float64)
    if times.ndim != 1 or np.any(np.diff(times) <= 0):
        raise ValueError("bad times sidecar: times must be strictly increasing")
    return times


def read_volume_series(path_4d, path_times):
    """Read a 4D NIfTI plus its frame-time sidecar into a VolumeSeries."""
    array, spacing = read_nifti(path_4d)
    if array.ndim != 4:
        raise ValueError("bad volume file: expected a 4D image")
    times = read_times_sidecar(path_times)
    if times.size != array.shape[0]:
        raise ValueError("timing mismatch: sidecar frame count differs from image")
    nt, nz, ny, nx = array.shape
    return VolumeSeries((nx, ny, nz), spacing, times, array)


def write_volume_series(series, path_4d, path_times, **metadata):
    write_nifti(path_4d, series.data.astype(np.float32), series.spacing,
                frame_times=series.frame_times)
    write_times_sidecar(path_times, series.frame_times, **metadata)


# -- plane files -------------------------------------------------------------

def write_plane_file(path, plane):
    doc = {
        "origin_mm": list(map(float, plane.origin)),
        "axis_u": list(map(float, plane.axis_u)),
        "axis_v": list(map(float, plane.axis_v)),
        "size": [int(plane.size[0]), int(plane.size[1])],
        "sample_spacing_mm": float(plane.sample_spacing),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_plane_file(path):
    with open(path) as fh:
        doc = json.load(fh)
    return PlaneSpec(origin=np.asarray(doc["origin_mm"], dtype=float),
                     axis_u=np.asarray(doc["axis_u"], dtype=float),
                     axis_v=np.asarray(doc["axis_v"], dtype=float),
                     size=tuple(doc["size"]),
                     sample_spacing=float(doc["sample_spacing_mm"]))


# -- phantom spec files ------------------------------------------------------

def read_phantom_spec(path):
    """Parse a declarative phantom spec; returns (PhantomSpec, schedule).

    The schedule block is optional; when absent the caller must supply one.
    """
    with open(path) as fh:
        doc = json.load(fh)
    regions = []
    for rdoc in doc.get("regions", []):
        shape_doc = rdoc["shape"]
        kind = shape_doc["kind"]
        if kind == "sphere":
            shape = Sphere(center_mm=tuple(shape_doc["center_mm"]),
                           radius_mm=float(shape_doc["radius_mm"]))
        elif kind == "box":
            shape = Box(lo_mm=tuple(shape_doc["lo_mm"]),
                        hi_mm=tuple(shape_doc["hi_mm"]))
        else:
            raise ValueError(f"unknown region shape {kind!r}")
        truth = GammaVariateParams(**rdoc["params"])
        regions.append(Region(shape=shape, truth=truth,
                              onset_shift=float(rdoc.get("onset_shift_s", 0.0))))
    spec = PhantomSpec(dims=tuple(doc["dims"]),
                       spacing=tuple(doc["spacing_mm"]),
                       background_hu=float(doc.get("background_hu", 0.0)),
                       regions=tuple(regions),
                       noise_sigma_hu=float(doc.get("noise_sigma_hu", 0.0)),
                       seed=int(doc.get("seed", 0)))
    schedule = None
    if "schedule" in doc:
        sdoc = doc["schedule"]
        if "frame_times_s" in sdoc:
            schedule = SamplingSchedule(np.asarray(sdoc["frame_times_s"], float))
        else:
            from .phantom import make_schedule
            schedule = make_schedule(
                heart_rate_bpm=float(sdoc["heart_rate_bpm"]),
                beats_per_frame=int(sdoc["beats_per_frame"]),
                n_dynamic_frames=int(sdoc.get("n_dynamic_frames", 26)),
                late_frame_time=float(sdoc.get("late_frame_time_s", 100.0)))
    return spec, schedule


# -- parameter maps ----------------------------------------------------------

def write_maps(maps, out_dir, config=None, sigma_mm=None, threshold_hu=None,
               extra_manifest=None):
    """Write one float32 NIfTI per parameter, a uint8 status map, and a
    run manifest."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        for name in PARAM_NAMES:
            write_nifti(os.path.join(out_dir, MAP_FILENAMES[name]),
                        maps.maps[name].astype(np.float32), maps.spacing)
        write_nifti(os.path.join(out_dir, STATUS_FILENAME),
                    maps.status.astype(np.uint8), maps.spacing)

        config = config or FitConfig()
        manifest = {
            "software": "dcemap",
            "version": __version__,
            "pipeline_order": list(PIPELINE_ORDER),
            "fit_config": {
                "max_iterations": config.max_iterations,
                "sse_rel_tolerance": config.sse_rel_tolerance,
                "step_tolerance": config.step_tolerance,
                "alpha_cap": config.alpha_cap,
                "initial_alpha": config.initial_alpha,
                "no_signal_floor_hu": config.no_signal_floor_hu,
            },
            "bounds_policy": {
                "y_max_margin_hu": Y_MAX_MARGIN_HU,
                "t_peak_margin_s": T_PEAK_MARGIN_S,
                "t_peak_floor_s": T_PEAK_FLOOR_S,
            },
            "sigma_mm": sigma_mm,
            "threshold_hu": threshold_hu,
            "status_codes": {"converged": 0, "excluded": 1, "no_signal": 2,
                             "max_iterations": 3, "degenerate_shape": 4},
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        if extra_manifest:
            manifest.update(extra_manifest)
        with open(os.path.join(out_dir, MANIFEST_FILENAME), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"io failure: {exc}") from exc


def read_maps(map_dir):
    """Read a map directory written by :func:`write_maps`."""
    maps = {}
    spacing = None
    for name in PARAM_NAMES:
        arr, spacing = read_nifti(os.path.join(map_dir, MAP_FILENAMES[name]))
        maps[name] = arr
    status, _ = read_nifti(os.path.join(map_dir, STATUS_FILENAME))
    nz, ny, nx = status.shape
    return ParameterMaps(dims=(nx, ny, nz), spacing=spacing, maps=maps,
                         status=status.astype(np.uint8))


# -- slice export ------------------------------------------------------------

def write_pgm(path, image_u8):
    h, w = image_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image_u8, dtype=np.uint8).tobytes())


def window_to_u8(values, lo, hi):
    """Linear window to [0, 255], round half up; NaN renders as 0."""
    if not lo < hi:
        raise ValueError("invalid argument: window lo must be < hi")
    scaled = (np.asarray(values, float) - lo) / (hi - lo) * 255.0
    out = np.floor(scaled + 0.5)
    out = np.clip(out, 0, 255)
    out[~np.isfinite(scaled)] = 0
    return out.astype(np.uint8)


def export_slice(map_path, plane_path, out_prefix, window):
    """MPR-resample a map file onto a plane; writes <prefix>.pgm and
    <prefix>.csv (raw values, NaN spelled 'nan')."""
    from .pipeline import mpr_slice
    volume, spacing = read_nifti(map_path)
    if volume.ndim != 3:
        raise ValueError("bad volume file: slice export needs a 3D map")
    plane = read_plane_file(plane_path)
    sampled = mpr_slice(volume, spacing, plane)

    write_pgm(str(out_prefix) + ".pgm", window_to_u8(sampled, *window))
    with open(str(out_prefix) + ".csv", "w") as fh:
        for row in sampled:
            fh.write(",".join("nan" if not math.isfinite(v) else repr(float(v))
                              for v in row))
            fh.write("\n")
    return sampled
