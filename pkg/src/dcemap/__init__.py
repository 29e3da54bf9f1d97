"""Voxelwise gamma-variate analysis of dynamic contrast-enhanced CT."""

__version__ = "0.1.0"

from .model import (DerivedParams, GammaVariateParams, arrival_time_t01,
                    eval_gradient, eval_model, residence_time,
                    residence_time_quadrature)
from .fitting import (FitBounds, FitConfig, FitResult, FitStatus, TimeSeries,
                      derive_bounds, fit_series, goodness, initial_guess)
from .pipeline import (BaselineEstimate, ParameterMaps, PlaneSpec, RoiMask,
                       VolumeSeries, compute_baseline, exclusion_mask,
                       fit_volume, gaussian_smooth, mpr_slice,
                       subtract_baseline)
from .phantom import (PhantomSpec, Region, SamplingSchedule, Sphere, Box,
                      add_noise, frame_count_study, make_schedule,
                      recovery_error, synthesize)

__all__ = [
    "DerivedParams", "GammaVariateParams", "arrival_time_t01",
    "eval_gradient", "eval_model", "residence_time",
    "residence_time_quadrature",
    "FitBounds", "FitConfig", "FitResult", "FitStatus", "TimeSeries",
    "derive_bounds", "fit_series", "goodness", "initial_guess",
    "BaselineEstimate", "ParameterMaps", "PlaneSpec", "RoiMask",
    "VolumeSeries", "compute_baseline", "exclusion_mask", "fit_volume",
    "gaussian_smooth", "mpr_slice", "subtract_baseline",
    "PhantomSpec", "Region", "SamplingSchedule", "Sphere", "Box",
    "add_noise", "frame_count_study", "make_schedule", "recovery_error",
    "synthesize",
]
