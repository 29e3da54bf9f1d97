"""Single-voxel bounded least-squares fitting of the gamma-variate model.

Bounds are derived from the data (peak value +/- 40 HU, peak time +/- 5 s,
shape exponent in [0, alpha_cap]); the optimizer is a damped least-squares
loop with the analytic Jacobian and per-step projection onto the bound
box. The numerical work is delegated to :mod:`dcemap.kernels` so that a
single fit and a batched volume fit share one code path.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import DerivedParams, GammaVariateParams


class FitStatus(enum.IntEnum):
    CONVERGED = kernels.STATUS_CONVERGED
    EXCLUDED = kernels.STATUS_EXCLUDED
    NO_SIGNAL = kernels.STATUS_NO_SIGNAL
    MAX_ITERATIONS = kernels.STATUS_MAX_ITERATIONS
    DEGENERATE_SHAPE = kernels.STATUS_DEGENERATE_SHAPE


@dataclass(frozen=True)
class TimeSeries:
    """One voxel's baseline-subtracted contrast curve."""

    times: np.ndarray   # seconds, strictly increasing, first >= 0
    values: np.ndarray  # HU, may be negative

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=np.float64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if times.ndim != 1 or values.ndim != 1 or times.size != values.size:
            raise ValueError("times and values must be 1D arrays of equal length")
        if times.size < 4:
            raise ValueError("insufficient samples: need at least 4")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("invalid argument: non-finite samples")
        if times[0] < 0 or np.any(np.diff(times) <= 0):
            raise ValueError("invalid argument: times must be strictly increasing and non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class FitBounds:
    y_max_lo: float
    y_max_hi: float
    t_peak_lo: float
    t_peak_hi: float
    alpha_lo: float
    alpha_hi: float

    def contains(self, params, atol=0.0):
        return (self.y_max_lo - atol <= params.y_max <= self.y_max_hi + atol
                and self.t_peak_lo - atol <= params.t_peak <= self.t_peak_hi + atol
                and self.alpha_lo - atol <= params.alpha <= self.alpha_hi + atol)

    def as_tuple(self):
        return (self.y_max_lo, self.y_max_hi, self.t_peak_lo, self.t_peak_hi,
                self.alpha_lo, self.alpha_hi)


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 200
    sse_rel_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    alpha_cap: float = 1000.0
    initial_alpha: float = 3.0
    no_signal_floor_hu: float = 10.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.sse_rel_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if not (self.alpha_cap > self.initial_alpha > 0):
            raise ValueError("need alpha_cap > initial_alpha > 0")


@dataclass(frozen=True)
class FitResult:
    params: GammaVariateParams | None
    derived: DerivedParams | None
    rmse: float
    r_squared: float
    iterations: int
    status: FitStatus
    sse: float = field(default=math.nan)


def derive_bounds(series, alpha_cap=FitConfig.alpha_cap):
    """Bound box around the observed data, following the +/-40 HU and
    +/-5 s margins, with the t_peak lower bound kept strictly positive."""
    b = kernels.derive_bounds_arrays(series.times, series.values, alpha_cap)
    return FitBounds(*b)


def initial_guess(series, bounds, config):
    """Start point: data peak value and time, plus the configured shape
    exponent, nudged strictly inside the bound box where possible."""
    p = kernels.initial_guess_arrays(series.times, series.values,
                                     bounds.as_tuple(), config.initial_alpha)
    return GammaVariateParams(*p)


def fit_series(series, config=FitConfig()):
    """Fit one contrast series; returns a FitResult.

    Series whose peak contrast is below the no-signal floor are not fit
    (status NO_SIGNAL). A converged fit whose shape exponent is degenerate
    is reported as DEGENERATE_SHAPE with an infinite residence time.
    """
    out = np.empty(kernels.N_OUT, dtype=np.float64)
    kernels.fit_one(series.times, series.values,
                    config.max_iterations, config.sse_rel_tolerance,
                    config.step_tolerance, config.alpha_cap,
                    config.initial_alpha, config.no_signal_floor_hu, out)
    return result_from_row(out)


def result_from_row(row):
    """Build a FitResult from one kernel output row."""
    status = FitStatus(int(row[9]))
    if status == FitStatus.NO_SIGNAL:
        return FitResult(params=None, derived=None, rmse=math.nan,
                         r_squared=math.nan, iterations=int(row[7]),
                         status=status)
    params = GammaVariateParams(row[0], row[1], row[2])
    derived = DerivedParams(t01=row[3], rt=row[4])
    return FitResult(params=params, derived=derived, rmse=row[5],
                     r_squared=row[6], iterations=int(row[7]), status=status,
                     sse=row[8])


def goodness(series, params):
    """(rmse, r_squared) of the model against the series.

    r_squared is defined as 0 when the series is constant (SStot = 0).
    """
    from .model import eval_model
    resid = series.values - eval_model(params, series.times)
    sse = float(resid @ resid)
    rmse = math.sqrt(sse / len(series))
    sstot = float(np.sum((series.values - series.values.mean()) ** 2))
    r_squared = 0.0 if sstot == 0.0 else 1.0 - sse / sstot
    return rmse, r_squared
