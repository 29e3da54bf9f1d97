"""Gamma-variate bolus model and the flow parameters derived from it.

The model for one voxel's contrast curve is

    m(t) = y_max * (t / t_peak)**alpha * exp(alpha * (1 - t / t_peak))

which rises from 0 at t=0, peaks at t=t_peak with value y_max, and decays.
From a fitted parameter set two flow surrogates are derived: the arrival
time t01 (rising-edge time where the curve reaches a fraction, by default
1%, of its peak) and the residence time RT (first temporal moment of the
curve, closed form t_peak * (alpha + 1) / alpha).

Everything here is a pure function; all the heavy per-voxel work lives in
``kernels``, which shares the scalar njit cores defined at the bottom of
this module.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.integrate import simpson
from scipy.special import gammaincc

# Shape exponents at or below this are treated as a degenerate (flat) curve:
# RT diverges and the arrival time is undefined.
EPS_DEGENERATE = 1e-6

# Bisection policy for the arrival-time solve.
T01_ABS_TOL_FRACTION = 1e-10   # absolute tolerance, as a fraction of t_peak
T01_MAX_ITER = 200


@dataclass(frozen=True)
class GammaVariateParams:
    """The three fitted model parameters."""

    y_max: float    # contrast amplitude, HU
    t_peak: float   # time of peak, s
    alpha: float    # shape exponent, dimensionless

    def __post_init__(self):
        for v in (self.y_max, self.t_peak, self.alpha):
            if not math.isfinite(v):
                raise ValueError("invalid argument: parameters must be finite")
        if self.t_peak <= 0:
            raise ValueError("invalid argument: t_peak must be positive")
        if self.alpha < 0:
            raise ValueError("invalid argument: alpha must be non-negative")


@dataclass(frozen=True)
class DerivedParams:
    """Flow parameters derived from a fitted curve.

    t01 is NaN when not computed (degenerate shape); rt is +inf when the
    first-moment integral diverges (alpha -> 0).
    """

    t01: float
    rt: float


def eval_model(params, t):
    """Evaluate the model at time(s) t (seconds, >= 0). Returns HU.

    Accepts a scalar or an array; returns the matching shape.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("invalid argument: t must be finite")
    if np.any(t_arr < 0):
        raise ValueError("invalid argument: t must be non-negative")

    if params.alpha == 0.0:
        out = np.full_like(t_arr, params.y_max)
    else:
        out = np.zeros_like(t_arr)
        pos = t_arr > 0
        u = t_arr[pos] / params.t_peak
        out[pos] = params.y_max * np.exp(params.alpha * (np.log(u) + 1.0 - u))
    return out if np.ndim(t) else float(out)


def eval_gradient(params, t):
    """Partial derivatives of the model value w.r.t. (y_max, t_peak, alpha).

    Only defined away from the boundary: requires t > 0 and alpha > 0.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("invalid argument: t must be finite")
    if params.alpha == 0.0 or np.any(t_arr <= 0):
        raise ValueError("gradient undefined at boundary (t = 0 or alpha = 0)")

    u = t_arr / params.t_peak
    shape = np.exp(params.alpha * (np.log(u) + 1.0 - u))
    m = params.y_max * shape
    d_y_max = shape
    d_t_peak = m * params.alpha * (t_arr - params.t_peak) / params.t_peak**2
    d_alpha = m * (np.log(u) + 1.0 - u)
    if np.ndim(t):
        return d_y_max, d_t_peak, d_alpha
    return float(d_y_max), float(d_t_peak), float(d_alpha)


def residence_time(params):
    """Residence time RT = t_peak * (alpha + 1) / alpha.

    This is the exact ratio of the first moment of the model curve to its
    area on [0, inf). Returns +inf for a degenerate shape (alpha below
    EPS_DEGENERATE), where the integral diverges.
    """
    if params.alpha <= EPS_DEGENERATE:
        return math.inf
    return params.t_peak * (params.alpha + 1.0) / params.alpha


def residence_time_quadrature(params, t_upper, n_points):
    """Residence time by direct numerical quadrature of the two integrals.

    Validation oracle for :func:`residence_time`; never used in production
    paths. Raises if the truncated tail carries more than 1e-9 of either
    integral's total mass.
    """
    if params.alpha <= 0:
        raise ValueError("invalid argument: alpha must be positive")
    if n_points < 3:
        raise ValueError("invalid argument: n_points too small")

    # Tail mass of the truncated integrals, via the regularized upper
    # incomplete gamma function: substituting u = alpha * t / t_peak turns
    # Int t^k m(t) dt over [T, inf) into a Gamma(alpha + 1 + k) tail.
    x = params.alpha * t_upper / params.t_peak
    tail_area = gammaincc(params.alpha + 1.0, x)
    tail_moment = gammaincc(params.alpha + 2.0, x)
    if max(tail_area, tail_moment) > 1e-9:
        raise ValueError("truncation too coarse: increase t_upper")

    # Composite Simpson on a quadratically graded grid: t = t_upper * x^2
    # concentrates nodes near t = 0, where t^alpha has unbounded derivatives
    # for alpha < 1 and uniform grids converge slowly.
    x = np.linspace(0.0, 1.0, int(n_points))
    t = t_upper * x * x
    m = eval_model(params, t)
    area = simpson(m, x=t)
    moment = simpson(t * m, x=t)
    return float(moment / area)


def arrival_time_t01(params, fraction=0.01):
    """Rising-edge time at which the model reaches ``fraction`` of its peak.

    Solved by bisection on (0, t_peak), where ln(u) + 1 - u (u = t/t_peak)
    is strictly increasing.
    """
    if params.alpha == 0.0:
        raise ValueError("constant curve has no arrival time")
    if not (0.0 < fraction < 1.0):
        raise ValueError("invalid argument: fraction must be in (0, 1)")
    return _t01_bisect(params.t_peak, params.alpha, fraction)


# ---------------------------------------------------------------------------
# Scalar njit cores, shared with the batch-fitting kernels.

@njit(cache=True)
def _shape_factor(t_peak, alpha, t):
    # (t/t_peak)^alpha * exp(alpha (1 - t/t_peak)), computed in log space
    if alpha == 0.0:
        return 1.0
    if t <= 0.0:
        return 0.0
    u = t / t_peak
    return math.exp(alpha * (math.log(u) + 1.0 - u))


@njit(cache=True)
def _value(y_max, t_peak, alpha, t):
    return y_max * _shape_factor(t_peak, alpha, t)


@njit(cache=True)
def _gradient(y_max, t_peak, alpha, t):
    # Limits at t -> 0+ (alpha > 0): all three partials vanish.
    if t <= 0.0:
        return 0.0, 0.0, 0.0
    s = _shape_factor(t_peak, alpha, t)
    m = y_max * s
    u = t / t_peak
    g = math.log(u) + 1.0 - u
    return s, m * alpha * (t - t_peak) / (t_peak * t_peak), m * g


@njit(cache=True)
def _t01_bisect(t_peak, alpha, fraction):
    # Root of ln(u) + 1 - u = ln(fraction)/alpha on u in (0, 1).
    target = math.log(fraction) / alpha
    lo = 0.0
    hi = t_peak
    tol = T01_ABS_TOL_FRACTION * t_peak
    for _ in range(T01_MAX_ITER):
        mid = 0.5 * (lo + hi)
        u = mid / t_peak
        if math.log(u) + 1.0 - u < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)
