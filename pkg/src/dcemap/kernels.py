"""Numba kernels for per-voxel bounded least-squares fitting.

One voxel fit = bound derivation + initial guess + a damped (Levenberg-
Marquardt style) iteration with the analytic Jacobian, each trial step
projected onto the bound box. ``fit_batch`` runs the same scalar kernel
over a stack of series sequentially; parallelism across voxels is handled
one level up (process chunks), which keeps the output bitwise independent
of the worker count.
"""

import math

import numpy as np
from numba import njit

from .model import EPS_DEGENERATE, _gradient, _t01_bisect, _value

# Status codes, shared with the status map written by the pipeline.
STATUS_CONVERGED = 0
STATUS_EXCLUDED = 1
STATUS_NO_SIGNAL = 2
STATUS_MAX_ITERATIONS = 3
STATUS_DEGENERATE_SHAPE = 4

# Bound-box construction around the observed data.
Y_MAX_MARGIN_HU = 40.0
T_PEAK_MARGIN_S = 5.0
T_PEAK_FLOOR_S = 0.1

# Layout of one row of the batch output array.
N_OUT = 10  # y_max, t_peak, alpha, t01, rt, rmse, r2, iterations, sse, status


@njit(cache=True)
def derive_bounds_arrays(times, values, alpha_cap):
    """Data-driven bound box: (ymax_lo, ymax_hi, tp_lo, tp_hi, a_lo, a_hi)."""
    imax = 0
    vmax = values[0]
    for i in range(1, values.shape[0]):
        if values[i] > vmax:
            vmax = values[i]
            imax = i
    tmax = times[imax]
    # Lower t_peak bound: the +-5 s margin, floored so it stays strictly
    # positive and never above the second sample time.
    tp_floor = min(times[1], T_PEAK_FLOOR_S)
    tp_lo = max(tmax - T_PEAK_MARGIN_S, tp_floor)
    return (vmax - Y_MAX_MARGIN_HU, vmax + Y_MAX_MARGIN_HU,
            tp_lo, tmax + T_PEAK_MARGIN_S,
            0.0, alpha_cap)


@njit(cache=True)
def _nudge(x, lo, hi):
    # clip into the open interval where possible
    w = hi - lo
    if w <= 0.0:
        return lo
    eps = 1e-6 * w
    return min(max(x, lo + eps), hi - eps)


@njit(cache=True)
def initial_guess_arrays(times, values, b, initial_alpha):
    imax = 0
    vmax = values[0]
    for i in range(1, values.shape[0]):
        if values[i] > vmax:
            vmax = values[i]
            imax = i
    return (_nudge(vmax, b[0], b[1]),
            _nudge(times[imax], b[2], b[3]),
            _nudge(initial_alpha, b[4], b[5]))


@njit(cache=True)
def _sse(times, values, p0, p1, p2):
    s = 0.0
    for i in range(times.shape[0]):
        r = values[i] - _value(p0, p1, p2, times[i])
        s += r * r
    return s


@njit(cache=True)
def _solve3(a, g, lam, d):
    """Solve (A + lam*diag(A) + ridge*I) d = g for a symmetric 3x3 A.

    The tiny ridge keeps the system solvable when a Jacobian column is
    (nearly) zero, e.g. the t_peak column as alpha approaches 0.
    """
    ridge = 1e-12 * max(a[0, 0], max(a[1, 1], a[2, 2]))
    m = np.empty((3, 4))
    for i in range(3):
        for j in range(3):
            m[i, j] = a[i, j]
        m[i, i] = a[i, i] * (1.0 + lam) + ridge
        m[i, 3] = g[i]
    # Gaussian elimination with partial pivoting
    for col in range(3):
        piv = col
        big = abs(m[col, col])
        for r in range(col + 1, 3):
            if abs(m[r, col]) > big:
                big = abs(m[r, col])
                piv = r
        if big == 0.0:
            return False
        if piv != col:
            for j in range(4):
                tmp = m[col, j]
                m[col, j] = m[piv, j]
                m[piv, j] = tmp
        for r in range(col + 1, 3):
            f = m[r, col] / m[col, col]
            for j in range(col, 4):
                m[r, j] -= f * m[col, j]
    for i in range(2, -1, -1):
        s = m[i, 3]
        for j in range(i + 1, 3):
            s -= m[i, j] * d[j]
        d[i] = s / m[i, i]
    return True


@njit(cache=True)
def fit_one(times, values, max_iterations, sse_rel_tolerance, step_tolerance,
            alpha_cap, initial_alpha, no_signal_floor, out):
    """Fit one series; writes the N_OUT result row into ``out``."""
    n = times.shape[0]

    vmax = values[0]
    for i in range(1, n):
        if values[i] > vmax:
            vmax = values[i]
    if vmax < no_signal_floor:
        for k in range(7):
            out[k] = np.nan
        out[7] = 0.0
        out[8] = np.nan
        out[9] = STATUS_NO_SIGNAL
        return

    b = derive_bounds_arrays(times, values, alpha_cap)
    p0, p1, p2 = initial_guess_arrays(times, values, b, initial_alpha)

    sse = _sse(times, values, p0, p1, p2)
    lam = 1e-3
    status = STATUS_MAX_ITERATIONS
    iters = 0
    a = np.empty((3, 3))
    g = np.empty(3)
    d = np.empty(3)

    if sse == 0.0:
        status = STATUS_CONVERGED

    while status == STATUS_MAX_ITERATIONS and iters < max_iterations:
        iters += 1
        # normal equations from the analytic Jacobian
        for i in range(3):
            g[i] = 0.0
            for j in range(3):
                a[i, j] = 0.0
        for k in range(n):
            j0, j1, j2 = _gradient(p0, p1, p2, times[k])
            r = values[k] - _value(p0, p1, p2, times[k])
            a[0, 0] += j0 * j0
            a[0, 1] += j0 * j1
            a[0, 2] += j0 * j2
            a[1, 1] += j1 * j1
            a[1, 2] += j1 * j2
            a[2, 2] += j2 * j2
            g[0] += j0 * r
            g[1] += j1 * r
            g[2] += j2 * r
        a[1, 0] = a[0, 1]
        a[2, 0] = a[0, 2]
        a[2, 1] = a[1, 2]

        if not _solve3(a, g, lam, d):
            lam *= 10.0
            if lam > 1e12:
                status = STATUS_CONVERGED
            continue

        # trial step, projected onto the bound box; the shape exponent also
        # gets a multiplicative trust region so it stays strictly positive
        # (alpha = 0 zeroes the t_peak Jacobian column) and cannot overshoot
        # the degenerate corner in a single step
        c0 = min(max(p0 + d[0], b[0]), b[1])
        c1 = min(max(p1 + d[1], b[2]), b[3])
        a_lo = max(b[4], 0.3 * p2)
        a_hi = min(b[5], 3.0 * p2 + 2.0)
        c2 = min(max(p2 + d[2], a_lo), a_hi)
        s0 = (c0 - p0) / (1.0 + abs(p0))
        s1 = (c1 - p1) / (1.0 + abs(p1))
        s2 = (c2 - p2) / (1.0 + abs(p2))
        step_norm = math.sqrt(s0 * s0 + s1 * s1 + s2 * s2)

        sse_c = _sse(times, values, c0, c1, c2)
        if sse_c < sse:
            rel_decrease = (sse - sse_c) / sse
            p0, p1, p2 = c0, c1, c2
            sse = sse_c
            lam = max(lam * 0.1, 1e-12)
            if rel_decrease < sse_rel_tolerance or step_norm < step_tolerance:
                status = STATUS_CONVERGED
        else:
            lam *= 10.0
            if step_norm < step_tolerance or lam > 1e12:
                status = STATUS_CONVERGED

    # derived parameters and goodness of fit
    if p2 <= EPS_DEGENERATE:
        if status == STATUS_CONVERGED:
            status = STATUS_DEGENERATE_SHAPE
        t01 = np.nan
        rt = np.inf
    else:
        t01 = _t01_bisect(p1, p2, 0.01)
        rt = p1 * (p2 + 1.0) / p2

    mean = 0.0
    for i in range(n):
        mean += values[i]
    mean /= n
    sstot = 0.0
    for i in range(n):
        dv = values[i] - mean
        sstot += dv * dv
    r2 = 0.0 if sstot == 0.0 else 1.0 - sse / sstot

    out[0] = p0
    out[1] = p1
    out[2] = p2
    out[3] = t01
    out[4] = rt
    out[5] = math.sqrt(sse / n)
    out[6] = r2
    out[7] = iters
    out[8] = sse
    out[9] = status


@njit(cache=True)
def fit_batch(times, series, max_iterations, sse_rel_tolerance, step_tolerance,
              alpha_cap, initial_alpha, no_signal_floor, out):
    """Fit each row of ``series`` (n_series, n_frames) into ``out`` rows."""
    for i in range(series.shape[0]):
        fit_one(times, series[i], max_iterations, sse_rel_tolerance,
                step_tolerance, alpha_cap, initial_alpha, no_signal_floor,
                out[i])
