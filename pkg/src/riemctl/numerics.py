"""Shared numerical kernels: fixed-step RK4, Hermite interpolation, Simpson quadrature, slope fits."""

from __future__ import annotations

import numpy as np


def rk4(rhs, t0, t1, y0, n_steps, record=False):
    """Integrate dy/dt = rhs(t, y) with classical fixed-step Runge-Kutta 4.

    The state may carry arbitrary leading batch axes.  Returns the final
    state, or ``(times, states)`` with states stacked on axis 0 when
    ``record`` is set.  Deterministic for identical inputs.
    """
    t0 = float(t0)
    t1 = float(t1)
    n_steps = int(n_steps)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    h = (t1 - t0) / n_steps
    y = np.asarray(y0, dtype=float).copy()
    if record:
        out = np.empty((n_steps + 1,) + y.shape)
        out[0] = y
        ts = t0 + h * np.arange(n_steps + 1)
        ts[-1] = t1
    t = t0
    for k in range(n_steps):
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + (0.5 * h) * k1)
        k3 = rhs(t + 0.5 * h, y + (0.5 * h) * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (k + 1) * h
        if record:
            out[k + 1] = y
    if record:
        return ts, out
    return y


def hermite_eval(grid, values, derivs, t):
    """Evaluate the piecewise cubic Hermite interpolant of (values, derivs) on grid at t.

    grid is strictly increasing, shape (K,).  values/derivs have shape
    (K, ...).  t may be a scalar or an array; the result has t's shape
    prepended to the value shape.
    """
    grid = np.asarray(grid)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    idx = np.clip(np.searchsorted(grid, t_arr, side="right") - 1, 0, len(grid) - 2)
    h = grid[idx + 1] - grid[idx]
    s = (t_arr - grid[idx]) / h
    extra = (1,) * (values.ndim - 1)
    s = s.reshape(s.shape + extra)
    h = h.reshape(h.shape + extra)
    y0 = values[idx]
    y1 = values[idx + 1]
    d0 = derivs[idx]
    d1 = derivs[idx + 1]
    s2 = s * s
    s3 = s2 * s
    out = ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * d0
           + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * d1)
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return out[0]
    return out


def hermite_eval_deriv(grid, values, derivs, t):
    """Derivative of the Hermite interpolant of (values, derivs) at t."""
    grid = np.asarray(grid)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    idx = np.clip(np.searchsorted(grid, t_arr, side="right") - 1, 0, len(grid) - 2)
    h = grid[idx + 1] - grid[idx]
    s = (t_arr - grid[idx]) / h
    extra = (1,) * (values.ndim - 1)
    s = s.reshape(s.shape + extra)
    h = h.reshape(h.shape + extra)
    y0 = values[idx]
    y1 = values[idx + 1]
    d0 = derivs[idx]
    d1 = derivs[idx + 1]
    s2 = s * s
    out = ((6 * s2 - 6 * s) * (y0 - y1) / h + (3 * s2 - 4 * s + 1) * d0 + (3 * s2 - 2 * s) * d1)
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return out[0]
    return out


def segmented_hermite(grid, values, derivs, t, seg_bounds=None, end_derivs=None, deriv=False):
    """Hermite evaluation that respects derivative jumps at segment boundaries.

    ``seg_bounds`` lists inclusive node ranges (i0, i1) per segment and
    ``end_derivs[k]`` holds the left-limit derivative at node i1 of segment
    k (the stored ``derivs`` are right-continuous).  Without segments this
    falls back to the plain interpolant.
    """
    fn = hermite_eval_deriv if deriv else hermite_eval
    if seg_bounds is None or end_derivs is None:
        return fn(grid, values, derivs, t)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    starts = np.array([grid[i0] for i0, _ in seg_bounds])
    out = np.empty(ts.shape + values.shape[1:])
    for i, tv in enumerate(ts):
        k = int(np.clip(np.searchsorted(starts, tv, side="right") - 1, 0, len(seg_bounds) - 1))
        i0, i1 = seg_bounds[k]
        dv = derivs[i0:i1 + 1].copy()
        dv[-1] = end_derivs[k]
        out[i] = fn(grid[i0:i1 + 1], values[i0:i1 + 1], dv, tv)
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return out[0]
    return out


def simpson_uniform(values, h):
    """Composite Simpson rule over uniformly spaced samples (odd count)."""
    values = np.asarray(values, dtype=float)
    k = values.shape[0]
    if k < 3 or k % 2 == 0:
        raise ValueError("Simpson rule needs an odd number of samples >= 3")
    acc = values[0] + values[-1] + 4.0 * values[1:-1:2].sum(axis=0) + 2.0 * values[2:-2:2].sum(axis=0)
    return acc * (h / 3.0)


def fit_loglog_slope(xs, ys, floor=1e-300):
    """Least-squares slope of log(ys) against log(xs); ys floored away from zero."""
    xs = np.asarray(xs, dtype=float)
    ys = np.maximum(np.asarray(ys, dtype=float), floor)
    lx = np.log(xs)
    ly = np.log(ys)
    lx = lx - lx.mean()
    return float((lx * (ly - ly.mean())).sum() / (lx * lx).sum())


def gram_schmidt(gram):
    """Orthonormal basis columns for the inner product x^T gram y, seeded from the identity."""
    gram = np.asarray(gram, dtype=float)
    n = gram.shape[0]
    basis = np.eye(n)
    cols = []
    for j in range(n):
        v = basis[:, j].copy()
        for w in cols:
            v = v - (w @ gram @ v) * w
        nrm = float(np.sqrt(v @ gram @ v))
        if nrm <= 0:
            raise np.linalg.LinAlgError("metric is not positive definite")
        cols.append(v / nrm)
    return np.stack(cols, axis=1)
