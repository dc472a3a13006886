"""First and second order trajectory variations under spike and smooth control perturbations.

Variation fields are integrated as component paths in the parallel frame
along the base trajectory (where the covariant time derivative is the plain
component derivative); a chart-coordinate route with explicit connection
corrections is kept as a cross-check.  Spike perturbations refine the
integration segmentation so arbitrarily narrow spikes are resolved exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import geometry as geo
from .adjoint import (FrameField, build_parallel_frame, march_along,
                      nodal_derivatives, _frame_F)
from .dynamics import (ControlProblem, NeedleSpec, ProblemDerivatives, Trajectory,
                       control_difference_measure, integrate_trajectory,
                       needle_control, nested_spike_intervals)
from .numerics import fit_loglog_slope, hermite_eval, segmented_hermite


@dataclass
class TangentPath:
    """A tangent field along the base trajectory, stored as parallel-frame components."""

    base: Trajectory
    frame: FrameField
    grid: np.ndarray
    comps: np.ndarray   # (K, n) frame components
    dcomps: np.ndarray  # nodal derivatives of the frame components
    seg_bounds: list = None       # optional node ranges of the driving control's segments
    dcomps_end: np.ndarray = None  # left-limit derivatives at segment-end nodes

    def frame_at(self, t):
        return segmented_hermite(self.grid, self.comps, self.dcomps, t,
                                 seg_bounds=self.seg_bounds, end_derivs=self.dcomps_end)

    def frame_deriv_at(self, t):
        return segmented_hermite(self.grid, self.comps, self.dcomps, t,
                                 seg_bounds=self.seg_bounds, end_derivs=self.dcomps_end,
                                 deriv=True)

    def chart_at(self, t):
        comps = self.frame_at(t)
        E = self.frame.e_at(t)
        if comps.ndim == 1:
            return comps @ E
        return np.einsum("...i,...ia->...a", comps, E)

    def norms(self, times=None):
        """Metric norms; frame components are orthonormal so this is the 2-norm."""
        if times is None:
            return np.linalg.norm(self.comps, axis=-1)
        return np.linalg.norm(np.atleast_2d(self.frame_at(times)), axis=-1)

    def sup_norm(self, times=None) -> float:
        return float(np.max(self.norms(times)))


def _to_frame(problem, frame, t, y, w):
    """Frame components of a chart vector w at (t, y)."""
    g = problem.chart.metric(y)
    return frame.e_at(t) @ (g @ w)


def march_with_control(base: Trajectory, control, rhs, init, step=None):
    """RK4 over the segmentation of ``control`` with base coefficients interpolated densely.

    ``rhs(t, y, u_value, state)``; returns (grid, states, dstates,
    seg_bounds, dstates_end) with nodes resolving every control segment
    (spikes included); ``dstates`` are right-continuous and ``dstates_end``
    carries the left-limit derivative at each segment's last node.
    """
    problem = base.problem
    step = problem.chart.step if step is None else float(step)
    grid = [0.0]
    init = np.asarray(init, dtype=float)
    states = [init.copy()]
    seg_bounds = []
    dstates_end = []
    segs = control.segments()
    for (a, b, uval) in segs:
        n_steps = max(2, int(math.ceil((b - a) / step)))
        h = (b - a) / n_steps
        i0 = len(grid) - 1
        cur = states[-1]
        for i in range(n_steps):
            t = a + i * h
            t1 = b if i == n_steps - 1 else a + (i + 1) * h
            tm = 0.5 * (t + t1)
            u0 = uval(t) if callable(uval) else uval
            um = uval(tm) if callable(uval) else uval
            u1 = uval(t1) if callable(uval) else uval
            y0 = base.point_at(t)
            ym = base.point_at(tm)
            y1 = base.point_at(t1)
            k1 = rhs(t, y0, u0, cur)
            k2 = rhs(tm, ym, um, cur + 0.5 * h * k1)
            k3 = rhs(tm, ym, um, cur + 0.5 * h * k2)
            k4 = rhs(t1, y1, u1, cur + h * k3)
            cur = cur + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            grid.append(t1)
            states.append(cur.copy())
        seg_bounds.append((i0, len(grid) - 1))
        ub_end = uval(b) if callable(uval) else uval
        dstates_end.append(rhs(b, base.point_at(b), ub_end, cur))
    grid = np.asarray(grid)
    states = np.asarray(states)
    dstates = np.empty_like(states)
    seg_idx = 0
    for k, t in enumerate(grid):
        while seg_idx + 1 < len(segs) and t >= segs[seg_idx][1] - 1e-15:
            seg_idx += 1
        a, b, uval = segs[seg_idx]
        u = uval(t) if callable(uval) else uval
        dstates[k] = rhs(t, base.point_at(t), u, states[k])
    return grid, states, dstates, seg_bounds, np.asarray(dstates_end)


def solve_first_variation_needle(problem: ControlProblem, base: Trajectory, u,
                                 frame: Optional[FrameField] = None,
                                 derivs: Optional[ProblemDerivatives] = None,
                                 step=None, method="frame") -> TangentPath:
    """First-order variation field driven by the control replacement u, from zero.

    ``method='frame'`` integrates the frame-component system X' = F X + F1;
    ``method='chart'`` integrates chart components with explicit connection
    corrections, as an independent route.
    """
    frame = frame or build_parallel_frame(base)
    derivs = derivs or ProblemDerivatives(problem)
    chart = problem.chart
    n = chart.dim

    if method == "frame":
        def rhs(t, y, uv, X):
            F = _frame_F(problem, derivs, frame, t, y, base.control_at(t))
            fu = np.asarray(problem.f(t, y, uv), dtype=float)
            fb = np.asarray(problem.f(t, y, base.control_at(t)), dtype=float)
            return F @ X + _to_frame(problem, frame, t, y, fu - fb)

        grid, comps, dcomps, sb, dend = march_with_control(base, u, rhs, np.zeros(n), step=step)
        return TangentPath(base=base, frame=frame, grid=grid, comps=comps, dcomps=dcomps,
                           seg_bounds=sb, dcomps_end=dend)

    if method == "chart":
        def rhs_chart(t, y, uv, X):
            G = chart.christoffel(y)
            ydot = np.asarray(problem.f(t, y, base.control_at(t)), dtype=float)
            A = derivs.A(t, y, base.control_at(t))
            fu = np.asarray(problem.f(t, y, uv), dtype=float)
            fb = np.asarray(problem.f(t, y, base.control_at(t)), dtype=float)
            return -np.einsum("kab,a,b->k", G, ydot, X) + A @ X + (fu - fb)

        grid, xs, _, sb, _ = march_with_control(base, u, rhs_chart, np.zeros(n), step=step)
        # express in the frame for a uniform return type
        comps = np.empty_like(xs)
        for k, t in enumerate(grid):
            comps[k] = _to_frame(problem, frame, t, base.point_at(t), xs[k])
        dcomps = np.gradient(comps, grid, axis=0)
        return TangentPath(base=base, frame=frame, grid=grid, comps=comps, dcomps=dcomps)

    raise ValueError("method must be 'frame' or 'chart'")


def solve_second_variation_needle(problem: ControlProblem, base: Trajectory, u,
                                  X: TangentPath,
                                  frame: Optional[FrameField] = None,
                                  derivs: Optional[ProblemDerivatives] = None,
                                  step=None) -> TangentPath:
    """Second-order spike variation: curvature coupling, derivative jumps, quadratic field terms."""
    frame = frame or X.frame
    derivs = derivs or ProblemDerivatives(problem)
    chart = problem.chart
    n = chart.dim

    def rhs(t, y, uv, Y):
        ubar = base.control_at(t)
        F = _frame_F(problem, derivs, frame, t, y, ubar)
        E = frame.e_at(t)
        g = chart.metric(y)
        Xc = X.frame_at(t) @ E  # chart components of X at t
        fv = np.asarray(problem.f(t, y, ubar), dtype=float)
        rlow = geo.lower_curvature(chart, y)
        r_term = np.einsum("abcd,ia,b,c,d->i", rlow, E, Xc, fv, Xc)
        dA = derivs.A(t, y, uv) - derivs.A(t, y, ubar)
        jump = _to_frame(problem, frame, t, y, dA @ Xc)
        S = derivs.S2f(t, y, ubar)
        lowered = E @ g  # rows: lowered e_i
        quad = np.einsum("ljk,il,j,k->i", S, lowered, Xc, Xc)
        return F @ Y - 0.5 * r_term + jump + 0.5 * quad

    grid, comps, dcomps, sb, dend = march_with_control(base, u, rhs, np.zeros(n), step=step)
    return TangentPath(base=base, frame=frame, grid=grid, comps=comps, dcomps=dcomps,
                       seg_bounds=sb, dcomps_end=dend)


def _control_values_equal(a, b) -> bool:
    return np.array_equal(np.atleast_1d(np.asarray(a)), np.atleast_1d(np.asarray(b)))


def _solve_variation_pair(problem: ControlProblem, base: Trajectory, u,
                          frame: FrameField, derivs: ProblemDerivatives, step=None):
    """Joint integration of the first and second spike-variation fields.

    One pass shares every base coefficient between the two equations and
    skips the forcing terms off the spike set, where the perturbed control
    equals the base control.
    """
    chart = problem.chart
    n = chart.dim

    def rhs(t, y, uv, s):
        X, Y = s[:n], s[n:]
        ubar = base.control_at(t)
        g = chart.metric(y)
        E = frame.e_at(t)
        A_b = derivs.A(t, y, ubar)
        F = E @ g @ A_b @ E.T
        Xc = X @ E
        fv = np.asarray(problem.f(t, y, ubar), dtype=float)
        rlow = geo.lower_curvature(chart, y)
        r_term = np.einsum("abcd,ia,b,c,d->i", rlow, E, Xc, fv, Xc)
        S = derivs.S2f(t, y, ubar)
        quad = np.einsum("ljk,il,j,k->i", S, E @ g, Xc, Xc)
        if _control_values_equal(uv, ubar):
            forcing = np.zeros(n)
            jump = np.zeros(n)
        else:
            fu = np.asarray(problem.f(t, y, uv), dtype=float)
            forcing = E @ (g @ (fu - fv))
            jump = E @ (g @ ((derivs.A(t, y, uv) - A_b) @ Xc))
        dX = F @ X + forcing
        dY = F @ Y - 0.5 * r_term + jump + 0.5 * quad
        return np.concatenate([dX, dY])

    grid, states, dstates, sb, dend = march_with_control(base, u, rhs, np.zeros(2 * n), step=step)
    Xp = TangentPath(base=base, frame=frame, grid=grid, comps=states[:, :n],
                     dcomps=dstates[:, :n], seg_bounds=sb, dcomps_end=dend[:, :n])
    Yp = TangentPath(base=base, frame=frame, grid=grid, comps=states[:, n:],
                     dcomps=dstates[:, n:], seg_bounds=sb, dcomps_end=dend[:, n:])
    return Xp, Yp


def log_deviation(problem: ControlProblem, base: Trajectory, perturbed: Trajectory,
                  times=None, frame: Optional[FrameField] = None, step=None) -> TangentPath:
    """Pointwise log of the perturbed trajectory from the base, as a tangent field."""
    frame = frame or build_parallel_frame(base)
    if times is None:
        times = np.linspace(0.0, problem.T, 65)
    times = np.asarray(times, dtype=float)
    xs = np.atleast_2d(base.point_at(times))
    ys = np.atleast_2d(perturbed.point_at(times))
    vs = geo._log_many(problem.chart, xs, ys, step=step)
    comps = np.empty_like(vs)
    for k, t in enumerate(times):
        comps[k] = _to_frame(problem, frame, t, xs[k], vs[k])
    dcomps = np.gradient(comps, times, axis=0)
    return TangentPath(base=base, frame=frame, grid=times, comps=comps, dcomps=dcomps)


def verify_needle_taylor(problem: ControlProblem, base: Trajectory, u_replacement,
                         epsilons=(0.2, 0.1, 0.05, 0.025), n_spikes=5, step=None,
                         var_step=5e-3, frame: Optional[FrameField] = None,
                         compare_points=65) -> dict:
    """Spike-family Taylor orders: |X| ~ eps, |Y| ~ eps^2, |V - X| = o(eps), |V - X - Y| = o(eps^2).

    Builds a nested family of left-anchored spike sets of measure eps, solves
    both variation fields on the refined segmentation, and fits log-log
    slopes of the sup norms over the comparison grid.
    """
    frame = frame or build_parallel_frame(base)
    derivs = ProblemDerivatives(problem)
    times = np.linspace(0.0, problem.T, compare_points)
    sup_X, sup_Y, sup_VX, sup_VXY, measures = [], [], [], [], []
    for eps in epsilons:
        intervals = nested_spike_intervals(problem.T, eps, n_spikes)
        spec = NeedleSpec(intervals=intervals, replacement=u_replacement)
        u_eps = needle_control(base.control, spec)
        measures.append(control_difference_measure(u_eps, base.control))
        traj = integrate_trajectory(problem, u_eps, step=step)
        X, Y = _solve_variation_pair(problem, base, u_eps, frame, derivs, step=var_step)
        V = log_deviation(problem, base, traj, times=times, frame=frame, step=step)
        Xf = np.atleast_2d(X.frame_at(times))
        Yf = np.atleast_2d(Y.frame_at(times))
        Vf = V.comps
        sup_X.append(float(np.max(np.linalg.norm(Xf, axis=-1))))
        sup_Y.append(float(np.max(np.linalg.norm(Yf, axis=-1))))
        sup_VX.append(float(np.max(np.linalg.norm(Vf - Xf, axis=-1))))
        sup_VXY.append(float(np.max(np.linalg.norm(Vf - Xf - Yf, axis=-1))))
    eps_arr = np.asarray(epsilons, dtype=float)
    noise = 1e-11
    report = {
        "epsilons": list(epsilons),
        "measures": measures,
        "sup_X": sup_X,
        "sup_Y": sup_Y,
        "sup_V_minus_X": sup_VX,
        "sup_V_minus_X_minus_Y": sup_VXY,
        "slope_X": fit_loglog_slope(eps_arr, sup_X),
        "slope_Y": fit_loglog_slope(eps_arr, sup_Y),
        "slope_V_minus_X": fit_loglog_slope(eps_arr, sup_VX),
        "slope_V_minus_X_minus_Y": fit_loglog_slope(eps_arr, sup_VXY),
        "remainder_at_noise": bool(np.max(sup_VXY) < noise),
    }
    return report


class AddedControl:
    """Base control shifted by eps * v(t); segments follow the base segmentation."""

    def __init__(self, base_control, v, eps):
        self.base_control = base_control
        self.v = v
        self.eps = float(eps)
        self.T = base_control.T

    def value_at(self, t):
        u = np.atleast_1d(np.asarray(self.base_control.value_at(t), dtype=float))
        return u + self.eps * np.asarray(self.v(t), dtype=float)

    def segments(self):
        out = []
        for (a, b, uval) in self.base_control.segments():
            if callable(uval):
                out.append((a, b, lambda t, uval=uval: np.atleast_1d(
                    np.asarray(uval(t), dtype=float)) + self.eps * np.asarray(self.v(t), dtype=float)))
            else:
                out.append((a, b, lambda t, uval=uval: np.atleast_1d(
                    np.asarray(uval, dtype=float)) + self.eps * np.asarray(self.v(t), dtype=float)))
        return out


def solve_classical_variations(problem: ControlProblem, base: Trajectory, v,
                               frame: Optional[FrameField] = None,
                               derivs: Optional[ProblemDerivatives] = None,
                               step=None):
    """Smooth-direction variation fields (V, Y) for box control sets.

    V solves the linearized flow driven by the control derivative along
    v(t); Y carries the curvature coupling, the mixed state-control term and
    the quadratic field terms.
    """
    if not hasattr(problem.control_set, "lower"):
        raise ValueError("classical variations need an open-box control set")
    frame = frame or build_parallel_frame(base)
    derivs = derivs or ProblemDerivatives(problem)
    chart = problem.chart
    n = chart.dim

    def rhs(t, y, uv, s):
        V, Y = s[:n], s[n:]
        g = chart.metric(y)
        E = frame.e_at(t)
        D = frame.dual_at(t)
        A = derivs.A(t, y, uv)
        F = E @ g @ A @ E.T
        B = derivs.B(t, y, uv)
        vt = np.asarray(v(t), dtype=float)
        Vc = V @ E
        ydot = np.asarray(problem.f(t, y, uv), dtype=float)
        rlow = geo.lower_curvature(chart, y)
        r_term = np.einsum("abcd,ia,b,c,d->i", rlow, E, Vc, ydot, Vc)
        mixed = np.einsum("lja,il,j,a->i", derivs.dA_du(t, y, uv), D, Vc, vt)
        S = derivs.S2f(t, y, uv)
        quad_x = np.einsum("ljk,il,j,k->i", S, D, Vc, Vc)
        quad_u = np.einsum("lab,il,a,b->i", derivs.B2(t, y, uv), D, vt, vt)
        dV = F @ V + E @ (g @ (B @ vt))
        dY = F @ Y + mixed - 0.5 * r_term + 0.5 * quad_x + 0.5 * quad_u
        return np.concatenate([dV, dY])

    states = march_along(base, rhs, np.zeros(2 * n))
    dstates, dend = nodal_derivatives(base, rhs, states)
    Vpath = TangentPath(base=base, frame=frame, grid=base.grid,
                        comps=states[:, :n], dcomps=dstates[:, :n],
                        seg_bounds=base.seg_bounds, dcomps_end=dend[:, :n])
    Ypath = TangentPath(base=base, frame=frame, grid=base.grid,
                        comps=states[:, n:], dcomps=dstates[:, n:],
                        seg_bounds=base.seg_bounds, dcomps_end=dend[:, n:])
    return Vpath, Ypath


def verify_classical_expansion(problem: ControlProblem, base: Trajectory, v,
                               epsilons=(0.2, 0.1, 0.05, 0.025), step=None,
                               frame: Optional[FrameField] = None, compare_points=65) -> dict:
    """Smooth-perturbation expansion orders: |V_eps - eps V| ~ eps^2, remainder beyond eps^2."""
    frame = frame or build_parallel_frame(base)
    Vpath, Ypath = solve_classical_variations(problem, base, v, frame=frame, step=step)
    times = np.linspace(0.0, problem.T, compare_points)
    Vf = np.atleast_2d(Vpath.frame_at(times))
    Yf = np.atleast_2d(Ypath.frame_at(times))
    sup_first, sup_second = [], []
    for eps in epsilons:
        ctrl = AddedControl(base.control, v, eps)
        traj = integrate_trajectory(problem, ctrl, step=step)
        Veps = log_deviation(problem, base, traj, times=times, frame=frame, step=step).comps
        sup_first.append(float(np.max(np.linalg.norm(Veps - eps * Vf, axis=-1))))
        sup_second.append(float(np.max(np.linalg.norm(Veps - eps * Vf - eps**2 * Yf, axis=-1))))
    eps_arr = np.asarray(epsilons, dtype=float)
    return {
        "epsilons": list(epsilons),
        "sup_first_remainder": sup_first,
        "sup_second_remainder": sup_second,
        "slope_first": fit_loglog_slope(eps_arr, sup_first),
        "slope_second": fit_loglog_slope(eps_arr, sup_second),
        "remainder_at_noise": bool(np.max(sup_second) < 1e-9),
    }
