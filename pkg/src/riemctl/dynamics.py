"""Controlled flows on a chart: control representations, trajectory integration, costs, bounds.

Derivative evaluator conventions (chart components, state dimension n,
control dimension m):

* ``dxf``   -> (n, n)    A[i, j] = covariant derivative of f along d_j, component i
* ``dxf0``  -> (n,)      exterior derivative of the running cost
* ``dx2f``  -> (n, n, n) S[l, j, k] = second covariant derivative, j inner slot, k outer
* ``dx2f0`` -> (n, n)    covariant Hessian of the running cost
* ``duf``   -> (n, m);  ``duf0``  -> (m,)
* ``du2f``  -> (n, m, m); ``du2f0`` -> (m, m)
* ``dudxf`` -> (n, n, m) control derivative of dxf; ``dudxf0`` -> (n, m)

Missing evaluators are synthesized by central finite differences with the
connection correction and flagged in ``ProblemDerivatives.synthesized``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import geometry as geo
from .geometry import DomainExitError, NumericError, PointRep
from .numerics import hermite_eval, simpson_uniform


class ShapeError(Exception):
    """Mismatched grids or control partitions."""


# ---------------------------------------------------------------------------
# control sets and control representations


@dataclass(frozen=True)
class FiniteSet:
    """A finite control set; values may be scalars or fixed-size vectors."""

    values: tuple

    def index_of(self, u):
        for k, v in enumerate(self.values):
            if np.all(np.asarray(v) == np.asarray(u)):
                return k
        raise ValueError(f"control value {u!r} not in the finite set")


@dataclass(frozen=True)
class OpenBox:
    """An open coordinate box in R^m."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, dtype=float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, dtype=float)))

    @property
    def dim(self):
        return self.lower.size

    def contains(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.all(u > self.lower) and np.all(u < self.upper))


@dataclass
class ControlGrid:
    """Piecewise-constant control on a uniform partition of [0, T]."""

    T: float
    values: np.ndarray  # (N,) scalar controls or (N, m)

    def __post_init__(self):
        self.values = np.asarray(self.values)

    @property
    def n_intervals(self):
        return self.values.shape[0]

    def interval_bounds(self):
        N = self.n_intervals
        edges = np.linspace(0.0, self.T, N + 1)
        return edges

    def value_at(self, t):
        N = self.n_intervals
        k = min(int(t / self.T * N), N - 1) if t < self.T else N - 1
        return self.values[k]

    def segments(self):
        edges = self.interval_bounds()
        return [(edges[k], edges[k + 1], self.values[k]) for k in range(self.n_intervals)]


@dataclass
class SmoothControl:
    """A control given by a smooth callable t -> value on [0, T]."""

    T: float
    fn: Callable[[float], np.ndarray]
    label: str = "smooth"

    def value_at(self, t):
        return self.fn(t)

    def segments(self):
        return [(0.0, self.T, self.fn)]


@dataclass
class PatchedControl:
    """A base control overwritten by constant values on disjoint intervals."""

    base: object
    patches: tuple  # of (a, b, value)

    @property
    def T(self):
        return self.base.T

    def value_at(self, t):
        for a, b, v in self.patches:
            if a <= t < b:
                return v
        return self.base.value_at(t)

    def segments(self):
        pts = sorted(self.patches, key=lambda p: p[0])
        out = []
        for a, b, v in pts:
            if b <= a:
                raise ShapeError("patch intervals must have positive length")
        cursor = 0.0
        base_segs = self.base.segments()

        def base_between(t0, t1):
            segs = []
            for a, b, v in base_segs:
                lo, hi = max(a, t0), min(b, t1)
                if hi > lo + 1e-15:
                    segs.append((lo, hi, v))
            return segs

        for a, b, v in pts:
            if a > cursor + 1e-15:
                out.extend(base_between(cursor, a))
            out.append((a, b, v))
            cursor = b
        if cursor < self.T - 1e-15:
            out.extend(base_between(cursor, self.T))
        return out


@dataclass
class NeedleSpec:
    """A spike set of total measure eps together with the replacement control."""

    intervals: tuple  # of (a, b)
    replacement: object  # control-like or constant value

    @property
    def measure(self):
        return float(sum(b - a for a, b in self.intervals))


def nested_spike_intervals(T, eps, n_spikes):
    """Left-anchored spikes on a uniform anchor grid; nested across shrinking eps."""
    if eps <= 0 or eps > T:
        raise ValueError("spike measure must lie in (0, T]")
    anchors = np.linspace(0.0, T, n_spikes, endpoint=False)
    width = eps / n_spikes
    return tuple((float(a), float(a + width)) for a in anchors)


def needle_control(base, spec: NeedleSpec):
    """The base control replaced by the needle specification on its spike set."""
    patches = []
    for a, b in spec.intervals:
        rep = spec.replacement
        val = rep.value_at(0.5 * (a + b)) if hasattr(rep, "value_at") else rep
        patches.append((a, b, val))
    return PatchedControl(base=base, patches=tuple(patches))


def ekeland_distance(u1, u2) -> float:
    """Measure of the set where two controls on the same uniform partition differ."""
    if isinstance(u1, ControlGrid) and isinstance(u2, ControlGrid):
        if u1.n_intervals != u2.n_intervals or abs(u1.T - u2.T) > 1e-12:
            raise ShapeError("controls live on different partitions")
        v1 = np.asarray(u1.values)
        v2 = np.asarray(u2.values)
        if v1.shape != v2.shape:
            raise ShapeError("control value shapes differ")
        diff = v1 != v2
        if diff.ndim > 1:
            diff = np.any(diff, axis=tuple(range(1, diff.ndim)))
        return float(np.count_nonzero(diff) * (u1.T / u1.n_intervals))
    return control_difference_measure(u1, u2)


def control_difference_measure(u1, u2) -> float:
    """Difference measure for general piecewise controls (values compared per piece)."""
    if abs(u1.T - u2.T) > 1e-12:
        raise ShapeError("controls have different horizons")
    cuts = sorted({0.0, u1.T}
                  | {t for s in u1.segments() for t in (s[0], s[1])}
                  | {t for s in u2.segments() for t in (s[0], s[1])})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a < 1e-15:
            continue
        mid = 0.5 * (a + b)
        v1 = np.atleast_1d(np.asarray(u1.value_at(mid), dtype=float))
        v2 = np.atleast_1d(np.asarray(u2.value_at(mid), dtype=float))
        if v1.shape != v2.shape or np.any(v1 != v2):
            total += b - a
    return float(total)


# ---------------------------------------------------------------------------
# problems


@dataclass
class ControlProblem:
    """A controlled flow on a chart with running cost and optional analytic derivatives."""

    chart: geo.ManifoldChart
    T: float
    y0: np.ndarray
    f: Callable
    f0: Callable
    control_set: object
    y1: Optional[np.ndarray] = None
    dxf: Optional[Callable] = None
    dxf0: Optional[Callable] = None
    dx2f: Optional[Callable] = None
    dx2f0: Optional[Callable] = None
    duf: Optional[Callable] = None
    duf0: Optional[Callable] = None
    du2f: Optional[Callable] = None
    du2f0: Optional[Callable] = None
    dudxf: Optional[Callable] = None
    dudxf0: Optional[Callable] = None
    name: str = "problem"

    def __post_init__(self):
        self.y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if self.y1 is not None:
            self.y1 = np.atleast_1d(np.asarray(self.y1, dtype=float))

    @property
    def control_dim(self):
        if isinstance(self.control_set, OpenBox):
            return self.control_set.dim
        v0 = np.atleast_1d(np.asarray(self.control_set.values[0], dtype=float))
        return v0.size


class ProblemDerivatives:
    """Derivative evaluators for a problem; analytic when supplied, FD-synthesized otherwise."""

    def __init__(self, problem: ControlProblem, fd_step=1e-5, fd_step_u=1e-6):
        self.problem = problem
        self.chart = problem.chart
        self.fd_step = fd_step
        self.fd_step_u = fd_step_u
        self.synthesized = set()
        for name in ("dxf", "dxf0", "dx2f", "dx2f0", "duf", "duf0",
                     "du2f", "du2f0", "dudxf", "dudxf0"):
            if getattr(problem, name) is None:
                self.synthesized.add(name)

    # --- x derivatives -----------------------------------------------------

    def A(self, t, x, u):
        """Covariant state derivative of f as a matrix A[i, j]."""
        if self.problem.dxf is not None:
            return np.asarray(self.problem.dxf(t, x, u), dtype=float)
        n = self.chart.dim
        J = np.empty((n, n))
        for j in range(n):
            h = self.fd_step * (1.0 + abs(x[j]))
            xp, xm = geo._fd_shifts(x, j, h)
            J[:, j] = (np.asarray(self.problem.f(t, xp, u), dtype=float)
                       - np.asarray(self.problem.f(t, xm, u), dtype=float)) / (2 * h)
        G = self.chart.christoffel(x)
        fx = np.asarray(self.problem.f(t, x, u), dtype=float)
        return J + np.einsum("ijk,k->ij", G, fx)

    def df0(self, t, x, u):
        if self.problem.dxf0 is not None:
            return np.asarray(self.problem.dxf0(t, x, u), dtype=float)
        n = self.chart.dim
        out = np.empty(n)
        for j in range(n):
            h = self.fd_step * (1.0 + abs(x[j]))
            xp, xm = geo._fd_shifts(x, j, h)
            out[j] = (self.problem.f0(t, xp, u) - self.problem.f0(t, xm, u)) / (2 * h)
        return out

    def S2f(self, t, x, u):
        """Second covariant derivative of f: S[l, j, k], j inner slot, k outer."""
        if self.problem.dx2f is not None:
            return np.asarray(self.problem.dx2f(t, x, u), dtype=float)
        n = self.chart.dim
        dA = np.empty((n, n, n))  # dA[k] = d_k A
        for k in range(n):
            h = self.fd_step * (1.0 + abs(x[k]))
            xp, xm = geo._fd_shifts(x, k, h)
            dA[k] = (self.A(t, xp, u) - self.A(t, xm, u)) / (2 * h)
        G = self.chart.christoffel(x)
        Ax = self.A(t, x, u)
        out = (np.einsum("klj->ljk", dA)
               + np.einsum("lkm,mj->ljk", G, Ax)
               - np.einsum("mkj,lm->ljk", G, Ax))
        return out

    def H2f0(self, t, x, u):
        """Covariant Hessian of the running cost."""
        if self.problem.dx2f0 is not None:
            return np.asarray(self.problem.dx2f0(t, x, u), dtype=float)
        n = self.chart.dim
        dd = np.empty((n, n))  # dd[k, i] = d_k (df0)_i
        for k in range(n):
            h = self.fd_step * (1.0 + abs(x[k]))
            xp, xm = geo._fd_shifts(x, k, h)
            dd[k] = (self.df0(t, xp, u) - self.df0(t, xm, u)) / (2 * h)
        G = self.chart.christoffel(x)
        d1 = self.df0(t, x, u)
        out = 0.5 * (dd + dd.T) - np.einsum("mik,m->ik", G, d1)
        return out

    # --- u derivatives (box control sets) ----------------------------------

    def _ushift(self, u, a, h):
        up = np.array(np.atleast_1d(u), dtype=float)
        um = up.copy()
        up[a] += h
        um[a] -= h
        return up, um

    def B(self, t, x, u):
        """Control derivative of f as a matrix (n, m)."""
        if self.problem.duf is not None:
            return np.atleast_2d(np.asarray(self.problem.duf(t, x, u), dtype=float)).reshape(
                self.chart.dim, -1)
        m = np.atleast_1d(np.asarray(u, dtype=float)).size
        out = np.empty((self.chart.dim, m))
        for a in range(m):
            h = self.fd_step_u * (1.0 + abs(np.atleast_1d(u)[a]))
            up, um = self._ushift(u, a, h)
            out[:, a] = (np.asarray(self.problem.f(t, x, up), dtype=float)
                         - np.asarray(self.problem.f(t, x, um), dtype=float)) / (2 * h)
        return out

    def b0(self, t, x, u):
        if self.problem.duf0 is not None:
            return np.atleast_1d(np.asarray(self.problem.duf0(t, x, u), dtype=float))
        m = np.atleast_1d(np.asarray(u, dtype=float)).size
        out = np.empty(m)
        for a in range(m):
            h = self.fd_step_u * (1.0 + abs(np.atleast_1d(u)[a]))
            up, um = self._ushift(u, a, h)
            out[a] = (self.problem.f0(t, x, up) - self.problem.f0(t, x, um)) / (2 * h)
        return out

    def B2(self, t, x, u):
        """Second control derivative of f: (n, m, m)."""
        if self.problem.du2f is not None:
            return np.asarray(self.problem.du2f(t, x, u), dtype=float)
        m = np.atleast_1d(np.asarray(u, dtype=float)).size
        out = np.empty((self.chart.dim, m, m))
        for a in range(m):
            h = 10 * self.fd_step_u * (1.0 + abs(np.atleast_1d(u)[a]))
            up, um = self._ushift(u, a, h)
            out[:, a, :] = (self.B(t, x, up) - self.B(t, x, um)) / (2 * h)
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    def b02(self, t, x, u):
        if self.problem.du2f0 is not None:
            return np.atleast_2d(np.asarray(self.problem.du2f0(t, x, u), dtype=float))
        m = np.atleast_1d(np.asarray(u, dtype=float)).size
        out = np.empty((m, m))
        for a in range(m):
            h = 10 * self.fd_step_u * (1.0 + abs(np.atleast_1d(u)[a]))
            up, um = self._ushift(u, a, h)
            out[a] = (self.b0(t, x, up) - self.b0(t, x, um)) / (2 * h)
        return 0.5 * (out + out.T)

    def dA_du(self, t, x, u):
        """Control derivative of the covariant state derivative: (n, n, m)."""
        if self.problem.dudxf is not None:
            return np.asarray(self.problem.dudxf(t, x, u), dtype=float)
        m = np.atleast_1d(np.asarray(u, dtype=float)).size
        n = self.chart.dim
        out = np.empty((n, n, m))
        for a in range(m):
            h = 10 * self.fd_step_u * (1.0 + abs(np.atleast_1d(u)[a]))
            up, um = self._ushift(u, a, h)
            out[:, :, a] = (self.A(t, x, up) - self.A(t, x, um)) / (2 * h)
        return out

    def ddf0_du(self, t, x, u):
        """Control derivative of the cost gradient: (n, m)."""
        if self.problem.dudxf0 is not None:
            return np.asarray(self.problem.dudxf0(t, x, u), dtype=float)
        m = np.atleast_1d(np.asarray(u, dtype=float)).size
        out = np.empty((self.chart.dim, m))
        for a in range(m):
            h = 10 * self.fd_step_u * (1.0 + abs(np.atleast_1d(u)[a]))
            up, um = self._ushift(u, a, h)
            out[:, a] = (self.df0(t, x, up) - self.df0(t, x, um)) / (2 * h)
        return out


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """A time-gridded state path under a control, with per-segment dense evaluation."""

    problem: ControlProblem
    control: object
    grid: np.ndarray
    points: np.ndarray
    velocity: np.ndarray
    seg_bounds: list          # (i0, i1) node index ranges, inclusive
    seg_controls: list        # control value or callable per segment
    cost: float = 0.0

    def _segment_index(self, t):
        starts = getattr(self, "_seg_starts", None)
        if starts is None:
            starts = np.array([self.grid[i0] for i0, _ in self.seg_bounds])
            self._seg_starts = starts
        return int(np.clip(np.searchsorted(starts, t, side="right") - 1,
                           0, len(self.seg_bounds) - 1))

    def control_at(self, t):
        k = self._segment_index(t)
        u = self.seg_controls[k]
        return u(t) if callable(u) else u

    def point_at(self, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(ts.shape + (self.problem.chart.dim,))
        for i, tv in enumerate(ts):
            k = self._segment_index(tv)
            i0, i1 = self.seg_bounds[k]
            out[i] = hermite_eval(self.grid[i0:i1 + 1], self.points[i0:i1 + 1],
                                  self._seg_velocity(k), tv)
        return out[0] if np.isscalar(t) or np.asarray(t).ndim == 0 else out

    def velocity_at(self, t):
        p = self.point_at(t)
        u = self.control_at(t)
        return np.asarray(self.problem.f(t, p, u), dtype=float)

    def _seg_velocity(self, k):
        cache = getattr(self, "_seg_vel_cache", None)
        if cache is None:
            cache = {}
            self._seg_vel_cache = cache
        if k not in cache:
            i0, i1 = self.seg_bounds[k]
            u = self.seg_controls[k]
            if callable(u):
                cache[k] = np.stack([np.asarray(self.problem.f(tt, pp, u(tt)), dtype=float)
                                     for tt, pp in zip(self.grid[i0:i1 + 1],
                                                       self.points[i0:i1 + 1])])
            else:
                cache[k] = np.stack([np.asarray(self.problem.f(tt, pp, u), dtype=float)
                                     for tt, pp in zip(self.grid[i0:i1 + 1],
                                                       self.points[i0:i1 + 1])])
        return cache[k]

    @property
    def terminal(self):
        return self.points[-1]


def _segment_steps(length, step):
    k = max(2, int(math.ceil(length / step)))
    return k + (k % 2)  # even, so Simpson applies on the nodes


def integrate_trajectory(problem: ControlProblem, control, step=None) -> Trajectory:
    """Integrate the controlled flow with RK4, segment by segment, and attach the cost."""
    step = problem.chart.step if step is None else float(step)
    chart = problem.chart
    grid = [0.0]
    pts = [np.asarray(problem.y0, dtype=float)]
    vels = []
    seg_bounds = []
    seg_controls = []
    y = np.asarray(problem.y0, dtype=float)
    chart.require_inside(y)
    for (a, b, uval) in control.segments():
        n_steps = _segment_steps(b - a, step)
        h = (b - a) / n_steps
        i0 = len(grid) - 1

        def rhs(t, state, uval=uval):
            u = uval(t) if callable(uval) else uval
            out = np.asarray(problem.f(t, state, u), dtype=float)
            return out

        t = a
        for _ in range(n_steps):
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
            if not np.all(np.isfinite(y)):
                raise NumericError(f"non-finite state at t={t:.6g}")
            if not bool(chart.contains(y)):
                raise DomainExitError(f"trajectory left chart '{chart.name}'", t)
            grid.append(t)
            pts.append(y.copy())
        seg_bounds.append((i0, len(grid) - 1))
        seg_controls.append(uval)
    grid = np.asarray(grid)
    pts = np.asarray(pts)
    # right-continuous velocity at nodes
    vels = np.empty_like(pts)
    for k, (i0, i1) in enumerate(seg_bounds):
        u = seg_controls[k]
        for i in range(i0, i1 + 1):
            uu = u(grid[i]) if callable(u) else u
            vels[i] = np.asarray(problem.f(grid[i], pts[i], uu), dtype=float)
    traj = Trajectory(problem=problem, control=control, grid=grid, points=pts,
                      velocity=vels, seg_bounds=seg_bounds, seg_controls=seg_controls)
    traj.cost = evaluate_cost(problem, traj)
    return traj


def evaluate_cost(problem: ControlProblem, traj: Trajectory, t_lo=None, t_hi=None) -> float:
    """Composite Simpson quadrature of the running cost over the trajectory grid.

    Optional [t_lo, t_hi] restricts to whole segments (bounds must be
    segment boundaries); used by the cost-additivity property.
    """
    total = 0.0
    for k, (i0, i1) in enumerate(traj.seg_bounds):
        a, b = traj.grid[i0], traj.grid[i1]
        if t_lo is not None and a < t_lo - 1e-12:
            continue
        if t_hi is not None and b > t_hi + 1e-12:
            continue
        u = traj.seg_controls[k]
        ts = traj.grid[i0:i1 + 1]
        vals = np.array([problem.f0(tt, pp, u(tt) if callable(u) else u)
                         for tt, pp in zip(ts, traj.points[i0:i1 + 1])])
        total += simpson_uniform(vals, ts[1] - ts[0])
    return float(total)


def integrate_many(problem: ControlProblem, values, step=None):
    """Integrate one trajectory per row of control values on the shared uniform partition.

    values has shape (B, N) for scalar controls or (B, N, m); f and f0 must
    broadcast over a leading batch axis.  Returns (costs, terminal_points).
    """
    step = problem.chart.step if step is None else float(step)
    values = np.asarray(values)
    B, N = values.shape[0], values.shape[1]
    T = problem.T
    edges = np.linspace(0.0, T, N + 1)
    y = np.broadcast_to(problem.y0, (B, problem.chart.dim)).copy()
    costs = np.zeros(B)
    for k in range(N):
        a, b = edges[k], edges[k + 1]
        u = values[:, k]
        n_steps = _segment_steps(b - a, step)
        h = (b - a) / n_steps
        f0_nodes = np.empty((n_steps + 1, B))
        f0_nodes[0] = problem.f0(a, y, u)
        t = a
        for i in range(n_steps):
            k1 = np.asarray(problem.f(t, y, u), dtype=float)
            k2 = np.asarray(problem.f(t + 0.5 * h, y + 0.5 * h * k1, u), dtype=float)
            k3 = np.asarray(problem.f(t + 0.5 * h, y + 0.5 * h * k2, u), dtype=float)
            k4 = np.asarray(problem.f(t + h, y + h * k3, u), dtype=float)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
            f0_nodes[i + 1] = problem.f0(t, y, u)
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite state in batched integration")
        if not bool(np.all(problem.chart.contains(y))):
            raise DomainExitError("batched trajectory left the chart", t)
        costs += simpson_uniform(f0_nodes, h)
    return costs, y


def sample_lipschitz_constant(problem: ControlProblem, region, n_pairs=400, seed=0, step=None) -> float:
    """Sampled constant for the growth and Lipschitz bounds over the region, per control value.

    Takes the max over control values of the field/cost Lipschitz ratios and
    of their sizes at the initial point, floored at just above 1.
    """
    from .distance import lipschitz_equivalence_sampler

    if isinstance(problem.control_set, FiniteSet):
        us = list(problem.control_set.values)
    else:
        us = [0.5 * (problem.control_set.lower + problem.control_set.upper)]
    L = 1.0 + 1e-9
    chart = problem.chart
    for u in us:
        rep = lipschitz_equivalence_sampler(
            chart, lambda p, u=u: problem.f(0.0, p, u), region,
            n_pairs=n_pairs, n_grad_points=50, seed=seed, kind="vector", step=step)
        L = max(L, rep.max_ratio, rep.max_grad)
        fy0 = np.asarray(problem.f(0.0, problem.y0, u), dtype=float)
        L = max(L, geo.norm(chart, problem.y0, fy0), abs(problem.f0(0.0, problem.y0, u)))
        # cost Lipschitz ratio by direct sampling
        rng = np.random.default_rng(seed)
        lo, hi = region
        x1 = rng.uniform(lo, hi, size=(n_pairs, chart.dim))
        dirs = rng.normal(size=(n_pairs, chart.dim))
        g1 = chart.metric(x1)
        nr = np.sqrt(np.einsum("bi,bij,bj->b", dirs, g1, dirs))
        rr = rng.uniform(0.02, 0.4, size=n_pairs)
        vs = dirs * (rr / nr)[:, None]
        x2, _, _, _ = geo._exp_many(chart, x1, vs, step=step)
        d0 = np.array([problem.f0(0.0, p, u) for p in x1])
        d1 = np.array([problem.f0(0.0, p, u) for p in x2])
        L = max(L, float(np.max(np.abs(d1 - d0) / rr)))
    return float(L)


@dataclass
class AprioriBoundsReport:
    """Worst margins (bound minus observed) for the growth and perturbation estimates."""

    L: float
    growth_margin: float
    perturbation_margin: float
    pairs: int

    @property
    def passed(self):
        return self.growth_margin >= -1e-9 and self.perturbation_margin >= -1e-9


def apriori_bounds_check(problem: ControlProblem, control, n_pairs=20, seed=0, step=None,
                         L=None, region=None, time_samples=16) -> AprioriBoundsReport:
    """Check the exponential growth bound and the control-perturbation bound on sampled pairs.

    With the reference point fixed at y0, the growth bound reads
    rho(y(t), y(s)) <= (e^{L t} - e^{L s}) and the perturbation bound
    rho(ybar(t), y_u(t)) <= 2 L e^{L t} |[0,t] cap {u != ubar}|.
    """
    chart = problem.chart
    if region is None:
        region = chart.sample_box
    if L is None:
        L = sample_lipschitz_constant(problem, region, seed=seed, step=step)
    base = integrate_trajectory(problem, control, step=step)
    ts = np.linspace(0.0, problem.T, time_samples)
    pts = base.point_at(ts)
    growth_margin = np.inf
    for i in range(len(ts)):
        for j in range(i + 1, len(ts)):
            lhs = geo.distance(chart, pts[i], pts[j], step=step)
            rhs = math.exp(L * ts[j]) - math.exp(L * ts[i])
            growth_margin = min(growth_margin, rhs - lhs)
    rng = np.random.default_rng(seed)
    perturbation_margin = np.inf
    if isinstance(problem.control_set, FiniteSet):
        choices = list(problem.control_set.values)
    else:
        choices = None
    if isinstance(control, ControlGrid):
        for _ in range(n_pairs):
            vals = np.array(control.values, copy=True)
            k = rng.integers(0, control.n_intervals)
            if choices is not None:
                vals[k] = choices[rng.integers(0, len(choices))]
            else:
                box = problem.control_set
                vals[k] = rng.uniform(box.lower, box.upper)
            other = ControlGrid(T=control.T, values=vals)
            d_meas = ekeland_distance(control, other)
            if d_meas == 0.0:
                continue
            traj2 = integrate_trajectory(problem, other, step=step)
            pts2 = traj2.point_at(ts)
            changed_at = (k) * control.T / control.n_intervals
            for i, t in enumerate(ts):
                overlap = min(max(t - changed_at, 0.0), d_meas)
                lhs = geo.distance(chart, pts[i], pts2[i], step=step)
                rhs = 2.0 * L * math.exp(L * t) * overlap
                if overlap > 0:
                    perturbation_margin = min(perturbation_margin, rhs - lhs)
    if perturbation_margin is np.inf:
        perturbation_margin = 0.0
    return AprioriBoundsReport(L=float(L), growth_margin=float(growth_margin),
                               perturbation_margin=float(perturbation_margin), pairs=n_pairs)
