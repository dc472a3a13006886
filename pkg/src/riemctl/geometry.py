"""Coordinate-chart Riemannian geometry.

A chart bundles batched evaluators for the metric, the connection
coefficients and the curvature tensor on a box of coordinates, together
with geodesic flow, exponential/logarithm maps, and parallel transport
of vectors and covectors.  Index conventions:

* metric(x)       -> (..., n, n)        g[i, j]
* christoffel(x)  -> (..., n, n, n)     Gamma[k, i, j], symmetric in (i, j)
* curvature(x)    -> (..., n, n, n, n)  Riem[l, i, j, k] = component l of R(d_i, d_j) d_k

with R(X, Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z and
R(X, Y, Z, W) = <R(X, Y)Z, W>.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .numerics import hermite_eval, hermite_eval_deriv, rk4

DEFAULT_STEP = 1e-3
DEFAULT_FD_STEP = 1e-5
LOG_TOL = 1e-10
LOG_MAX_ITER = 50


class GeometryError(Exception):
    """Base class for chart-level failures."""


class DomainError(GeometryError):
    """A queried point lies outside the chart's coordinate box."""


class DomainExitError(DomainError):
    """An integrated curve left the chart box; carries the exit parameter."""

    def __init__(self, message, exit_time):
        super().__init__(f"{message} (exit at s={exit_time:.6g})")
        self.exit_time = float(exit_time)


class NumericError(GeometryError):
    """Singular metric or non-finite values encountered."""


class LogMapError(GeometryError):
    """Shooting solver for the log map failed to converge."""


class DegeneratePlaneError(GeometryError):
    """Sectional curvature requested for a (nearly) degenerate 2-plane."""


class DimensionError(GeometryError):
    """Operation requires a different chart dimension."""


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class PointRep:
    """A point as a coordinate vector in one fixed chart."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.atleast_1d(np.asarray(self.coords, dtype=float)))


@dataclass(frozen=True)
class TangentVec:
    """Contravariant components of a tangent vector at a base point."""

    base: PointRep
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", np.atleast_1d(np.asarray(self.components, dtype=float)))


@dataclass(frozen=True)
class CotangentVec:
    """Covariant components of a cotangent vector at a base point."""

    base: PointRep
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", np.atleast_1d(np.asarray(self.components, dtype=float)))


@dataclass
class CurvePath:
    """A sampled curve with velocities; optionally a dense parameterization.

    ``geodesic_seed`` marks curves produced by the geodesic flow; transport
    along such a path re-integrates the flow jointly for full RK4 accuracy.
    """

    grid: np.ndarray
    points: np.ndarray
    velocity: np.ndarray
    dense_point: Optional[Callable] = None
    dense_velocity: Optional[Callable] = None
    geodesic_seed: Optional[tuple] = None

    @staticmethod
    def from_callable(pos, vel, s0, s1, samples=65):
        grid = np.linspace(float(s0), float(s1), int(samples))
        pts = np.stack([np.asarray(pos(s), dtype=float) for s in grid])
        vels = np.stack([np.asarray(vel(s), dtype=float) for s in grid])
        return CurvePath(grid=grid, points=pts, velocity=vels, dense_point=pos, dense_velocity=vel)

    def point_at(self, s):
        if self.dense_point is not None:
            return np.asarray(self.dense_point(s), dtype=float)
        return hermite_eval(self.grid, self.points, self.velocity, s)

    def velocity_at(self, s):
        if self.dense_velocity is not None:
            return np.asarray(self.dense_velocity(s), dtype=float)
        return hermite_eval_deriv(self.grid, self.points, self.velocity, s)


def _coords(x) -> np.ndarray:
    if isinstance(x, PointRep):
        return x.coords
    if isinstance(x, (TangentVec, CotangentVec)):
        return x.components
    return np.atleast_1d(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True)
class ManifoldChart:
    """Immutable chart: batched metric / connection / curvature evaluators on a box.

    ``injectivity_hint`` is a working lower bound on the injectivity radius
    used to guard exp/log calls; ``sample_box`` is a conservative region for
    drawing random test points.
    """

    name: str
    dim: int
    metric: Callable[[np.ndarray], np.ndarray]
    christoffel: Callable[[np.ndarray], np.ndarray]
    curvature: Callable[[np.ndarray], np.ndarray]
    domain_lower: np.ndarray
    domain_upper: np.ndarray
    injectivity_hint: Optional[float] = None
    sample_box: Optional[tuple] = None
    step: float = DEFAULT_STEP

    def contains(self, x) -> np.ndarray:
        c = np.asarray(x, dtype=float)
        return np.all((c >= self.domain_lower - 1e-12) & (c <= self.domain_upper + 1e-12), axis=-1)

    def require_inside(self, x):
        if not bool(np.all(self.contains(x))):
            raise DomainError(f"point outside chart '{self.name}' domain box")


def _fd_shifts(x, k, h):
    xp = np.array(x, dtype=float, copy=True)
    xm = np.array(x, dtype=float, copy=True)
    xp[..., k] += h
    xm[..., k] -= h
    return xp, xm


def christoffel_from_metric(metric_fn, fd_step=DEFAULT_FD_STEP):
    """Connection coefficients by central differences of the metric."""

    def gamma(x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        g = metric_fn(x)
        try:
            ginv = np.linalg.inv(g)
        except np.linalg.LinAlgError as exc:
            raise NumericError("singular metric in connection evaluation") from exc
        dg = []
        for k in range(n):
            h = fd_step * (1.0 + np.abs(x[..., k]))
            hq = h[..., None, None] if x.ndim > 1 else h
            xp, xm = _fd_shifts(x, k, h)
            dg.append((metric_fn(xp) - metric_fn(xm)) / (2.0 * hq))
        dg = np.stack(dg, axis=-3)  # (..., k, i, j) = d_k g_ij
        t1 = np.swapaxes(dg, -3, -2)          # [m,i,j] = d_i g_mj
        t2 = np.einsum("...jim->...mij", dg)  # [m,i,j] = d_j g_im
        return 0.5 * np.einsum("...lm,...mij->...lij", ginv, t1 + t2 - dg)

    return gamma


def curvature_from_christoffel(christoffel_fn, fd_step=1e-4):
    """Curvature tensor by central differences of the connection coefficients."""

    def riem(x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        G = christoffel_fn(x)
        dG = []
        for a in range(n):
            h = fd_step * (1.0 + np.abs(x[..., a]))
            hq = h[..., None, None, None] if x.ndim > 1 else h
            xp, xm = _fd_shifts(x, a, h)
            dG.append((christoffel_fn(xp) - christoffel_fn(xm)) / (2.0 * hq))
        dG = np.stack(dG, axis=-4)  # (..., a, l, b, c)
        # Riem[l,i,j,k] = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik
        d1 = np.einsum("...iljk->...lijk", dG)
        d2 = np.einsum("...jlik->...lijk", dG)
        q1 = np.einsum("...lim,...mjk->...lijk", G, G)
        q2 = np.einsum("...ljm,...mik->...lijk", G, G)
        return d1 - d2 + q1 - q2

    return riem


def lower_curvature(chart, x, riem=None):
    """Fully covariant curvature Rlow[i,j,k,m] = <R(d_i,d_j)d_k, d_m>."""
    c = _coords(x)
    if riem is None:
        riem = chart.curvature(c)
    g = chart.metric(c)
    return np.einsum("...lijk,...lm->...ijkm", riem, g)


def curvature_pairing(chart, x, X, Y, Z, W):
    """Scalar R(X, Y, Z, W) = <R(X,Y)Z, W> at x (chart components in, scalar out)."""
    c = _coords(x)
    rlow = lower_curvature(chart, c)
    return float(np.einsum("ijkm,i,j,k,m->", rlow, _coords(X), _coords(Y), _coords(Z), _coords(W)))


def curvature_action(chart, x, X, Y, Z):
    """Vector R(X, Y)Z at x in chart components."""
    c = _coords(x)
    riem = chart.curvature(c)
    return np.einsum("lijk,i,j,k->l", riem, _coords(X), _coords(Y), _coords(Z))


# builtin charts -------------------------------------------------------------


def euclidean_chart(dim=2, box=1e6):
    n = int(dim)

    def metric(x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (n, n)
        out = np.zeros(shape)
        out[...] = np.eye(n)
        return out

    def gamma(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, n, n))

    def riem(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, n, n, n))

    return ManifoldChart(
        name=f"euclidean{n}",
        dim=n,
        metric=metric,
        christoffel=gamma,
        curvature=riem,
        domain_lower=np.full(n, -box),
        domain_upper=np.full(n, box),
        injectivity_hint=10.0,
        sample_box=(np.full(n, -2.0), np.full(n, 2.0)),
    )


def sphere_chart():
    """Unit sphere in colatitude/longitude coordinates (theta, phi), metric diag(1, sin^2 theta)."""

    def metric(x):
        x = np.asarray(x, dtype=float)
        th = x[..., 0]
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = np.sin(th) ** 2
        return out

    def gamma(x):
        x = np.asarray(x, dtype=float)
        th = x[..., 0]
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
        cot = np.cos(th) / np.sin(th)
        out[..., 1, 0, 1] = cot
        out[..., 1, 1, 0] = cot
        return out

    def riem(x):
        x = np.asarray(x, dtype=float)
        g = metric(x)
        eye = np.eye(2)
        # constant sectional curvature +1: Riem[l,i,j,k] = g_jk delta_i^l - g_ik delta_j^l
        return (np.einsum("...jk,il->...lijk", g, eye) - np.einsum("...ik,jl->...lijk", g, eye))

    return ManifoldChart(
        name="sphere",
        dim=2,
        metric=metric,
        christoffel=gamma,
        curvature=riem,
        domain_lower=np.array([0.02, -6.6]),
        domain_upper=np.array([math.pi - 0.02, 6.6]),
        injectivity_hint=1.8,
        sample_box=(np.array([math.pi / 2 - 0.1, -0.5]), np.array([math.pi / 2 + 0.1, 0.5])),
    )


def hyperbolic_chart(radius=1.0, box=80.0):
    """Hyperboloid sheet of parameter R in graph coordinates (x1, x2).

    The metric is the Minkowski pullback h_ij = delta_ij - x_i x_j / (R^2 + |x|^2);
    the connection has the closed form Gamma^l_ij = -x_l h_ij / R^2 and the
    sectional curvature is the constant -1/R^2.
    """
    R2 = float(radius) ** 2

    def metric(x):
        x = np.asarray(x, dtype=float)
        w = R2 + np.sum(x * x, axis=-1)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[...] = np.eye(2)
        out -= np.einsum("...i,...j->...ij", x, x) / w[..., None, None]
        return out

    def gamma(x):
        x = np.asarray(x, dtype=float)
        h = metric(x)
        return -np.einsum("...l,...ij->...lij", x, h) / R2

    def riem(x):
        x = np.asarray(x, dtype=float)
        h = metric(x)
        eye = np.eye(2)
        kappa = -1.0 / R2
        return kappa * (np.einsum("...jk,il->...lijk", h, eye) - np.einsum("...ik,jl->...lijk", h, eye))

    return ManifoldChart(
        name=f"hyperbolic_R{radius:g}",
        dim=2,
        metric=metric,
        christoffel=gamma,
        curvature=riem,
        domain_lower=np.full(2, -box),
        domain_upper=np.full(2, box),
        injectivity_hint=4.0,
        sample_box=(np.full(2, -0.7), np.full(2, 0.7)),
    )


_BUILTIN_CHARTS = {
    "euclidean": lambda params: euclidean_chart(**params),
    "sphere": lambda params: sphere_chart(**params),
    "hyperbolic_R": lambda params: hyperbolic_chart(**params),
}


def chart_from_json(doc):
    """Build a chart from a JSON document {name, dim, domain_box, builtin, params}."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    allowed = {"name", "dim", "domain_box", "builtin", "params"}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown chart fields: {sorted(unknown)}")
    builtin = doc.get("builtin")
    if builtin not in _BUILTIN_CHARTS:
        raise ValueError(f"unknown builtin chart '{builtin}'")
    chart = _BUILTIN_CHARTS[builtin](dict(doc.get("params", {})))
    if "dim" in doc and int(doc["dim"]) != chart.dim:
        raise ValueError(f"chart '{builtin}' has dim {chart.dim}, not {doc['dim']}")
    updates = {}
    if "name" in doc:
        updates["name"] = str(doc["name"])
    if "domain_box" in doc:
        lo, hi = doc["domain_box"]
        updates["domain_lower"] = np.asarray(lo, dtype=float)
        updates["domain_upper"] = np.asarray(hi, dtype=float)
    return replace(chart, **updates) if updates else chart


# ---------------------------------------------------------------------------
# pointwise tensor algebra


def metric_at(chart, x):
    """Metric matrix at a point, with domain and positivity checks."""
    c = _coords(x)
    chart.require_inside(c)
    g = chart.metric(c)
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise NumericError("metric not positive definite") from exc
    return g


def christoffel_at(chart, x):
    c = _coords(x)
    chart.require_inside(c)
    out = chart.christoffel(c)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite connection coefficients")
    return out


def curvature_at(chart, x):
    c = _coords(x)
    chart.require_inside(c)
    return chart.curvature(c)


def inner(chart, x, X, Y) -> float:
    g = chart.metric(_coords(x))
    return float(_coords(X) @ g @ _coords(Y))


def norm(chart, x, X) -> float:
    return math.sqrt(max(inner(chart, x, X, X), 0.0))


def lower_vector(chart, x, X):
    """Tangent components -> cotangent components via the metric."""
    return chart.metric(_coords(x)) @ _coords(X)


def raise_covector(chart, x, lam):
    """Cotangent components -> tangent components via the inverse metric."""
    return np.linalg.solve(chart.metric(_coords(x)), _coords(lam))


def sectional_curvature(chart, x, X, Y) -> float:
    """Sectional curvature of span{X, Y}: R(X,Y,Y,X) / |X wedge Y|^2."""
    c = _coords(x)
    g = chart.metric(c)
    Xc, Yc = _coords(X), _coords(Y)
    gxx = float(Xc @ g @ Xc)
    gyy = float(Yc @ g @ Yc)
    gxy = float(Xc @ g @ Yc)
    area2 = gxx * gyy - gxy * gxy
    if area2 <= 1e-14 * max(gxx * gyy, 1e-300):
        raise DegeneratePlaneError("X and Y are (nearly) parallel")
    rlow = lower_curvature(chart, c)
    val = np.einsum("ijkm,i,j,k,m->", rlow, Xc, Yc, Yc, Xc)
    return float(val / area2)


def gaussian_curvature(chart, x) -> float:
    """Sectional curvature of the coordinate plane; chart must be 2-dimensional."""
    if chart.dim != 2:
        raise DimensionError("Gaussian curvature requires a 2-dimensional chart")
    e0 = np.array([1.0, 0.0])
    e1 = np.array([0.0, 1.0])
    return sectional_curvature(chart, x, e0, e1)


# ---------------------------------------------------------------------------
# geodesic flow (batched)


def _geodesic_rhs(chart, n, n_extra=0, covector_mask=None):
    """RHS for the state [x, v, w_1..w_k] flattened on the last axis.

    Extra blocks are parallel-transported along the geodesic; entries of
    ``covector_mask`` flag blocks transported as covectors.
    """

    def rhs(s, state):
        x = state[..., :n]
        v = state[..., n : 2 * n]
        G = chart.christoffel(x)
        acc = -np.einsum("...kij,...i,...j->...k", G, v, v)
        blocks = [v, acc]
        for r in range(n_extra):
            w = state[..., (2 + r) * n : (3 + r) * n]
            if covector_mask is not None and covector_mask[r]:
                dw = np.einsum("...mib,...b,...m->...i", G, v, w)
            else:
                dw = -np.einsum("...kib,...i,...b->...k", G, v, w)
            blocks.append(dw)
        return np.concatenate(blocks, axis=-1)

    return rhs


def _steps_for(chart, length, step):
    step = chart.step if step is None else float(step)
    return max(16, int(math.ceil(abs(length) / step)))


def _exp_many(chart, xs, vs, step=None, extras=None, covector_mask=None, check_domain=True, s_max=1.0):
    """Batched geodesic endpoint map with optional transported extras.

    Returns (end_points, end_velocities, transported_extras, ok_mask).  When
    check_domain is True a DomainExitError is raised on box exit; otherwise
    exited items are flagged in the mask.
    """
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    n = xs.shape[-1]
    g = chart.metric(xs)
    speeds = np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", vs, g, vs), 0.0))
    n_steps = _steps_for(chart, float(np.max(speeds, initial=0.0)) * abs(s_max), step)
    k = 0 if extras is None else len(extras)
    state = [xs, vs] + ([] if extras is None else [np.asarray(e, dtype=float) for e in extras])
    state = np.concatenate(state, axis=-1)
    rhs = _geodesic_rhs(chart, n, n_extra=k, covector_mask=covector_mask)
    ok = np.ones(xs.shape[:-1], dtype=bool)
    h = s_max / n_steps
    s = 0.0
    y = state
    for i in range(n_steps):
        k1 = rhs(s, y)
        k2 = rhs(s + 0.5 * h, y + (0.5 * h) * k1)
        k3 = rhs(s + 0.5 * h, y + (0.5 * h) * k2)
        k4 = rhs(s + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s = (i + 1) * h
        inside = chart.contains(y[..., :n]) & np.all(np.isfinite(y), axis=-1)
        if check_domain:
            if not bool(np.all(inside)):
                raise DomainExitError(f"geodesic left chart '{chart.name}'", s)
        else:
            newly_out = ok & ~inside
            if bool(np.any(newly_out)):
                ok = ok & inside
                y = np.where(ok[..., None], y, np.where(np.isfinite(y), y, 0.0))
    ext = [y[..., (2 + r) * n : (3 + r) * n] for r in range(k)]
    return y[..., :n], y[..., n : 2 * n], ext, ok


def geodesic(chart, x, v, s_max, step=None):
    """Integrate the geodesic through x with initial velocity v up to parameter s_max."""
    x0 = _coords(x)
    v0 = _coords(v)
    chart.require_inside(x0)
    n = chart.dim
    speed = norm(chart, x0, v0)
    n_steps = _steps_for(chart, speed * s_max, step)
    rhs = _geodesic_rhs(chart, n)
    ts, states = rk4(rhs, 0.0, float(s_max), np.concatenate([x0, v0]), n_steps, record=True)
    pts = states[:, :n]
    inside = chart.contains(pts)
    if not bool(np.all(inside)):
        s_exit = ts[int(np.argmax(~inside))]
        raise DomainExitError(f"geodesic left chart '{chart.name}'", s_exit)
    return CurvePath(grid=ts, points=pts, velocity=states[:, n:], geodesic_seed=(x0.copy(), v0.copy()))


def exp_map(chart, x, v, step=None):
    """Geodesic endpoint at parameter 1 for the initial velocity v at x."""
    x0 = _coords(x)
    v0 = _coords(v)
    chart.require_inside(x0)
    if chart.injectivity_hint is not None and norm(chart, x0, v0) >= chart.injectivity_hint:
        raise DomainError("initial velocity exceeds the chart injectivity hint")
    end, _, _, _ = _exp_many(chart, x0[None, :], v0[None, :], step=step)
    return PointRep(end[0])


def _speed(chart, xs, vs):
    g = chart.metric(np.asarray(xs, dtype=float))
    return np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", vs, g, vs), 0.0))


def _clip_to_ball(chart, xs, vs, radius):
    """Rescale velocities whose metric norm exceeds radius (keeps direction)."""
    sp = _speed(chart, xs, vs)
    factor = np.where(sp > radius, radius / np.maximum(sp, 1e-300), 1.0)
    return vs * factor[..., None]


def _log_many(chart, xs, ys, step=None, tol=LOG_TOL, max_iter=LOG_MAX_ITER):
    """Batched shooting solve of exp_x(v) = y; returns initial velocities.

    Damped Newton with finite-difference Jacobians; converged items drop out
    of the working set.  Iterates are clipped to the injectivity ball so a
    bad coordinate guess cannot blow up the flow.  Raises LogMapError when
    any item fails to converge within max_iter.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    squeeze = xs.ndim == 1
    if squeeze:
        xs = xs[None, :]
        ys = ys[None, :]
    B, n = xs.shape
    ball = chart.injectivity_hint if chart.injectivity_hint is not None else np.inf
    g = chart.metric(xs)
    v = np.linalg.solve(g, (ys - xs)[..., None])[..., 0]
    v = _clip_to_ball(chart, xs, v, 0.98 * ball)

    def res_of(idx, vcur):
        end, _, _, ok = _exp_many(chart, xs[idx], vcur, step=step, check_domain=False)
        r = end - ys[idx]
        rn = np.where(ok, np.linalg.norm(r, axis=-1), np.inf)
        return r, rn

    full_r, full_rn = res_of(np.arange(B), v)
    fd = 1e-6
    for _ in range(max_iter):
        act = np.nonzero(full_rn > tol)[0]
        if act.size == 0:
            break
        va = v[act]
        xa = xs[act]
        ra = full_r[act]
        rna = full_rn[act]
        hs = fd * (1.0 + np.abs(va))
        pert = np.repeat(va[:, None, :], 2 * n, axis=1)
        for j in range(n):
            pert[:, 2 * j, j] += hs[:, j]
            pert[:, 2 * j + 1, j] -= hs[:, j]
        flat = pert.reshape(-1, n)
        base = np.repeat(xa[:, None, :], 2 * n, axis=1).reshape(-1, n)
        ends, _, _, okj = _exp_many(chart, base, flat, step=step, check_domain=False)
        ends = ends.reshape(len(act), 2 * n, n)
        J = np.empty((len(act), n, n))
        for j in range(n):
            J[:, :, j] = (ends[:, 2 * j, :] - ends[:, 2 * j + 1, :]) / (2.0 * hs[:, j][:, None])
        ok_rows = np.all(np.isfinite(J.reshape(len(act), -1)), axis=1) & np.isfinite(rna)
        delta = np.zeros_like(va)
        if bool(np.any(ok_rows)):
            try:
                delta[ok_rows] = np.linalg.solve(J[ok_rows], ra[ok_rows][..., None])[..., 0]
            except np.linalg.LinAlgError:
                for b in np.nonzero(ok_rows)[0]:
                    delta[b] = np.linalg.lstsq(J[b], ra[b], rcond=None)[0]
        # items whose residual is non-finite restart from a shrunk guess
        restart = ~np.isfinite(rna)
        if bool(np.any(restart)):
            delta[restart] = 0.0
            va[restart] = 0.5 * va[restart]
        scale = np.ones(len(act))
        for _ in range(10):
            v_new = _clip_to_ball(chart, xa, va - scale[:, None] * delta, 0.98 * ball)
            r_new, rn_new = res_of(act, v_new)
            worse = np.isfinite(rna) & (rn_new > rna)
            if not bool(np.any(worse)):
                break
            scale = np.where(worse, 0.5 * scale, scale)
        better = rn_new <= np.where(np.isfinite(rna), rna, np.inf)
        v[act] = np.where(better[:, None], v_new, va)
        full_r[act] = np.where(better[:, None], r_new, ra)
        full_rn[act] = np.where(better, rn_new, rna)
    if bool(np.any(full_rn > tol)):
        bad = np.nonzero(full_rn > tol)[0]
        raise LogMapError(
            f"shooting failed to converge for {len(bad)} of {B} pairs on chart "
            f"'{chart.name}' (worst residual {float(np.max(full_rn[bad])):.3e})"
        )
    if chart.injectivity_hint is not None:
        sp = _speed(chart, xs, v)
        if bool(np.any(sp >= chart.injectivity_hint)):
            raise LogMapError("shooting converged outside the injectivity hint; refusing the branch")
    return v[0] if squeeze else v


def log_map(chart, x, y, step=None, tol=LOG_TOL, max_iter=LOG_MAX_ITER):
    """Inverse of the exponential map by Newton shooting on the initial velocity."""
    x0, y0 = _coords(x), _coords(y)
    chart.require_inside(x0)
    chart.require_inside(y0)
    v = _log_many(chart, x0, y0, step=step, tol=tol, max_iter=max_iter)
    return TangentVec(PointRep(x0), v)


def distance(chart, x, y, step=None) -> float:
    """Geodesic distance via the norm of the log map."""
    v = log_map(chart, x, y, step=step)
    return norm(chart, _coords(x), v.components)


def _transport_geodesic_many(chart, xs, vs, ws, step=None, covector=False, s_max=1.0):
    """Transport the stacked vectors ws (B, k, n) along geodesics s -> exp(s v)."""
    ws = np.asarray(ws, dtype=float)
    single = ws.ndim == 2
    if single:
        ws = ws[:, None, :]
    k = ws.shape[1]
    extras = [ws[:, r, :] for r in range(k)]
    mask = [covector] * k
    _, _, ext, _ = _exp_many(chart, xs, vs, step=step, extras=extras, covector_mask=mask, s_max=s_max)
    out = np.stack(ext, axis=1)
    return out[:, 0, :] if single else out


def _transport_matrix_many(chart, xs, vs, step=None, s_max=1.0):
    """Transport matrices P (B, n, n) mapping T_x M -> T_{exp_x(v)} M along the rays.

    Columns are the transported coordinate basis vectors; the inverse solve
    gives exact reverse transport of the numerical forward map.
    """
    xs = np.asarray(xs, dtype=float)
    n = xs.shape[-1]
    basis = [np.broadcast_to(np.eye(n)[j], xs.shape).copy() for j in range(n)]
    _, _, ext, _ = _exp_many(chart, xs, vs, step=step, extras=basis, s_max=s_max)
    return np.stack(ext, axis=-1)


def transport_along_ray(chart, x, v, w, step=None, reverse=False, covector=False):
    """Transport components w along the geodesic ray s -> exp_x(s v).

    Forward carries w from x to exp_x(v); ``reverse`` carries a vector given
    at exp_x(v) back to x (the exact inverse of the forward map).  Covectors
    transport through the inverse-transpose matrix.
    """
    x0 = np.asarray(_coords(x), dtype=float)
    v0 = np.asarray(_coords(v), dtype=float)
    w0 = np.asarray(_coords(w), dtype=float)
    P = _transport_matrix_many(chart, x0[None, :], v0[None, :], step=step)[0]
    if covector:
        # lambda_end(P w) = lambda_x(w)  =>  lambda_end = P^{-T} lambda_x
        return np.linalg.solve(P.T, w0) if not reverse else P.T @ w0
    return np.linalg.solve(P, w0) if reverse else P @ w0


def parallel_transport(chart, path, vec, step=None):
    """Parallel transport of a tangent or cotangent vector along a curve.

    Geodesic paths are re-integrated jointly with the flow; other paths use
    their dense parameterization (or a Hermite fit of the samples).
    """
    covector = isinstance(vec, CotangentVec)
    w0 = _coords(vec)
    n = chart.dim
    if path.geodesic_seed is not None:
        x0, v0 = path.geodesic_seed
        s1 = float(path.grid[-1])
        out = _transport_geodesic_many(
            chart, x0[None, :], v0[None, :], w0[None, :], step=step, covector=covector, s_max=s1
        )[0]
        end = PointRep(path.points[-1])
        return (CotangentVec if covector else TangentVec)(end, out)

    pos = path.point_at
    vel = path.velocity_at

    def rhs(s, w):
        x = np.asarray(pos(s), dtype=float)
        G = chart.christoffel(x)
        gdot = np.asarray(vel(s), dtype=float)
        if covector:
            return np.einsum("mib,b,m->i", G, gdot, w)
        return -np.einsum("kib,i,b->k", G, gdot, w)

    s0, s1 = float(path.grid[0]), float(path.grid[-1])
    # arc length estimate for the step count
    speeds = np.sqrt(np.einsum("ki,kij,kj->k", path.velocity, chart.metric(path.points), path.velocity))
    length = float(np.trapezoid(speeds, path.grid))
    n_steps = max(4 * (len(path.grid) - 1), _steps_for(chart, length, step))
    out = rk4(rhs, s0, s1, w0, n_steps)
    end = PointRep(np.asarray(pos(s1), dtype=float))
    return (CotangentVec if covector else TangentVec)(end, out)


def transport_to(chart, x, y, w, step=None, covector=False):
    """Transport components w from x to y along the connecting minimal geodesic."""
    v = _log_many(chart, _coords(x), _coords(y), step=step)
    return _transport_geodesic_many(
        chart, _coords(x)[None, :], v[None, :], np.asarray(w, dtype=float)[None, :],
        step=step, covector=covector,
    )[0]


def covariant_derivative_field(chart, F, x, X, fd_step=DEFAULT_FD_STEP):
    """Covariant derivative of a tangent-vector field F along X at x.

    Uses the coordinate Jacobian of F by central differences plus the
    connection correction; the transport difference quotient serves as the
    independent oracle in tests.
    """
    c = _coords(x)
    Xc = _coords(X)
    n = chart.dim
    J = np.empty((n, n))
    for j in range(n):
        h = fd_step * (1.0 + abs(c[j]))
        xp, xm = _fd_shifts(c, j, h)
        J[:, j] = (np.asarray(F(xp), dtype=float) - np.asarray(F(xm), dtype=float)) / (2.0 * h)
    G = chart.christoffel(c)
    Fx = np.asarray(F(c), dtype=float)
    comp = J @ Xc + np.einsum("kij,i,j->k", G, Xc, Fx)
    return TangentVec(PointRep(c), comp)


# ---------------------------------------------------------------------------
# chart-level verification helpers


def metric_compatibility_residual(chart, x, fd_step=DEFAULT_FD_STEP) -> float:
    """Max abs of d_k g_ij - Gamma^l_ki g_lj - Gamma^l_kj g_il at x."""
    c = _coords(x)
    n = chart.dim
    dg = np.empty((n, n, n))
    for k in range(n):
        h = fd_step * (1.0 + abs(c[k]))
        xp, xm = _fd_shifts(c, k, h)
        dg[k] = (chart.metric(xp) - chart.metric(xm)) / (2.0 * h)
    g = chart.metric(c)
    G = chart.christoffel(c)
    t1 = np.einsum("lki,lj->kij", G, g)
    t2 = np.einsum("lkj,il->kij", G, g)
    return float(np.max(np.abs(dg - t1 - t2)))


def curvature_symmetry_residual(chart, x) -> float:
    """Max violation of the pair antisymmetries and the pair-swap symmetry of the lowered tensor."""
    rlow = lower_curvature(chart, x)
    r1 = np.max(np.abs(rlow + np.einsum("ijkm->jikm", rlow)))
    r2 = np.max(np.abs(rlow + np.einsum("ijkm->ijmk", rlow)))
    r3 = np.max(np.abs(rlow - np.einsum("ijkm->kmij", rlow)))
    return float(max(r1, r2, r3))
