"""Chart verification suites: roundtrips, transport isometry, holonomy, distance identities.

Every check returns a CheckReport carrying the value, the tolerance it was
judged against, and enough detail to reproduce the verdict.  The holonomy
estimate is route-independent from the curvature evaluator: it only uses the
exponential map, the log map and parallel transport.
"""

from __future__ import annotations

import math

import numpy as np

from . import distance as dist
from . import geometry as geo
from .distance import CheckReport
from .geometry import _exp_many, _log_many, _transport_matrix_many
from .numerics import fit_loglog_slope, gram_schmidt


def _sample_points(chart, rng, count):
    lo, hi = chart.sample_box if chart.sample_box is not None else (chart.domain_lower, chart.domain_upper)
    return rng.uniform(lo, hi, size=(count, chart.dim))


def _unit_vectors(chart, xs, rng):
    dirs = rng.normal(size=xs.shape)
    g = chart.metric(xs)
    nr = np.sqrt(np.einsum("bi,bij,bj->b", dirs, g, dirs))
    return dirs / nr[:, None]


def roundtrip_check(chart, n_pairs=100, seed=0, step=5e-3) -> CheckReport:
    """exp/log/exp roundtrip gap over random pairs with |v| <= 0.8 of the injectivity hint."""
    rng = np.random.default_rng(seed)
    xs = _sample_points(chart, rng, n_pairs)
    units = _unit_vectors(chart, xs, rng)
    scales = rng.uniform(0.05, 0.8 * chart.injectivity_hint, size=n_pairs)
    vs = units * scales[:, None]
    ys, _, _, _ = _exp_many(chart, xs, vs, step=step)
    ws = _log_many(chart, xs, ys, step=step)
    zs, _, _, _ = _exp_many(chart, xs, ws, step=step)
    gap = zs - ys
    d = np.sqrt(np.einsum("bi,bij,bj->b", gap, chart.metric(ys), gap))
    return CheckReport.from_value("exp_log_roundtrip", float(np.max(d)), 1e-6,
                                  {"pairs": n_pairs, "worst_v_norm": float(np.max(scales))})


def transport_isometry_check(chart, n_curves=10, seed=0, step=2e-3) -> CheckReport:
    """Inner products of two transported vectors along random smooth curves, relative drift."""
    rng = np.random.default_rng(seed)
    lo, hi = chart.sample_box
    center = 0.5 * (np.asarray(lo) + np.asarray(hi))
    amp = 0.45 * (np.asarray(hi) - np.asarray(lo))
    worst = 0.0
    for _ in range(n_curves):
        a = rng.uniform(-1.0, 1.0, size=(3, chart.dim)) * amp / 3.0
        ph = rng.uniform(0.0, 2 * math.pi, size=3)

        def pos(s, a=a, ph=ph):
            ks = np.arange(1, 4)
            return center + np.einsum("k,kd->d", np.sin(ks * s + ph), a)

        def vel(s, a=a, ph=ph):
            ks = np.arange(1, 4)
            return np.einsum("k,kd->d", ks * np.cos(ks * s + ph), a)

        path = geo.CurvePath.from_callable(pos, vel, 0.0, 2.0, samples=65)
        x0 = pos(0.0)
        g0 = chart.metric(x0)
        v = rng.normal(size=chart.dim)
        w = rng.normal(size=chart.dim)
        tv = geo.parallel_transport(chart, path, geo.TangentVec(geo.PointRep(x0), v), step=step)
        tw = geo.parallel_transport(chart, path, geo.TangentVec(geo.PointRep(x0), w), step=step)
        g1 = chart.metric(path.point_at(2.0))
        before = float(v @ g0 @ w)
        after = float(tv.components @ g1 @ tw.components)
        nb = math.sqrt(float(v @ g0 @ v) * float(w @ g0 @ w))
        worst = max(worst, abs(after - before) / nb)
    return CheckReport.from_value("transport_isometry", worst, 1e-8, {"curves": n_curves})


def speed_drift_check(chart, s_max=5.0, seed=0, step=1e-3) -> CheckReport:
    """Relative drift of the geodesic speed over a long integration."""
    rng = np.random.default_rng(seed)
    if chart.name == "sphere":
        x0 = np.array([math.pi / 2, -2.5])
        tilt = rng.uniform(-0.2, 0.2)
        v0 = np.array([math.sin(tilt), math.cos(tilt)])
    else:
        x0 = _sample_points(chart, rng, 1)[0] * 0.0
        v0 = _unit_vectors(chart, x0[None, :], rng)[0]
    path = geo.geodesic(chart, x0, v0, s_max, step=step)
    g = chart.metric(path.points)
    sp = np.sqrt(np.einsum("ki,kij,kj->k", path.velocity, g, path.velocity))
    drift = float(np.max(np.abs(sp - sp[0])) / sp[0])
    return CheckReport.from_value("geodesic_speed_drift", drift, 1e-8, {"s_max": s_max})


def curvature_symmetry_check(chart, n_points=5, seed=0) -> CheckReport:
    """Pair antisymmetries and pair-swap symmetry of the lowered curvature tensor."""
    rng = np.random.default_rng(seed)
    xs = _sample_points(chart, rng, n_points)
    worst_analytic = max(geo.curvature_symmetry_residual(chart, x) for x in xs)
    fd_curv = geo.curvature_from_christoffel(chart.christoffel)
    worst_fd = 0.0
    for x in xs:
        rlow = geo.lower_curvature(chart, x, riem=fd_curv(x))
        r1 = np.max(np.abs(rlow + np.einsum("ijkm->jikm", rlow)))
        r2 = np.max(np.abs(rlow + np.einsum("ijkm->ijmk", rlow)))
        r3 = np.max(np.abs(rlow - np.einsum("ijkm->kmij", rlow)))
        worst_fd = max(worst_fd, float(max(r1, r2, r3)))
    rep = CheckReport.from_value("curvature_symmetries", worst_analytic, 1e-8,
                                 {"fd_derived_residual": worst_fd, "fd_tol": 1e-3})
    rep.passed = rep.passed and worst_fd <= 1e-3
    return rep


def metric_compatibility_check(chart, n_points=5, seed=0) -> CheckReport:
    rng = np.random.default_rng(seed)
    xs = _sample_points(chart, rng, n_points)
    worst = max(geo.metric_compatibility_residual(chart, x) for x in xs)
    return CheckReport.from_value("metric_compatibility", worst, 1e-6, {"points": n_points})


def holonomy_sectional_estimate(chart, x, h, step=2e-3) -> float:
    """Sectional curvature from the rotation of a vector carried around a geodesic square.

    Independent of the chart curvature evaluator: only exp, log and parallel
    transport enter.  The rotation angle equals sec * h^2 up to O(h^3).
    """
    x = np.asarray(x, dtype=float)
    g = chart.metric(x)
    E = gram_schmidt(g)
    X, Y = E[:, 0], E[:, 1]
    cur = np.stack([X, Y, X])  # transported X, Y and the probe vector
    p = x.copy()
    for leg in range(4):
        d = {0: cur[0] * h, 1: cur[1] * h, 2: -cur[0] * h, 3: -cur[1] * h}[leg]
        P = _transport_matrix_many(chart, p[None, :], d[None, :], step=step)[0]
        end, _, _, _ = _exp_many(chart, p[None, :], d[None, :], step=step)
        cur = cur @ P.T
        p = end[0]
    v = _log_many(chart, p, x, step=step)
    P = _transport_matrix_many(chart, p[None, :], v[None, :], step=step)[0]
    cur = cur @ P.T
    w = cur[2]
    a = float(w @ g @ X)
    b = float(w @ g @ Y)
    return math.atan2(b, a) / h**2


def holonomy_check(chart, x=None, h_values=(0.2, 0.1, 0.05, 0.025), seed=0, step=2e-3) -> CheckReport:
    """Slope of the holonomy rotation angle against the square side; expected 2.0 +/- 0.15."""
    if chart.dim != 2:
        raise geo.DimensionError("holonomy square check implemented for 2-dimensional charts")
    rng = np.random.default_rng(seed)
    if x is None:
        x = _sample_points(chart, rng, 1)[0]
    x = np.asarray(x, dtype=float)
    sec_eval = geo.sectional_curvature(chart, x, np.eye(2)[0], np.eye(2)[1])
    ests = np.array([holonomy_sectional_estimate(chart, x, h, step=step) for h in h_values])
    angles = np.abs(ests) * np.asarray(h_values) ** 2
    if np.all(angles < 1e-12):
        slope = 2.0  # flat chart: no rotation at any scale
    else:
        slope = fit_loglog_slope(np.asarray(h_values), angles)
    passed = abs(slope - 2.0) <= 0.15
    sec_best = float(ests[-1])
    return CheckReport(check="holonomy_square_slope", value=float(slope), tol=0.15, passed=passed,
                       details={"sectional_estimates": dict(zip(h_values, ests.tolist())),
                                "sectional_from_evaluator": float(sec_eval),
                                "sectional_gap_smallest_h": abs(sec_best - sec_eval)})


def log_sign_relation_check(chart, n_pairs=100, seed=0, step=5e-3) -> CheckReport:
    """Transported forward log against the negated backward log over random in-radius pairs."""
    rng = np.random.default_rng(seed)
    xs = _sample_points(chart, rng, n_pairs)
    units = _unit_vectors(chart, xs, rng)
    scales = rng.uniform(0.05, 0.8 * chart.injectivity_hint, size=n_pairs)
    vs = units * scales[:, None]
    ys, _, _, _ = _exp_many(chart, xs, vs, step=step)
    vxy = _log_many(chart, xs, ys, step=step)
    vyx = _log_many(chart, ys, xs, step=step)
    P = _transport_matrix_many(chart, xs, vxy, step=step)
    resid = np.einsum("bij,bj->bi", P, vxy) + vyx
    gy = chart.metric(ys)
    worst = float(np.max(np.sqrt(np.einsum("bi,bij,bj->b", resid, gy, resid))))
    return CheckReport.from_value("log_transport_sign_relation", worst, 1e-8, {"pairs": n_pairs})


def dexp_symmetry_check(chart, n_draws=3, seed=0, step=5e-3) -> CheckReport:
    """Symmetry of the differential of the inverse exponential, slope-2 convergence."""
    rng = np.random.default_rng(seed)
    slopes = []
    residuals = []
    for _ in range(n_draws):
        x = _sample_points(chart, rng, 1)[0]
        u = _unit_vectors(chart, x[None, :], rng)[0]
        r = rng.uniform(0.2, 0.5 * chart.injectivity_hint)
        y, _, _, _ = _exp_many(chart, x[None, :], (r * u)[None, :], step=step)
        y = y[0]
        X = _unit_vectors(chart, x[None, :], rng)[0]
        Y = _unit_vectors(chart, y[None, :], rng)[0]
        hs, res = dist.dexp_symmetry_residuals(chart, x, y, X, Y, step=step)
        residuals.append(res)
        if np.all(res < 1e-11):
            slopes.append(2.0)
        else:
            slopes.append(fit_loglog_slope(hs, res))
    slopes = np.asarray(slopes)
    ok = bool(np.all(slopes >= 1.7) and np.all(slopes <= 2.4))
    return CheckReport(check="dexp_inverse_symmetry_slope", value=float(np.min(slopes)), tol=1.7,
                       passed=ok, details={"slopes": slopes.tolist(),
                                           "residual_sweeps": [r.tolist() for r in residuals]})


def curvature_identity_check(chart, n_draws=20, seed=0, step=5e-3,
                             h_values=(0.2, 0.1, 0.05, 0.025)) -> CheckReport:
    """Random draws of the transport-quotient curvature identity; flat charts must sit at 1e-10."""
    rng = np.random.default_rng(seed)
    flat = bool(np.max(np.abs(chart.curvature(
        _sample_points(chart, rng, 1)[0]))) < 1e-14)
    worst_rel = 0.0
    worst_abs = 0.0
    err_rows = []
    for _ in range(n_draws):
        x = _sample_points(chart, rng, 1)[0]
        g = chart.metric(x)
        E = gram_schmidt(g)
        c = rng.normal(size=(3, chart.dim))
        X = E @ c[0] / np.linalg.norm(c[0])
        V = E @ c[1] / np.linalg.norm(c[1])
        coeff = c[2] / np.linalg.norm(c[2])

        def F(p, coeff=coeff):
            return coeff  # constant-coefficient field: all variation from the transports

        lhs, rhs, rel, _, sweep = dist.curvature_transport_identity_check(
            chart, x, X, V, F, h_values=h_values, step=step)
        worst_rel = max(worst_rel, rel)
        worst_abs = max(worst_abs, geo.norm(chart, x, lhs - rhs))
        err_rows.append([sweep[h] for h in h_values])
    if flat:
        return CheckReport.from_value("curvature_transport_identity_flat", worst_abs, 1e-10,
                                      {"draws": n_draws})
    # per-draw error curves can cross zero (mixed-sign h and h^2 terms), so
    # the convergence slope is fitted on the per-step maximum over draws
    max_per_h = np.max(np.asarray(err_rows), axis=0)
    slope = fit_loglog_slope(np.asarray(h_values), max_per_h)
    ok = worst_rel <= 0.05 and slope >= 0.9
    return CheckReport(check="curvature_transport_identity", value=worst_rel, tol=0.05, passed=ok,
                       details={"slope": float(slope), "draws": n_draws,
                                "max_err_per_h": dict(zip(h_values, max_per_h.tolist()))})


def gauss_form_check(chart, n_draws=5, seed=0, step=5e-3) -> CheckReport:
    """Agreement of the Gaussian-curvature form with the curvature-action form (2-D charts)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        x = _sample_points(chart, rng, 1)[0]
        E = gram_schmidt(chart.metric(x))
        c = rng.normal(size=(3, 2))
        X = E @ c[0]
        V = E @ c[1]
        coeff = c[2]
        rep = dist.gauss_2d_identity_check(chart, x, X, V, lambda p: coeff,
                                           h_values=(0.05,), step=step)
        worst = max(worst, rep.value)
    return CheckReport.from_value("gauss_2d_closed_forms", worst, 1e-8, {"draws": n_draws})


def hessian_diag_check(chart, n_points=2, seed=0, step=5e-3) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst = 0.0
    sweeps = []
    for _ in range(n_points):
        x = _sample_points(chart, rng, 1)[0]
        rep = dist.hessian_rho2_diag_check(chart, x, step=step)
        worst = max(worst, rep.value)
        sweeps.append(rep.details["sweep"])
    return CheckReport.from_value("rho2_hessian_diagonal", worst, 1e-4, {"sweeps": sweeps})


def third_derivative_check(chart, seed=0, step=5e-3) -> CheckReport:
    rng = np.random.default_rng(seed)
    x = _sample_points(chart, rng, 1)[0]
    return dist.third_derivative_vanishing_check(chart, x, seed=seed, step=step)


def geometry_suite(chart, seed=0, n_pairs=100, identity_draws=20) -> list[CheckReport]:
    """The full chart verification suite used by the command line and the acceptance tests."""
    reports = [
        roundtrip_check(chart, n_pairs=n_pairs, seed=seed),
        transport_isometry_check(chart, seed=seed),
        speed_drift_check(chart, seed=seed),
        curvature_symmetry_check(chart, seed=seed),
        metric_compatibility_check(chart, seed=seed),
        log_sign_relation_check(chart, n_pairs=n_pairs, seed=seed),
        dexp_symmetry_check(chart, seed=seed),
        hessian_diag_check(chart, seed=seed),
        third_derivative_check(chart, seed=seed),
        curvature_identity_check(chart, n_draws=identity_draws, seed=seed),
    ]
    if chart.dim == 2:
        reports.append(holonomy_check(chart, seed=seed))
        reports.append(gauss_form_check(chart, seed=seed))
    return reports
