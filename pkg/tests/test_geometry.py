"""Chart-level geometry: metrics, connections, curvature, geodesics, exp/log, transport."""

import math

import numpy as np
import pytest

from riemctl import geometry as geo
from riemctl.numerics import fit_loglog_slope, gram_schmidt


def test_euclidean_metric_is_identity(euclidean2):
    g = geo.metric_at(euclidean2, np.array([0.3, -1.2]))
    assert np.allclose(g, np.eye(2))


def test_hyperbolic_metric_closed_form(hyperbolic):
    assert np.allclose(geo.metric_at(hyperbolic, np.zeros(2)), np.eye(2))
    g = geo.metric_at(hyperbolic, np.array([1.0, 0.0]))
    assert np.allclose(g, np.array([[0.5, 0.0], [0.0, 1.0]]), atol=1e-15)


def test_metric_domain_error(sphere):
    with pytest.raises(geo.DomainError):
        geo.metric_at(sphere, np.array([-0.5, 0.0]))


def test_euclidean_christoffel_zero(euclidean2):
    assert np.max(np.abs(geo.christoffel_at(euclidean2, np.array([1.0, 2.0])))) == 0.0


def test_sphere_christoffel_value_and_fd_agreement(sphere):
    x = np.array([math.pi / 4, 0.3])
    gam = geo.christoffel_at(sphere, x)
    assert gam[0, 1, 1] == pytest.approx(-0.5, abs=1e-14)
    gam_fd = geo.christoffel_from_metric(sphere.metric)(x)
    assert np.max(np.abs(gam - gam_fd)) < 1e-8
    assert np.max(np.abs(gam - np.swapaxes(gam, 1, 2))) == 0.0


def test_hyperbolic_christoffel_vanishes_at_origin(hyperbolic):
    gam_fd = geo.christoffel_from_metric(hyperbolic.metric)(np.zeros(2))
    assert np.max(np.abs(gam_fd)) < 1e-9
    assert np.max(np.abs(hyperbolic.christoffel(np.zeros(2)))) == 0.0


def test_metric_compatibility(all_charts):
    for chart in all_charts:
        lo, hi = chart.sample_box
        x = 0.5 * (np.asarray(lo) + np.asarray(hi)) + 0.01
        assert geo.metric_compatibility_residual(chart, x) < 1e-6


def test_curvature_values(euclidean2, sphere, hyperbolic):
    assert np.max(np.abs(geo.curvature_at(euclidean2, np.array([0.1, 0.2])))) == 0.0
    x = np.array([1.1, 0.4])
    assert geo.sectional_curvature(sphere, x, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)
    xh = np.array([0.3, 0.2])
    assert geo.sectional_curvature(hyperbolic, xh, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(-1.0, abs=1e-12)


def test_curvature_fd_route_matches_analytic(sphere, hyperbolic):
    for chart, x in ((sphere, np.array([1.0, 0.2])), (hyperbolic, np.array([0.4, -0.3]))):
        fd = geo.curvature_from_christoffel(chart.christoffel)(x)
        assert np.max(np.abs(fd - chart.curvature(x))) < 1e-6


def test_curvature_symmetries(all_charts):
    for chart in all_charts:
        lo, hi = chart.sample_box
        x = 0.5 * (np.asarray(lo) + np.asarray(hi)) + 0.05
        assert geo.curvature_symmetry_residual(chart, x) < 1e-12


def test_sectional_degenerate_plane(sphere):
    with pytest.raises(geo.DegeneratePlaneError):
        geo.sectional_curvature(sphere, np.array([1.0, 0.0]), [1.0, 0.0], [2.0, 0.0])


def test_gaussian_curvature_dimension_guard():
    chart3 = geo.euclidean_chart(3)
    with pytest.raises(geo.DimensionError):
        geo.gaussian_curvature(chart3, np.zeros(3))


def test_euclidean_geodesic_is_straight_line(euclidean2):
    path = geo.geodesic(euclidean2, np.zeros(2), np.array([1.0, 0.0]), 1.0, step=1e-2)
    assert np.allclose(path.points[-1], [1.0, 0.0], atol=1e-12)


def test_sphere_equator_geodesic(sphere):
    # unit-speed quarter of the equator by the great-circle closed form
    path = geo.geodesic(sphere, np.array([math.pi / 2, 0.0]), np.array([0.0, 1.0]),
                        math.pi / 2, step=1e-3)
    assert np.allclose(path.points[-1], [math.pi / 2, math.pi / 2], atol=1e-10)


def test_hyperbolic_geodesic_hyperboloid_oracle(hyperbolic):
    # hyperboloid-model distance: the point (a, 0) sits at distance arcsinh(a) from the origin
    s = math.asinh(1.0)
    path = geo.geodesic(hyperbolic, np.zeros(2), np.array([1.0, 0.0]), s, step=1e-3)
    assert np.allclose(path.points[-1], [1.0, 0.0], atol=1e-9)


def test_geodesic_speed_conservation(sphere):
    path = geo.geodesic(sphere, np.array([math.pi / 2, -2.0]), np.array([0.12, 1.0]), 4.0,
                        step=1e-3)
    g = sphere.metric(path.points)
    sp = np.sqrt(np.einsum("ki,kij,kj->k", path.velocity, g, path.velocity))
    assert np.max(np.abs(sp - sp[0])) / sp[0] < 1e-8


def test_geodesic_domain_exit_carries_time(sphere):
    with pytest.raises(geo.DomainExitError) as err:
        geo.geodesic(sphere, np.array([0.3, 0.0]), np.array([-1.0, 0.0]), 2.0, step=1e-3)
    assert 0.0 < err.value.exit_time < 0.4


def test_exp_map_at_zero_and_euclidean(all_charts):
    for chart in all_charts:
        lo, hi = chart.sample_box
        x = 0.5 * (np.asarray(lo) + np.asarray(hi))
        out = geo.exp_map(chart, x, np.zeros(chart.dim))
        assert np.allclose(out.coords, x, atol=1e-14)
    e2 = geo.euclidean_chart(2)
    out = geo.exp_map(e2, np.array([1.0, 1.0]), np.array([0.25, -0.5]))
    assert np.allclose(out.coords, [1.25, 0.5], atol=1e-12)


def test_exp_map_sphere_great_circle(sphere):
    out = geo.exp_map(sphere, np.array([math.pi / 2, 0.0]), np.array([0.0, math.pi / 2]))
    assert np.allclose(out.coords, [math.pi / 2, math.pi / 2], atol=1e-10)


def test_exp_map_injectivity_guard(sphere):
    with pytest.raises(geo.DomainError):
        geo.exp_map(sphere, np.array([math.pi / 2, 0.0]), np.array([0.0, 2.5]))


def test_log_map_euclidean_and_identity(euclidean2, sphere):
    v = geo.log_map(euclidean2, np.array([0.5, 0.5]), np.array([1.5, -0.5]))
    assert np.allclose(v.components, [1.0, -1.0], atol=1e-12)
    x = np.array([math.pi / 2, 0.3])
    v0 = geo.log_map(sphere, x, x)
    assert np.linalg.norm(v0.components) < 1e-12


def test_log_map_hyperbolic_distance_oracle(hyperbolic):
    v = geo.log_map(hyperbolic, np.zeros(2), np.array([1.0, 0.0]), step=5e-3)
    nrm = geo.norm(hyperbolic, np.zeros(2), v.components)
    assert nrm == pytest.approx(math.asinh(1.0), abs=1e-8)
    direction = v.components / np.linalg.norm(v.components)
    assert np.allclose(direction, [1.0, 0.0], atol=1e-10)


def test_log_map_refuses_far_points(sphere):
    # antipodal-ish pair along the equator sits beyond the injectivity guard
    with pytest.raises(geo.LogMapError):
        geo.log_map(sphere, np.array([math.pi / 2, -3.0]), np.array([math.pi / 2, 3.0]),
                    step=5e-3, max_iter=12)


def test_parallel_transport_euclidean_constant(euclidean2):
    path = geo.CurvePath.from_callable(lambda s: np.array([s, s * s]),
                                       lambda s: np.array([1.0, 2 * s]), 0.0, 1.0)
    out = geo.parallel_transport(euclidean2, path, geo.TangentVec(geo.PointRep([0.0, 0.0]),
                                                                  [0.7, -0.3]))
    assert np.allclose(out.components, [0.7, -0.3], atol=1e-12)


def test_transport_isometry_and_covector_duality(sphere):
    path = geo.geodesic(sphere, np.array([math.pi / 2, 0.1]), np.array([0.3, 0.8]), 1.0,
                        step=1e-3)
    x0 = path.points[0]
    v = np.array([0.4, -0.2])
    lam = geo.lower_vector(sphere, x0, np.array([-0.1, 0.9]))
    tv = geo.parallel_transport(sphere, path, geo.TangentVec(geo.PointRep(x0), v))
    tl = geo.parallel_transport(sphere, path, geo.CotangentVec(geo.PointRep(x0), lam))
    before = float(lam @ v)
    after = float(tl.components @ tv.components)
    assert abs(after - before) < 1e-10
    n0 = geo.norm(sphere, x0, v)
    n1 = geo.norm(sphere, path.points[-1], tv.components)
    assert abs(n1 - n0) / n0 < 1e-8


def test_transport_octant_loop_holonomy(sphere):
    """Carrying a vector around the equator-meridian loop rotates it by the enclosed area."""
    eps = 1e-3
    th0 = math.pi / 2
    legs = [
        geo.CurvePath.from_callable(lambda s: np.array([th0, s]),
                                    lambda s: np.array([0.0, 1.0]), 0.0, math.pi / 2),
        geo.CurvePath.from_callable(lambda s: np.array([th0 - s, math.pi / 2]),
                                    lambda s: np.array([-1.0, 0.0]), 0.0, th0 - eps),
        geo.CurvePath.from_callable(lambda s: np.array([eps, math.pi / 2 - s]),
                                    lambda s: np.array([0.0, -1.0]), 0.0, math.pi / 2),
        geo.CurvePath.from_callable(lambda s: np.array([eps + s, 0.0]),
                                    lambda s: np.array([1.0, 0.0]), 0.0, th0 - eps),
    ]
    vec = geo.TangentVec(geo.PointRep([th0, 0.0]), [1.0, 0.0])
    for leg in legs:
        vec = geo.parallel_transport(sphere, leg, geo.TangentVec(geo.PointRep(leg.points[0]),
                                                                 vec.components), step=1e-3)
    w = vec.components
    g = sphere.metric(np.array([th0, 0.0]))
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])  # unit since sin(pi/2) = 1
    angle = math.atan2(float(w @ g @ e2), float(w @ g @ e1))
    enclosed = (math.pi / 2) * math.cos(eps)  # octant area minus the polar cap sliver
    assert abs(abs(angle) - enclosed) < 1e-5
    assert abs(abs(angle) - math.pi / 2) < 1e-3


def test_covariant_derivative_field(euclidean2, sphere):
    out = geo.covariant_derivative_field(euclidean2, lambda x: np.array([1.0, 2.0]),
                                         np.array([0.2, 0.1]), np.array([1.0, 0.0]))
    assert np.allclose(out.components, 0.0, atol=1e-10)
    out2 = geo.covariant_derivative_field(euclidean2, lambda x: np.asarray(x, dtype=float),
                                          np.array([0.2, 0.1]), np.array([1.0, 0.0]))
    assert np.allclose(out2.components, [1.0, 0.0], atol=1e-9)
    # the unit azimuthal field is parallel along meridians: both routes give zero
    x = np.array([math.pi / 4, 0.2])
    X = np.array([1.0, 0.0])
    unit_az = lambda p: np.array([0.0, 1.0 / math.sin(p[0])])
    par = geo.covariant_derivative_field(sphere, unit_az, x, X).components
    assert geo.norm(sphere, x, par) < 1e-9
    carried0 = geo.transport_along_ray(sphere, x, 1e-3 * X, unit_az(
        geo.exp_map(sphere, x, 1e-3 * X).coords), reverse=True, step=1e-3)
    assert geo.norm(sphere, x, (carried0 - unit_az(x)) / 1e-3) < 1e-4

    # transport difference quotient as the first-order oracle on a generic field
    F = lambda p: np.array([math.cos(p[1]), p[0] * 0.5])
    exact = geo.covariant_derivative_field(sphere, F, x, X).components
    errs = []
    hs = (4e-2, 2e-2, 1e-2)
    for h in hs:
        end, _, _, _ = geo._exp_many(sphere, x[None, :], (h * X)[None, :], step=1e-3)
        carried = geo.transport_along_ray(sphere, x, h * X, F(end[0]), reverse=True, step=1e-3)
        quo = (carried - F(x)) / h
        errs.append(geo.norm(sphere, x, quo - exact))
    slope = fit_loglog_slope(np.asarray(hs), np.asarray(errs))
    assert errs[-1] < 5e-3
    assert slope > 0.9


def test_lower_raise_roundtrip(all_charts):
    rng = np.random.default_rng(5)
    for chart in all_charts:
        lo, hi = chart.sample_box
        for _ in range(10):
            x = rng.uniform(lo, hi)
            X = rng.normal(size=chart.dim)
            back = geo.raise_covector(chart, x, geo.lower_vector(chart, x, X))
            assert np.max(np.abs(back - X)) < 1e-12


def test_chart_from_json_roundtrip():
    doc = {"name": "hyp_custom", "dim": 2, "builtin": "hyperbolic_R",
           "params": {"radius": 2.0}, "domain_box": [[-5, -5], [5, 5]]}
    chart = geo.chart_from_json(doc)
    assert chart.name == "hyp_custom"
    assert chart.dim == 2
    assert np.allclose(chart.domain_upper, 5.0)
    assert geo.sectional_curvature(chart, np.zeros(2), [1, 0], [0, 1]) == pytest.approx(-0.25)
    with pytest.raises(ValueError):
        geo.chart_from_json({"builtin": "sphere", "bogus": 1})
    with pytest.raises(ValueError):
        geo.chart_from_json({"builtin": "nonexistent"})
