"""Squared-distance derivatives, the transport-quotient curvature identity, Lipschitz sampling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riemctl import distance as dist
from riemctl import geometry as geo
from riemctl.numerics import fit_loglog_slope, gram_schmidt


def test_grad_rho2_euclidean(euclidean2):
    x = np.array([0.3, -0.4])
    y = np.array([1.1, 0.6])
    g1 = dist.grad_rho2(euclidean2, x, y, which=1)
    assert np.allclose(g1.components, 2.0 * (x - y), atol=1e-10)
    g2 = dist.grad_rho2(euclidean2, x, y, which=2)
    assert np.allclose(g2.components, 2.0 * (y - x), atol=1e-10)


def test_grad_rho2_at_coincident_points(sphere):
    x = np.array([math.pi / 2, 0.4])
    g = dist.grad_rho2(sphere, x, x, which=1)
    assert np.linalg.norm(g.components) < 1e-10


def test_grad_rho2_sphere_norm_is_twice_distance(sphere):
    # quarter-equator pair: the great-circle distance is pi/2
    x = np.array([math.pi / 2, 0.0])
    y = np.array([math.pi / 2, math.pi / 2])
    g = dist.grad_rho2(sphere, x, y, which=1, step=2e-3)
    nrm = geo.norm(sphere, x, geo.raise_covector(sphere, x, g.components))
    assert nrm == pytest.approx(math.pi, abs=1e-8)


def test_grad_rho2_directional_derivative_slope(hyperbolic):
    # finite differences of rho^2 along geodesic rays converge at second order
    x = np.array([0.2, -0.1])
    y = np.array([-0.3, 0.4])
    X = np.array([0.7, 0.4])
    g = dist.grad_rho2(hyperbolic, x, y, which=1, step=2e-3)
    exact = float(g.components @ X)
    hs = (0.04, 0.02, 0.01)
    errs = []
    for h in hs:
        ends, _, _, _ = geo._exp_many(hyperbolic, np.stack([x, x]), np.stack([h * X, -h * X]),
                                      step=2e-3)
        r2 = dist.rho2_many(hyperbolic, ends, np.stack([y, y]), step=2e-3)
        errs.append(abs((r2[0] - r2[1]) / (2 * h) - exact))
    assert fit_loglog_slope(np.asarray(hs), np.asarray(errs)) > 1.7


def test_hessian_diag_check(euclidean2, sphere, hyperbolic):
    assert dist.hessian_rho2_diag_check(euclidean2, np.array([0.4, 0.2]), step=5e-3).value < 1e-10
    rep_s = dist.hessian_rho2_diag_check(sphere, np.array([math.pi / 2, 0.0]), step=5e-3)
    assert rep_s.passed and rep_s.value < 1e-4
    rep_h = dist.hessian_rho2_diag_check(hyperbolic, np.array([0.3, 0.2]), step=5e-3)
    assert rep_h.passed and rep_h.value < 1e-4


def test_third_derivative_vanishing(euclidean2, sphere, hyperbolic):
    for chart, x in ((euclidean2, np.array([0.3, -0.2])),
                     (sphere, np.array([math.pi / 2, 0.0])),
                     (hyperbolic, np.array([0.0, 0.0]))):
        rep = dist.third_derivative_vanishing_check(chart, x, step=5e-3)
        assert rep.passed
        assert max(rep.details["sweep"].values()) < 1e-6


def test_curvature_transport_identity_euclidean_zero(euclidean2):
    lhs, rhs, rel, slope, _ = dist.curvature_transport_identity_check(
        euclidean2, np.array([0.1, 0.2]), [1.0, 0.0], [0.0, 1.0], lambda p: np.array([0.4, 0.6]))
    assert np.max(np.abs(lhs)) < 1e-12
    assert np.max(np.abs(rhs)) == 0.0


def test_curvature_transport_identity_sphere(sphere):
    x = np.array([math.pi / 2, 0.0])
    E = gram_schmidt(sphere.metric(x))
    X, V = E[:, 0], E[:, 1]
    lhs, rhs, rel, slope, _ = dist.curvature_transport_identity_check(
        sphere, x, X, V, lambda p: X, step=2e-3)
    # constant-curvature action: R(X, V)X = -V for the orthonormal pair, so rhs = -V/2
    assert np.allclose(rhs, -0.5 * V, atol=1e-12)
    assert geo.norm(sphere, x, rhs) == pytest.approx(0.5, abs=1e-12)
    assert rel < 0.05
    assert slope > 0.9


def test_curvature_transport_identity_hyperbolic(hyperbolic):
    x = np.zeros(2)
    X = np.array([1.0, 0.0])
    V = np.array([0.0, 1.0])
    lhs, rhs, rel, slope, _ = dist.curvature_transport_identity_check(
        hyperbolic, x, X, V, lambda p: X, step=2e-3)
    assert np.allclose(rhs, 0.5 * V, atol=1e-12)  # sign flips with the negative curvature
    assert rel < 0.05


def test_gauss_2d_identity(sphere, hyperbolic):
    x = np.array([math.pi / 2, 0.0])
    E = gram_schmidt(sphere.metric(x))
    X, V = E[:, 0], E[:, 1]
    rep = dist.gauss_2d_identity_check(sphere, x, X, V, lambda p: V, h_values=(0.05,), step=2e-3)
    assert rep.passed and rep.value < 1e-12
    # closed form: rhs = k/2 * (<V,V> X - 0) = X/2 on the unit sphere
    xh = np.zeros(2)
    rep_h = dist.gauss_2d_identity_check(hyperbolic, xh, np.array([1.0, 0.0]),
                                         np.array([0.0, 1.0]), lambda p: np.array([1.0, 0.0]),
                                         h_values=(0.05,), step=2e-3)
    assert rep_h.passed
    with pytest.raises(geo.DimensionError):
        dist.gauss_2d_identity_check(geo.euclidean_chart(3), np.zeros(3), np.eye(3)[0],
                                     np.eye(3)[1], lambda p: np.eye(3)[2])


def test_gauss_2d_parallel_directions_give_zero(hyperbolic):
    x = np.array([0.1, 0.0])
    X = np.array([1.0, 0.0])
    rep = dist.gauss_2d_identity_check(hyperbolic, x, X, 2.0 * X, lambda p: np.array([0.3, 0.7]),
                                       h_values=(0.05,), step=2e-3)
    # V parallel to X has no orthogonal component: both closed forms vanish
    assert rep.value < 1e-12
    lhs, rhs, _, _, _ = dist.curvature_transport_identity_check(
        hyperbolic, x, X, 2.0 * X, lambda p: np.array([0.3, 0.7]), h_values=(0.05,), step=2e-3)
    assert np.max(np.abs(rhs)) < 1e-12
    assert geo.norm(hyperbolic, x, lhs) < 1e-4


def test_fourth_order_identity_euclidean(euclidean2):
    rep = dist.fourth_order_identity_check(euclidean2, np.array([0.2, -0.1]),
                                           [1.0, 0.0], [1.0, 0.0], [0.0, 1.0],
                                           h_values=(0.2,), step=5e-3)
    assert rep.details["rhs"] == 0.0
    assert max(abs(v) for v in rep.details["sweep"].values()) < 1e-6


def test_fourth_order_identity_sphere(sphere):
    x = np.array([math.pi / 2, 0.0])
    E = gram_schmidt(sphere.metric(x))
    X, V = E[:, 0], E[:, 1]
    # antisymmetry in the first pair: the pairing with X = V twice vanishes
    rep0 = dist.fourth_order_identity_check(sphere, x, X, V, X, h_values=(0.3, 0.2), step=5e-3)
    assert rep0.details["rhs"] == pytest.approx(0.0, abs=1e-12)
    # orthonormal X, V with F = X: the pairing evaluates to -2 on the unit sphere
    rep = dist.fourth_order_identity_check(sphere, x, X, X, V, h_values=(0.3, 0.2, 0.1),
                                           step=5e-3)
    assert rep.details["rhs"] == pytest.approx(-2.0, abs=1e-12)
    assert rep.passed and rep.value <= 0.1


def test_fourth_order_identity_hyperbolic(hyperbolic):
    x = np.zeros(2)
    X = np.array([1.0, 0.0])
    V = np.array([0.0, 1.0])
    rep = dist.fourth_order_identity_check(hyperbolic, x, X, X, V, h_values=(0.3, 0.2, 0.1),
                                           step=5e-3)
    assert rep.details["rhs"] == pytest.approx(2.0, abs=1e-12)
    assert rep.passed


def test_lipschitz_sampler_constant_and_linear_fields(euclidean2):
    rep_const = dist.lipschitz_equivalence_sampler(
        euclidean2, lambda p: np.array([1.0, -2.0]), ((-2, -2), (2, 2)),
        n_pairs=500, n_grad_points=50, seed=1)
    assert rep_const.max_grad < 1e-8 and rep_const.max_ratio < 1e-8
    rep_lin = dist.lipschitz_equivalence_sampler(
        euclidean2, lambda p: np.asarray(p, dtype=float), ((-2, -2), (2, 2)),
        n_pairs=2000, n_grad_points=100, seed=1)
    assert rep_lin.max_grad == pytest.approx(1.0, abs=1e-6)
    assert rep_lin.max_ratio == pytest.approx(1.0, abs=1e-6)


def test_lipschitz_sampler_rotation_field_on_hyperbolic(hyperbolic, hyp_problem):
    rep = dist.lipschitz_equivalence_sampler(
        hyperbolic, lambda p: hyp_problem.f(0.0, p, 4.0), ((-2.0, -2.0), (2.0, 2.0)),
        n_pairs=10000, n_grad_points=300, seed=3)
    assert np.isfinite(rep.max_grad) and np.isfinite(rep.max_ratio)
    assert rep.mutually_bounded(1.2)


def test_log_sign_relation_random_pairs(all_charts):
    rng = np.random.default_rng(11)
    for chart in all_charts:
        lo, hi = chart.sample_box
        for _ in range(5):
            x = rng.uniform(lo, hi)
            u = rng.normal(size=chart.dim)
            u = u / geo.norm(chart, x, u)
            r = rng.uniform(0.1, 0.6 * chart.injectivity_hint)
            y = geo.exp_map(chart, x, r * u, step=2e-3).coords
            assert dist.log_sign_relation_residual(chart, x, y, step=2e-3) < 1e-8


@settings(max_examples=12, deadline=None)
@given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.floats(0.1, 1.2), st.floats(0.0, 6.28))
def test_dexp_symmetry_property_hyperbolic(x1, x2, r, ang):
    chart = geo.hyperbolic_chart(1.0)
    x = np.array([x1, x2])
    u = np.array([math.cos(ang), math.sin(ang)])
    u = u / geo.norm(chart, x, u)
    y = geo.exp_map(chart, x, r * u, step=5e-3).coords
    hs, res = dist.dexp_symmetry_residuals(chart, x, y, [1.0, 0.3], [0.2, -1.0],
                                           h_values=(0.04, 0.01), step=5e-3)
    if res[0] > 1e-10:
        assert res[1] < res[0]
