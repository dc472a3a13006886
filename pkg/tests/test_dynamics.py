"""Controlled flows: integration, costs, control representations, a-priori bounds."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riemctl import dynamics as dyn
from riemctl import geometry as geo
from riemctl import scenarios as scn


def test_integrate_constant_flow(euclidean2):
    prob = dyn.ControlProblem(
        chart=geo.euclidean_chart(1), T=1.0, y0=[0.0],
        f=lambda t, x, u: np.broadcast_to(np.asarray(u, dtype=float),
                                          np.asarray(x, dtype=float).shape),
        f0=lambda t, x, u: 0.0 * np.asarray(x, dtype=float)[..., 0],
        control_set=dyn.OpenBox(lower=[-5], upper=[5]))
    traj = dyn.integrate_trajectory(prob, dyn.ControlGrid(T=1.0, values=np.array([[1.0]])),
                                    step=1e-2)
    assert traj.terminal[0] == pytest.approx(1.0, abs=1e-12)
    assert traj.cost == 0.0


def test_origin_trajectory_and_costs(hyp_problem):
    """The rotation field vanishes at the origin; running cost stays at its initial value."""
    prob = scn.hyperbolic_discrete_problem(y0=(0.0, 0.0))
    t1 = dyn.integrate_trajectory(prob, dyn.ControlGrid(T=1.0, values=np.full(4, 1.0)), step=1e-3)
    assert np.allclose(t1.terminal, 0.0, atol=1e-14)
    assert t1.cost == pytest.approx(math.exp(-1.0), abs=1e-10)
    t2 = dyn.integrate_trajectory(prob, dyn.ControlGrid(T=1.0, values=np.full(4, 2.0)), step=1e-3)
    assert t2.cost == pytest.approx(4.0 * math.exp(-1.0), abs=1e-10)


def test_radius_invariance_of_rotation_flow(hyp_problem):
    traj = dyn.integrate_trajectory(hyp_problem,
                                    dyn.ControlGrid(T=1.0, values=np.array([3.0, 1.0, 4.0, 2.0])),
                                    step=1e-3)
    r = np.sqrt(np.sum(traj.points ** 2, axis=1))
    assert np.max(np.abs(r - 0.5)) < 1e-9


def test_flat_lq_baseline_costs(lq_problem):
    problem, ustar = lq_problem
    zero = dyn.ControlGrid(T=1.0, values=np.array([[0.0]]))
    t0 = dyn.integrate_trajectory(problem, zero, step=1e-3)
    assert np.allclose(t0.points, 1.0)
    assert t0.cost == pytest.approx(0.5, abs=1e-12)
    topt = dyn.integrate_trajectory(problem, ustar, step=1e-3)
    assert topt.cost == pytest.approx(0.5 * math.tanh(1.0), abs=1e-9)


def test_cost_additivity_at_segment_boundary(hyp_problem):
    traj = dyn.integrate_trajectory(hyp_problem,
                                    dyn.ControlGrid(T=1.0, values=np.array([2.0, 1.0, 3.0, 1.0])),
                                    step=1e-3)
    total = dyn.evaluate_cost(hyp_problem, traj)
    left = dyn.evaluate_cost(hyp_problem, traj, t_hi=0.5)
    right = dyn.evaluate_cost(hyp_problem, traj, t_lo=0.5)
    assert abs(total - (left + right)) < 1e-10


def test_integrator_order(hyp_problem):
    ctrl = dyn.ControlGrid(T=1.0, values=np.array([2.0, 3.0, 1.0, 4.0]))
    ends = {}
    for step in (4e-3, 2e-3, 1e-3):
        ends[step] = dyn.integrate_trajectory(hyp_problem, ctrl, step=step).terminal
    ref = dyn.integrate_trajectory(hyp_problem, ctrl, step=2.5e-4).terminal
    e1 = np.linalg.norm(ends[4e-3] - ref)
    e2 = np.linalg.norm(ends[2e-3] - ref)
    assert e1 / max(e2, 1e-17) > 14.0


def test_determinism(hyp_problem):
    ctrl = dyn.ControlGrid(T=1.0, values=np.array([2.0, 3.0, 1.0, 4.0]))
    a = dyn.integrate_trajectory(hyp_problem, ctrl, step=1e-3)
    b = dyn.integrate_trajectory(hyp_problem, ctrl, step=1e-3)
    assert np.array_equal(a.points, b.points)
    assert a.cost == b.cost


def test_domain_exit_and_nonfinite_errors():
    prob = dyn.ControlProblem(
        chart=geo.sphere_chart(), T=2.0, y0=[0.3, 0.0],
        f=lambda t, x, u: np.stack([-np.ones_like(np.asarray(x)[..., 0]),
                                    np.zeros_like(np.asarray(x)[..., 0])], axis=-1),
        f0=lambda t, x, u: np.zeros_like(np.asarray(x)[..., 0]),
        control_set=dyn.FiniteSet(values=(1.0,)))
    with pytest.raises(geo.DomainExitError):
        dyn.integrate_trajectory(prob, dyn.ControlGrid(T=2.0, values=np.array([1.0])), step=1e-3)


def test_ekeland_distance_known_values():
    g1 = dyn.ControlGrid(T=1.0, values=np.array([1.0, 2.0, 3.0, 4.0]))
    g2 = dyn.ControlGrid(T=1.0, values=np.array([1.0, 2.0, 1.0, 4.0]))
    g3 = dyn.ControlGrid(T=1.0, values=np.array([2.0, 3.0, 4.0, 1.0]))
    assert dyn.ekeland_distance(g1, g1) == 0.0
    assert dyn.ekeland_distance(g1, g2) == pytest.approx(0.25)
    assert dyn.ekeland_distance(g1, g3) == pytest.approx(1.0)
    with pytest.raises(dyn.ShapeError):
        dyn.ekeland_distance(g1, dyn.ControlGrid(T=1.0, values=np.array([1.0, 2.0])))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=4, max_size=4),
       st.lists(st.integers(0, 3), min_size=4, max_size=4),
       st.lists(st.integers(0, 3), min_size=4, max_size=4))
def test_ekeland_metric_axioms(a, b, c):
    vals = np.array([1.0, 2.0, 3.0, 4.0])
    ga = dyn.ControlGrid(T=1.0, values=vals[a])
    gb = dyn.ControlGrid(T=1.0, values=vals[b])
    gc = dyn.ControlGrid(T=1.0, values=vals[c])
    dab = dyn.ekeland_distance(ga, gb)
    assert dab == dyn.ekeland_distance(gb, ga)
    assert dab >= 0.0
    assert dab <= dyn.ekeland_distance(ga, gc) + dyn.ekeland_distance(gc, gb) + 1e-12


def test_needle_measures_and_nesting():
    big = dyn.nested_spike_intervals(1.0, 0.2, 5)
    small = dyn.nested_spike_intervals(1.0, 0.1, 5)
    for (a_s, b_s), (a_b, b_b) in zip(small, big):
        assert a_s == a_b and b_s <= b_b
    base = dyn.ControlGrid(T=1.0, values=np.full(4, 1.0))
    u = dyn.needle_control(base, dyn.NeedleSpec(intervals=big, replacement=3.0))
    assert dyn.control_difference_measure(u, base) == pytest.approx(0.2, abs=1e-12)
    assert u.value_at(0.01) == 3.0
    assert u.value_at(0.1) == 1.0


def test_patched_control_segments_cover_horizon():
    base = dyn.ControlGrid(T=1.0, values=np.array([1.0, 2.0]))
    u = dyn.PatchedControl(base=base, patches=((0.25, 0.3, 9.0), (0.7, 0.8, 7.0)))
    segs = u.segments()
    assert segs[0][0] == 0.0 and abs(segs[-1][1] - 1.0) < 1e-12
    for (a0, b0, _), (a1, b1, _) in zip(segs[:-1], segs[1:]):
        assert abs(b0 - a1) < 1e-12
    assert u.value_at(0.27) == 9.0
    assert u.value_at(0.65) == 2.0


def test_fd_derivatives_match_analytic(hyp_problem):
    stripped = dyn.ControlProblem(chart=hyp_problem.chart, T=1.0, y0=hyp_problem.y0,
                                  f=hyp_problem.f, f0=hyp_problem.f0,
                                  control_set=hyp_problem.control_set)
    fd = dyn.ProblemDerivatives(stripped)
    an = dyn.ProblemDerivatives(hyp_problem)
    assert "dxf" in fd.synthesized and "dxf" not in an.synthesized
    x = np.array([0.5, 0.1])
    assert np.max(np.abs(fd.A(0.0, x, 2.0) - an.A(0.0, x, 2.0))) < 1e-8
    assert np.max(np.abs(fd.df0(0.0, x, 2.0) - an.df0(0.0, x, 2.0))) < 1e-8
    # second derivatives agree between the two synthesis routes
    assert np.max(np.abs(fd.S2f(0.0, x, 2.0) - an.S2f(0.0, x, 2.0))) < 1e-6
    assert np.max(np.abs(fd.H2f0(0.0, x, 2.0) - an.H2f0(0.0, x, 2.0))) < 1e-6


def test_covariant_hessian_symmetry(hyp_problem):
    derivs = dyn.ProblemDerivatives(hyp_problem)
    H = derivs.H2f0(0.0, np.array([0.4, -0.2]), 3.0)
    assert np.allclose(H, H.T, atol=1e-12)


def test_batched_integration_matches_scalar(hyp_problem):
    vals = np.array([[1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0], [1.0, 1.0, 1.0, 1.0]])
    costs, ends = dyn.integrate_many(hyp_problem, vals, step=1e-3)
    for row, cost, end in zip(vals, costs, ends):
        traj = dyn.integrate_trajectory(hyp_problem, dyn.ControlGrid(T=1.0, values=row),
                                        step=1e-3)
        assert cost == pytest.approx(traj.cost, abs=1e-12)
        assert np.allclose(end, traj.terminal, atol=1e-12)


def test_apriori_bounds(hyp_problem, lq_problem):
    rep = dyn.apriori_bounds_check(hyp_problem,
                                   dyn.ControlGrid(T=1.0, values=np.full(4, 1.0)),
                                   n_pairs=20, seed=0, step=2e-3)
    assert rep.passed
    assert rep.L > 1.0
    # constant trajectory: both sides of the growth bound are trivial
    prob0 = scn.hyperbolic_discrete_problem(y0=(0.0, 0.0))
    rep0 = dyn.apriori_bounds_check(prob0, dyn.ControlGrid(T=1.0, values=np.full(4, 1.0)),
                                    n_pairs=5, seed=0, step=2e-3)
    assert rep0.passed and rep0.growth_margin >= 0.0
    # flat quadratic problem with one-interval swaps
    problem, _ = lq_problem
    repl = dyn.apriori_bounds_check(problem, dyn.ControlGrid(T=1.0, values=np.full((4, 1), 0.2)),
                                    n_pairs=10, seed=1, step=2e-3,
                                    region=(np.array([-2.0]), np.array([2.0])))
    assert repl.passed
