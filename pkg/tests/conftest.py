"""Shared fixtures: charts, builtin problems, and solved base objects (session scoped)."""

import math

import numpy as np
import pytest

from riemctl import adjoint as adj
from riemctl import dynamics as dyn
from riemctl import geometry as geo
from riemctl import scenarios as scn


@pytest.fixture(scope="session")
def euclidean2():
    return geo.euclidean_chart(2)


@pytest.fixture(scope="session")
def sphere():
    return geo.sphere_chart()


@pytest.fixture(scope="session")
def hyperbolic():
    return geo.hyperbolic_chart(1.0)


@pytest.fixture(scope="session")
def all_charts(euclidean2, sphere, hyperbolic):
    return [euclidean2, sphere, hyperbolic]


@pytest.fixture(scope="session")
def hyp_problem():
    return scn.hyperbolic_discrete_problem()


@pytest.fixture(scope="session")
def hyp_base(hyp_problem):
    control, cost = scn.brute_force_optimum(hyp_problem, 4, step=1e-3)
    base = dyn.integrate_trajectory(hyp_problem, control, step=1e-3)
    return base


@pytest.fixture(scope="session")
def hyp_dual(hyp_problem, hyp_base):
    frame = adj.build_parallel_frame(hyp_base)
    psi = adj.solve_first_adjoint(hyp_problem, hyp_base, nu=-1.0, psi1=np.zeros(2), frame=frame)
    mats = adj.assemble_frame_matrices(hyp_problem, hyp_base, psi)
    return frame, psi, mats


@pytest.fixture(scope="session")
def lq_problem():
    problem, ustar = scn.flat_lq_problem()
    return problem, ustar


@pytest.fixture(scope="session")
def lq_base(lq_problem):
    problem, ustar = lq_problem
    return dyn.integrate_trajectory(problem, ustar, step=1e-3)


@pytest.fixture(scope="session")
def lq_dual(lq_problem, lq_base):
    problem, _ = lq_problem
    frame = adj.build_parallel_frame(lq_base)
    psi = adj.solve_first_adjoint(problem, lq_base, nu=-1.0, psi1=np.zeros(1), frame=frame)
    mats = adj.assemble_frame_matrices(problem, lq_base, psi)
    return frame, psi, mats


@pytest.fixture(scope="session")
def quarter_equator():
    problem, control = scn.geodesic_energy_problem(chart_name="sphere",
                                                   arc=0.5 * math.pi, T=1.0)
    base = dyn.integrate_trajectory(problem, control, step=1e-3)
    frame = adj.build_parallel_frame(base)
    psi1 = geo.lower_vector(problem.chart, base.terminal, base.velocity[-1])
    psi = adj.solve_first_adjoint(problem, base, nu=-1.0, psi1=psi1, frame=frame)
    return problem, base, frame, psi


@pytest.fixture(scope="session")
def long_equator():
    problem, control = scn.geodesic_energy_problem(chart_name="sphere",
                                                   arc=1.5 * math.pi, T=1.0)
    base = dyn.integrate_trajectory(problem, control, step=1e-3)
    frame = adj.build_parallel_frame(base)
    return problem, base, frame
