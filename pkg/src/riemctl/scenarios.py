"""Builtin scenario registry, brute-force control search, and scenario execution.

Four scenario families at desk scale: the rotation-flow problem on the
hyperbolic sheet with a four-value control set, a smooth finite-set problem
on the sphere for spike sweeps, the geodesic-energy problem driven by frame
fields with an open control box, and a scalar linear-quadratic problem on
the line whose optimum has the hyperbolic-tangent feedback closed form.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import conditions as cond
from . import geometry as geo
from . import variations as var
from .adjoint import assemble_frame_matrices, build_parallel_frame, solve_first_adjoint
from .dynamics import (ControlGrid, ControlProblem, FiniteSet, OpenBox, SmoothControl,
                       apriori_bounds_check, integrate_many, integrate_trajectory)
from .reports import ConditionReport, ReportBundle, VERDICT_HOLDS, VERDICT_INCONCLUSIVE


class BudgetError(Exception):
    """Brute-force enumeration would exceed the stated budget."""


class ScenarioError(Exception):
    """Malformed or unsupported scenario specification."""


# ---------------------------------------------------------------------------
# builtin problems


def hyperbolic_discrete_problem(R=1.0, y0=(0.5, 0.0), T=1.0, controls=(1.0, 2.0, 3.0, 4.0)):
    """Rotation flow with radially decaying speed on the hyperbolic sheet, finite control set.

    The state derivative of the field has a closed form, attached as the
    analytic evaluator; second derivatives are synthesized.
    """
    chart = geo.hyperbolic_chart(R)
    R2 = float(R) ** 2

    def f(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = R2 + np.sum(x * x, axis=-1)
        amp = (u ** 3) * np.exp(-w)
        return np.stack([amp * x[..., 1], -amp * x[..., 0]], axis=-1)

    def f0(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = R2 + np.sum(x * x, axis=-1)
        return (u ** 2) * np.exp(-w)

    def dxf(t, x, u):
        x = np.asarray(x, dtype=float)
        u = float(np.asarray(u))
        x1, x2 = x[0], x[1]
        w = R2 + x1 * x1 + x2 * x2
        amp = (u ** 3) * math.exp(-w)
        return amp * np.array([
            [-2 * x1 * x2 - x1 * x2 / R2, -2 * x2 * x2 + 1 + x1 * x1 / R2],
            [2 * x1 * x1 - x2 * x2 / R2 - 1, 2 * x1 * x2 + x1 * x2 / R2],
        ])

    def dxf0(t, x, u):
        x = np.asarray(x, dtype=float)
        u = float(np.asarray(u))
        w = R2 + x[0] ** 2 + x[1] ** 2
        return -2.0 * (u ** 2) * math.exp(-w) * x

    return ControlProblem(chart=chart, T=float(T), y0=np.asarray(y0, dtype=float),
                          f=f, f0=f0, control_set=FiniteSet(values=tuple(float(u) for u in controls)),
                          dxf=dxf, dxf0=dxf0, name="hyperbolic_discrete")


def sphere_needle_problem(y0=(math.pi / 2, 0.0), T=1.0, controls=(1.0, 2.0, 3.0)):
    """A smooth finite-set flow on the sphere used for spike-variation sweeps."""
    chart = geo.sphere_chart()

    def f(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        th, ph = x[..., 0], x[..., 1]
        return np.stack([0.2 * u * np.cos(0.5 * ph), 0.3 * u * np.sin(th)], axis=-1)

    def f0(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return (u ** 2) * (1.0 + 0.3 * np.cos(x[..., 0]))

    return ControlProblem(chart=chart, T=float(T), y0=np.asarray(y0, dtype=float),
                          f=f, f0=f0, control_set=FiniteSet(values=tuple(float(u) for u in controls)),
                          name="sphere_needle")


def geodesic_energy_problem(chart_name="sphere", y0=None, heading=None, arc=0.5 * math.pi,
                            T=1.0, y1=None, box=12.0):
    """Velocity-frame flow whose cost is half the squared speed; extremals are geodesics.

    On the sphere the frame fields are the unit longitude/colatitude fields,
    so the equator extremal carries a constant control.  The base control is
    built either from (y0, heading, arc) directly, or from (y0, y1) through
    the log map, refusing endpoints at or beyond the injectivity guard.
    """
    if chart_name == "sphere":
        chart = geo.sphere_chart()

        def f(t, x, u):
            x = np.asarray(x, dtype=float)
            u = np.asarray(u, dtype=float)
            th = x[..., 0]
            u1 = u[..., 0] if u.ndim == x.ndim else u[0]
            u2 = u[..., 1] if u.ndim == x.ndim else u[1]
            return np.stack([u2 * np.ones_like(th), u1 / np.sin(th)], axis=-1)

        def f0(t, x, u):
            u = np.asarray(u, dtype=float)
            return 0.5 * np.sum(u * u, axis=-1)

        def dxf(t, x, u):
            th = float(np.asarray(x, dtype=float)[0])
            u = np.asarray(u, dtype=float)
            return np.array([[0.0, -u[0] * math.cos(th)], [0.0, u[1] / math.tan(th)]])

        def duf(t, x, u):
            th = float(np.asarray(x, dtype=float)[0])
            return np.array([[0.0, 1.0], [1.0 / math.sin(th), 0.0]])

        def dudxf(t, x, u):
            th = float(np.asarray(x, dtype=float)[0])
            out = np.zeros((2, 2, 2))
            out[0, 1, 0] = -math.cos(th)
            out[1, 1, 1] = 1.0 / math.tan(th)
            return out

        problem = ControlProblem(
            chart=chart, T=float(T),
            y0=np.asarray(y0 if y0 is not None else (math.pi / 2, 0.0), dtype=float),
            f=f, f0=f0, control_set=OpenBox(lower=[-box, -box], upper=[box, box]),
            dxf=dxf, dxf0=lambda t, x, u: np.zeros(2),
            dx2f0=lambda t, x, u: np.zeros((2, 2)),
            duf=duf, duf0=lambda t, x, u: np.asarray(u, dtype=float),
            du2f=lambda t, x, u: np.zeros((2, 2, 2)), du2f0=lambda t, x, u: np.eye(2),
            dudxf=dudxf, dudxf0=lambda t, x, u: np.zeros((2, 2)),
            name="geodesic_energy_sphere")
    elif chart_name == "hyperbolic":
        chart = geo.hyperbolic_chart(1.0)

        def f(t, x, u):
            x = np.asarray(x, dtype=float)
            u = np.asarray(u, dtype=float)
            if u.ndim < x.ndim:
                u = np.broadcast_to(u, x.shape)
            return u.astype(float)

        def f0(t, x, u):
            x = np.asarray(x, dtype=float)
            u = np.asarray(u, dtype=float)
            if u.ndim < x.ndim:
                u = np.broadcast_to(u, x.shape)
            h = chart.metric(x)
            return 0.5 * np.einsum("...i,...ij,...j->...", u, h, u)

        problem = ControlProblem(
            chart=chart, T=float(T),
            y0=np.asarray(y0 if y0 is not None else (0.0, 0.0), dtype=float),
            f=f, f0=f0, control_set=OpenBox(lower=[-box, -box], upper=[box, box]),
            name="geodesic_energy_hyperbolic")
    else:
        raise ScenarioError(f"no geodesic-energy variant for chart '{chart_name}'")

    # construct the extremal control
    if y1 is not None:
        hint = chart.injectivity_hint or np.inf
        v = geo.log_map(chart, problem.y0, np.asarray(y1, dtype=float))
        speed = geo.norm(chart, problem.y0, v.components)
        if speed >= hint:
            raise ScenarioError("terminal point at or beyond the injectivity guard")
        arc = speed
        heading = v.components / speed
        problem.y1 = np.asarray(y1, dtype=float)
    if heading is None:
        heading = np.array([0.0, 1.0]) if chart_name == "sphere" else np.array([1.0, 0.0])
    heading = np.asarray(heading, dtype=float)
    heading = heading / geo.norm(chart, problem.y0, heading)
    C = float(arc) / float(T)
    equatorial = (chart_name == "sphere" and abs(problem.y0[0] - math.pi / 2) < 1e-12
                  and abs(heading[0]) < 1e-12)
    if equatorial:
        # the longitude-field coefficient is constant along the equator
        base_control = ControlGrid(T=float(T), values=np.array([[heading[1] * C, 0.0]]))
    else:
        gpath = geo.geodesic(chart, problem.y0, heading * C, float(T), step=1e-3)
        if chart_name == "sphere":
            def ufn(t, gpath=gpath):
                p = gpath.point_at(t)
                v = gpath.velocity_at(t)
                return np.array([v[1] * math.sin(p[0]), v[0]])
        else:
            def ufn(t, gpath=gpath):
                return gpath.velocity_at(t)
        base_control = SmoothControl(T=float(T), fn=ufn, label="geodesic_velocity")
    if problem.y1 is None:
        end, _, _, _ = geo._exp_many(chart, problem.y0[None, :], (heading * arc)[None, :], step=1e-3)
        problem.y1 = end[0]
    return problem, base_control


def flat_lq_problem(T=1.0, y0=1.0):
    """Scalar linear flow with quadratic cost; the optimum has a tanh feedback closed form."""
    chart = geo.euclidean_chart(1)

    def f(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if u.ndim < x.ndim:
            u = u[..., None]
        return np.broadcast_to(u, x.shape).astype(float)

    def f0(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        uu = u[..., 0] if u.ndim == x.ndim else u
        return 0.5 * (x[..., 0] ** 2 + uu ** 2)

    problem = ControlProblem(
        chart=chart, T=float(T), y0=np.atleast_1d(np.asarray(y0, dtype=float)),
        f=f, f0=f0, control_set=OpenBox(lower=[-20.0], upper=[20.0]),
        dxf=lambda t, x, u: np.zeros((1, 1)),
        dxf0=lambda t, x, u: np.array([float(np.asarray(x, dtype=float)[0])]),
        dx2f=lambda t, x, u: np.zeros((1, 1, 1)),
        dx2f0=lambda t, x, u: np.eye(1),
        duf=lambda t, x, u: np.eye(1),
        duf0=lambda t, x, u: np.atleast_1d(np.asarray(u, dtype=float)),
        du2f=lambda t, x, u: np.zeros((1, 1, 1)),
        du2f0=lambda t, x, u: np.eye(1),
        dudxf=lambda t, x, u: np.zeros((1, 1, 1)),
        dudxf0=lambda t, x, u: np.zeros((1, 1)),
        name="flat_lq")
    y0v = float(problem.y0[0])

    def ustar(t, T=float(T)):
        return np.array([-y0v * math.sinh(T - t) / math.cosh(T)])

    return problem, SmoothControl(T=float(T), fn=ustar, label="tanh_feedback")


def brute_force_optimum(problem: ControlProblem, N, step=None, budget=10 ** 6,
                        chunk=4096):
    """Exact minimizer over all piecewise-constant grid controls of a finite set.

    Deterministic lexicographic tie-break: enumeration follows the control
    set's listed order and the first minimum wins.
    """
    if not isinstance(problem.control_set, FiniteSet):
        raise ScenarioError("brute force needs a finite control set")
    values = problem.control_set.values
    total = len(values) ** N
    if total > budget:
        raise BudgetError(f"{total} grid controls exceed the budget {budget}")
    best_cost = np.inf
    best_combo = None
    vals_arr = np.asarray(values, dtype=float)
    combos_iter = itertools.product(range(len(values)), repeat=N)
    buf = []
    for combo in combos_iter:
        buf.append(combo)
        if len(buf) == chunk:
            costs, _ = integrate_many(problem, vals_arr[np.asarray(buf)], step=step)
            k = int(np.argmin(costs))
            if costs[k] < best_cost:
                best_cost = float(costs[k])
                best_combo = buf[k]
            buf = []
    if buf:
        costs, _ = integrate_many(problem, vals_arr[np.asarray(buf)], step=step)
        k = int(np.argmin(costs))
        if costs[k] < best_cost:
            best_cost = float(costs[k])
            best_combo = buf[k]
    control = ControlGrid(T=problem.T, values=vals_arr[np.asarray(best_combo)])
    return control, best_cost


# ---------------------------------------------------------------------------
# scenario specifications


_PROBLEM_BUILDERS = {
    "hyperbolic_discrete": hyperbolic_discrete_problem,
    "sphere_needle": sphere_needle_problem,
    "geodesic_energy": geodesic_energy_problem,
    "flat_lq": flat_lq_problem,
}

_TOP_KEYS = {"schema", "name", "problem", "N", "solver", "seed", "tolerances"}


@dataclass
class ScenarioSpec:
    """A validated scenario: builtin problem, grid size, solver knobs, seed."""

    name: str
    builtin: str
    params: dict
    N: int = 4
    step: float = 1e-3
    fd_step: float = 1e-5
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(doc: dict) -> "ScenarioSpec":
        unknown = set(doc) - _TOP_KEYS
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
        if doc.get("schema") != 1:
            raise ScenarioError("scenario schema must be 1")
        prob = doc.get("problem")
        if not isinstance(prob, dict) or "builtin" not in prob:
            raise ScenarioError("scenario needs problem.builtin")
        if set(prob) - {"builtin", "params"}:
            raise ScenarioError("problem accepts only 'builtin' and 'params'")
        builtin = prob["builtin"]
        if builtin not in _PROBLEM_BUILDERS:
            raise ScenarioError(f"unknown builtin problem '{builtin}'")
        params = dict(prob.get("params", {}))
        solver = dict(doc.get("solver", {}))
        if set(solver) - {"step", "fd_step"}:
            raise ScenarioError("solver accepts only 'step' and 'fd_step'")
        tol = dict(doc.get("tolerances", {}))
        for k, v in tol.items():
            if not (isinstance(v, (int, float)) and v > 0):
                raise ScenarioError(f"tolerance '{k}' must be positive")
        step = float(solver.get("step", 1e-3))
        fd_step = float(solver.get("fd_step", 1e-5))
        if step <= 0 or fd_step <= 0:
            raise ScenarioError("solver steps must be positive")
        return ScenarioSpec(name=str(doc.get("name", builtin)), builtin=builtin,
                            params=params, N=int(doc.get("N", 4)), step=step,
                            fd_step=fd_step, seed=int(doc.get("seed", 0)),
                            tolerances=tol, raw=doc)

    @staticmethod
    def from_json(text: str) -> "ScenarioSpec":
        return ScenarioSpec.from_dict(json.loads(text))

    def build(self):
        """Instantiate (problem, base_control); base may be None for search scenarios."""
        builder = _PROBLEM_BUILDERS[self.builtin]
        try:
            built = builder(**self.params)
        except TypeError as exc:
            raise ScenarioError(f"bad parameters for '{self.builtin}': {exc}") from exc
        if isinstance(built, tuple):
            return built
        return built, None

    def tol(self, key, default):
        return float(self.tolerances.get(key, default))


def scenario_hyperbolic_discrete(**params) -> ScenarioSpec:
    return ScenarioSpec.from_dict({
        "schema": 1, "name": "hyperbolic_discrete",
        "problem": {"builtin": "hyperbolic_discrete", "params": params}})


def scenario_geodesic_energy(**params) -> ScenarioSpec:
    return ScenarioSpec.from_dict({
        "schema": 1, "name": "geodesic_energy",
        "problem": {"builtin": "geodesic_energy", "params": params}})


def scenario_flat_lq(**params) -> ScenarioSpec:
    return ScenarioSpec.from_dict({
        "schema": 1, "name": "flat_lq",
        "problem": {"builtin": "flat_lq", "params": params}})


def scenario_sphere_needle(**params) -> ScenarioSpec:
    return ScenarioSpec.from_dict({
        "schema": 1, "name": "sphere_needle",
        "problem": {"builtin": "sphere_needle", "params": params}})


# ---------------------------------------------------------------------------
# scenario execution


def _finite_value_not(problem, value):
    for v in problem.control_set.values:
        if not np.all(np.asarray(v) == np.asarray(value)):
            return v
    return value


def _condition_jobs_hyperbolic(spec, problem, base, psi, mats, crit):
    """Independent condition evaluators for the finite-set scenario."""
    jobs = []

    def job_max():
        return cond.max_principle_residual(problem, base, psi)

    def job_pointwise():
        worst = -np.inf
        witness = []
        for k, t in enumerate(crit.grid):
            for i in crit.indices[k]:
                v = problem.control_set.values[i]
                val = cond.pointwise_necessary_lhs(problem, base, psi, mats.second, t, v,
                                                   crit=crit)
                if val > worst:
                    worst = val
                    witness = [{"t": float(t), "v": np.asarray(v).tolist()}]
        return ConditionReport.from_upper_bound(
            "pointwise_necessary", worst, spec.tol("pointwise", 1e-8), witnesses=witness)

    def job_integral():
        controls = crit.critical_grid_controls(spec.N)
        worst = -np.inf
        witness = []
        for ctrl in controls:
            val = cond.integral_necessary_lhs(problem, base, psi, mats, ctrl, crit=crit,
                                              step=spec.step)
            if val > worst:
                worst = val
                witness = [{"values": np.asarray(ctrl.values).tolist()}]
        return ConditionReport.from_upper_bound(
            "integral_necessary", worst, spec.tol("integral", 1e-8), witnesses=witness)

    def job_apriori():
        rep = apriori_bounds_check(problem, base.control, seed=spec.seed, step=spec.step)
        value = -min(rep.growth_margin, rep.perturbation_margin)
        return ConditionReport.from_upper_bound(
            "apriori_bounds", value, 1e-9,
            witnesses=[{"L": rep.L, "growth_margin": rep.growth_margin,
                        "perturbation_margin": rep.perturbation_margin}])

    jobs = [("max_principle", job_max), ("pointwise", job_pointwise),
            ("integral", job_integral), ("apriori", job_apriori)]
    return jobs


def _run_jobs(jobs):
    """Evaluate independent condition jobs concurrently, assemble deterministically by id."""
    from concurrent.futures import ThreadPoolExecutor

    if len(jobs) <= 1:
        results = [fn() for _, fn in jobs]
    else:
        with ThreadPoolExecutor(max_workers=min(4, len(jobs))) as pool:
            futures = [(name, pool.submit(fn)) for name, fn in jobs]
            results = [f.result() for _, f in futures]
    return sorted(results, key=lambda r: r.id)


def run_scenario(spec: ScenarioSpec, include_slopes=False) -> ReportBundle:
    """Integrate the scenario, solve the dual systems, and evaluate the applicable conditions."""
    built = spec.build()
    problem, base_control = built
    bundle = ReportBundle(name=spec.name, scenario=spec.raw)

    if spec.builtin == "hyperbolic_discrete":
        base_control, best_cost = brute_force_optimum(problem, spec.N, step=spec.step)
        base = integrate_trajectory(problem, base_control, step=spec.step)
        frame = build_parallel_frame(base)
        psi = solve_first_adjoint(problem, base, nu=-1.0, psi1=np.zeros(problem.chart.dim),
                                  frame=frame)
        mats = assemble_frame_matrices(problem, base, psi)
        crit = cond.critical_set(problem, base, psi)
        bundle.conditions = _run_jobs(_condition_jobs_hyperbolic(spec, problem, base, psi,
                                                                 mats, crit))
        from .distance import lipschitz_equivalence_sampler
        lips = {}
        for u in problem.control_set.values:
            rep_f = lipschitz_equivalence_sampler(
                problem.chart, lambda p, u=u: problem.f(0.0, p, u), ((-2.0, -2.0), (2.0, 2.0)),
                n_pairs=2000, n_grad_points=100, seed=spec.seed, kind="vector")
            derivs = cond.ProblemDerivatives(problem)
            rep_df = lipschitz_equivalence_sampler(
                problem.chart, lambda p, u=u: derivs.A(0.0, p, u), ((-2.0, -2.0), (2.0, 2.0)),
                n_pairs=1000, n_grad_points=60, seed=spec.seed, kind="matrix")
            lips[f"u={u:g}"] = {"field_ratio": rep_f.max_ratio, "field_grad": rep_f.max_grad,
                                "derivative_ratio": rep_df.max_ratio,
                                "derivative_grad": rep_df.max_grad}
        bundle.extras["lipschitz_samples"] = lips
        bundle.extras["brute_force"] = {"cost": best_cost,
                                        "values": np.asarray(base_control.values).tolist()}
        bundle.trajectory_summary = {"cost": base.cost,
                                     "terminal": base.terminal.tolist()}
        if include_slopes:
            rep = var.verify_needle_taylor(problem, base,
                                           _finite_value_not(problem, base_control.values[0]),
                                           step=spec.step)
            bundle.slope_tables["needle"] = rep

    elif spec.builtin == "sphere_needle":
        N = spec.N
        vals = np.array([problem.control_set.values[0]] * N)
        base_control = ControlGrid(T=problem.T, values=vals)
        base = integrate_trajectory(problem, base_control, step=spec.step)
        bundle.trajectory_summary = {"cost": base.cost, "terminal": base.terminal.tolist()}
        rep = apriori_bounds_check(problem, base_control, seed=spec.seed, step=spec.step)
        bundle.conditions = [ConditionReport.from_upper_bound(
            "apriori_bounds", -min(rep.growth_margin, rep.perturbation_margin), 1e-9,
            witnesses=[{"L": rep.L}])]
        if include_slopes:
            repn = var.verify_needle_taylor(problem, base,
                                            _finite_value_not(problem, vals[0]), step=spec.step)
            bundle.slope_tables["needle"] = repn

    elif spec.builtin == "geodesic_energy":
        base = integrate_trajectory(problem, base_control, step=spec.step)
        frame = build_parallel_frame(base)
        chart = problem.chart
        psi1 = geo.lower_vector(chart, base.terminal, base.velocity[-1])
        psi = solve_first_adjoint(problem, base, nu=-1.0, psi1=psi1, frame=frame)
        jobs = []

        def job_stationarity():
            val = cond.stationarity_residual(problem, base, psi, nu=-1.0)
            return ConditionReport.from_upper_bound(
                "stationarity_residual", val, spec.tol("stationarity", 1e-6))

        def job_geodesic():
            val = cond.geodesic_residual(problem, base)
            return ConditionReport.from_upper_bound(
                "geodesic_residual", val, spec.tol("geodesic_residual", 1e-8))

        def job_maxp():
            return cond.max_principle_residual(problem, base, psi, stride=len(base.grid) // 16)

        def job_second_variation():
            fields = cond.seeded_variation_fields(frame, 50, problem.T, seed=spec.seed)
            worst = np.inf
            witness = []
            for i, V in enumerate(fields):
                val = cond.second_variation_of_energy(chart, base, V)
                if val < worst:
                    worst = val
                    witness = [{"field": i, "value": val}]
            return ConditionReport.from_upper_bound(
                "second_variation_energy", -worst, spec.tol("second_variation", 1e-8),
                witnesses=witness)

        def job_endpoint():
            fields = cond.seeded_variation_fields(frame, 20, problem.T, seed=spec.seed + 1)
            worst = -np.inf
            worst_gap = 0.0
            for V0 in fields:
                xi = cond.kernel_direction_from_variation(problem, base, frame, V0)
                V, gap = cond.kernel_membership(problem, base, xi, frame=frame)
                worst_gap = max(worst_gap, gap)
                val = cond.endpoint_hessian_form(problem, base, psi, -1.0, xi, V)
                worst = max(worst, val)
            rep = ConditionReport.from_upper_bound(
                "endpoint_hessian", worst, spec.tol("endpoint_hessian", 1e-8),
                witnesses=[{"worst_kernel_gap": worst_gap}])
            return rep

        def job_rank():
            rank, svals = cond.multiplier_rank_probe(problem, base, frame=frame)
            n = problem.chart.dim
            verdict = VERDICT_HOLDS if rank == n else VERDICT_INCONCLUSIVE
            return ConditionReport(id="multiplier_corank_one", value=float(rank), tol=float(n),
                                   verdict=verdict,
                                   witnesses=[{"singular_values": svals.tolist()}])

        jobs = [("stationarity", job_stationarity), ("geodesic", job_geodesic),
                ("maxp", job_maxp), ("second_variation", job_second_variation),
                ("endpoint", job_endpoint), ("rank", job_rank)]
        bundle.conditions = _run_jobs(jobs)
        bundle.trajectory_summary = {"cost": base.cost, "terminal": base.terminal.tolist()}
        if include_slopes:
            rng = np.random.default_rng(spec.seed)
            coeff = rng.normal(size=(3, problem.control_dim))

            def vdir(t, coeff=coeff):
                ks = np.arange(1, 4)
                return np.einsum("k,kd->d", np.sin(ks * math.pi * t / problem.T), coeff)

            repc = var.verify_classical_expansion(problem, base, vdir, step=spec.step)
            bundle.slope_tables["classical"] = repc

    elif spec.builtin == "flat_lq":
        base = integrate_trajectory(problem, base_control, step=spec.step)
        frame = build_parallel_frame(base)
        psi = solve_first_adjoint(problem, base, nu=-1.0, psi1=np.zeros(1), frame=frame)
        mats = assemble_frame_matrices(problem, base, psi)

        def job_maxp():
            rep = cond.max_principle_residual(problem, base, psi)
            rep.tol = spec.tol("max_principle", 1e-6)
            rep.verdict = VERDICT_HOLDS if rep.value <= rep.tol else "violated"
            return rep

        def job_stationarity():
            val = cond.stationarity_residual(problem, base, psi, nu=-1.0)
            return ConditionReport.from_upper_bound(
                "stationarity_residual", val, spec.tol("stationarity", 1e-6))

        def job_scan():
            return cond.sufficient_margin_scan(problem, base, psi, mats,
                                               beta=spec.tol("beta", 0.02), eps0=0.25,
                                               n_samples=40, seed=spec.seed, step=spec.step)

        bundle.conditions = _run_jobs([("maxp", job_maxp), ("stationarity", job_stationarity),
                                       ("scan", job_scan)])
        bundle.trajectory_summary = {"cost": base.cost, "terminal": base.terminal.tolist()}
        if include_slopes:
            repc = var.verify_classical_expansion(problem, base,
                                                  lambda t: np.array([math.sin(2 * t) + 0.3]),
                                                  step=spec.step)
            bundle.slope_tables["classical"] = repc
    else:
        raise ScenarioError(f"no runner for builtin '{spec.builtin}'")
    return bundle
