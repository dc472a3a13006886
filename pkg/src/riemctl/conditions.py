"""Evaluators for the first- and second-order optimality conditions.

Free-endpoint side: the maximum-principle excess, the critical control
sets, the integral and pointwise second-order forms (both carry the
second-order dual form W and the transition matrices), and the sufficiency
margin scan in the control-difference metric.  Fixed-endpoint side: the
stationarity residual, kernel membership of the linearized endpoint map,
and the endpoint Hessian form with its curvature term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import geometry as geo
from .adjoint import (CotangentPath, FrameField, FrameMatrices, HamiltonianTools,
                      SecondOrderDual, build_parallel_frame, march_along)
from .dynamics import (ControlGrid, ControlProblem, FiniteSet, OpenBox, PatchedControl,
                       ProblemDerivatives, Trajectory, ekeland_distance, integrate_trajectory)
from .numerics import fit_loglog_slope, hermite_eval, simpson_uniform
from .reports import ConditionReport, VERDICT_HOLDS, VERDICT_INCONCLUSIVE, VERDICT_VIOLATED
from .variations import TangentPath, march_with_control


class PreconditionError(Exception):
    """A condition evaluator was invoked outside its stated precondition."""


def default_tol_H(problem, base, psi, nu=-1.0) -> float:
    """Numeric thickness for the equal-Hamiltonian set: 1e-7 (1 + |H(ubar)|) at the worst node."""
    ham = HamiltonianTools(problem)
    hmax = 0.0
    for k in range(0, len(base.grid), max(1, len(base.grid) // 64)):
        t = base.grid[k]
        hmax = max(hmax, abs(ham.value(t, base.points[k], psi.chart_at(t),
                                       base.control_at(t), nu)))
    return 1e-7 * (1.0 + hmax)


def _check_nodes(base, stride=None):
    K = len(base.grid)
    stride = max(1, K // 200) if stride is None else stride
    idx = list(range(0, K, stride))
    if idx[-1] != K - 1:
        idx.append(K - 1)
    return idx


def _box_argmax(ham, t, y, p, nu, box: OpenBox, grid_points=33, refinements=10):
    """Hamiltonian maximizer over a box: dense axis grid then Newton polish on the gradient."""
    axes = [np.linspace(box.lower[a], box.upper[a], grid_points) for a in range(box.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    cands = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    vals = np.array([ham.value(t, y, p, u, nu) for u in cands])
    u = cands[int(np.argmax(vals))].astype(float)
    for _ in range(refinements):
        gu = ham.du(t, y, p, u, nu)
        Hu = ham.du2(t, y, p, u, nu)
        try:
            stepv = np.linalg.solve(Hu, gu)
        except np.linalg.LinAlgError:
            break
        u_new = np.clip(u - stepv, box.lower + 1e-12, box.upper - 1e-12)
        if ham.value(t, y, p, u_new, nu) >= ham.value(t, y, p, u, nu):
            u = u_new
        else:
            break
    return u, ham.value(t, y, p, u, nu)


def max_principle_residual(problem: ControlProblem, base: Trajectory, psi: CotangentPath,
                           nu=-1.0, stride=None) -> ConditionReport:
    """Worst positive excess of the Hamiltonian over the control set along the base."""
    ham = HamiltonianTools(problem)
    worst = -np.inf
    witness = None
    for k in _check_nodes(base, stride):
        t = base.grid[k]
        y = base.points[k]
        p = psi.chart_at(t)
        ubar = base.control_at(t)
        h_bar = ham.value(t, y, p, ubar, nu)
        if isinstance(problem.control_set, FiniteSet):
            best_u, best = None, -np.inf
            for u in problem.control_set.values:
                hv = ham.value(t, y, p, u, nu)
                if hv > best:
                    best, best_u = hv, u
        else:
            best_u, best = _box_argmax(ham, t, y, p, nu, problem.control_set)
        excess = best - h_bar
        if excess > worst:
            worst = excess
            witness = {"t": float(t), "u": np.asarray(best_u).tolist(),
                       "H_ubar": h_bar, "H_best": best}
    return ConditionReport.from_upper_bound("max_principle_excess", worst, 1e-8,
                                            witnesses=[witness] if witness else [])


@dataclass
class CriticalControlSet:
    """Per-node subsets of the finite control set achieving the base Hamiltonian value."""

    grid: np.ndarray
    indices: list           # list over nodes of index tuples into control_set.values
    tol_H: float
    control_set: FiniteSet

    def at_time(self, t):
        k = int(np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, len(self.grid) - 1))
        return self.indices[k]

    def is_critical_value(self, t, v) -> bool:
        vals = self.control_set.values
        for i in self.at_time(t):
            if np.all(np.asarray(vals[i]) == np.asarray(v)):
                return True
        return False

    def critical_grid_controls(self, n_intervals, limit=4096):
        """All piecewise-constant controls whose value is critical on every interval."""
        import itertools
        T = self.grid[-1]
        edges = np.linspace(0.0, T, n_intervals + 1)
        per_interval = []
        for k in range(n_intervals):
            mask = (self.grid >= edges[k] - 1e-12) & (self.grid <= edges[k + 1] + 1e-12)
            idx_sets = [set(self.indices[i]) for i in np.nonzero(mask)[0]]
            common = set.intersection(*idx_sets) if idx_sets else set()
            per_interval.append(sorted(common))
        combos = list(itertools.product(*per_interval))
        if len(combos) > limit:
            raise PreconditionError(f"too many critical grid controls ({len(combos)})")
        vals = self.control_set.values
        out = []
        for combo in combos:
            out.append(ControlGrid(T=T, values=np.array([vals[i] for i in combo])))
        return out


def critical_set(problem: ControlProblem, base: Trajectory, psi: CotangentPath,
                 tol_H=None, nu=-1.0, stride=None) -> CriticalControlSet:
    """Controls whose Hamiltonian ties the base control, within the stated thickness."""
    if not isinstance(problem.control_set, FiniteSet):
        raise PreconditionError("critical sets are computed for finite control sets only")
    tol = default_tol_H(problem, base, psi, nu) if tol_H is None else float(tol_H)
    ham = HamiltonianTools(problem)
    idx = _check_nodes(base, stride)
    grid = base.grid[idx]
    out = []
    for k in idx:
        t = base.grid[k]
        y = base.points[k]
        p = psi.chart_at(t)
        h_bar = ham.value(t, y, p, base.control_at(t), nu)
        members = tuple(i for i, u in enumerate(problem.control_set.values)
                        if abs(ham.value(t, y, p, u, nu) - h_bar) <= tol)
        out.append(members)
    return CriticalControlSet(grid=grid, indices=out, tol_H=tol,
                              control_set=problem.control_set)


# ---------------------------------------------------------------------------
# second-order integral form (free endpoint)


def integral_necessary_lhs(problem: ControlProblem, base: Trajectory, psi: CotangentPath,
                           mats: FrameMatrices, u, nu=-1.0, check_critical=True,
                           crit: Optional[CriticalControlSet] = None, step=None) -> float:
    """The double-integral second-order form for a comparison control, frame-matrix route.

    Accumulates z' = PhiInv F1(t, u(t)) alongside the outer integrand
    q(t) . Phi(t) z(t) with q = -(1/2)(W + W^T) F1 + delta dH; the returned
    value carries the sign for which optimality asserts <= 0.
    """
    if check_critical:
        cs = crit or critical_set(problem, base, psi)
        for k, t in enumerate(cs.grid):
            uv = u.value_at(min(t, problem.T * (1 - 1e-15)))
            if not cs.is_critical_value(t, uv):
                raise PreconditionError(
                    f"comparison control leaves the critical set at t={t:.6g} (value {uv!r})")
    ham = HamiltonianTools(problem, mats.derivs)
    n = problem.chart.dim

    def rhs(t, y, uv, state):
        z = state[:n]
        ubar = base.control_at(t)
        F1 = mats.F1_at(t, uv)
        W = mats.second.W_at(t)
        p = psi.chart_at(t)
        dH = ham.dx(t, y, p, ubar, nu) - ham.dx(t, y, p, uv, nu)
        E = mats.frame.e_at(t)
        q = -0.5 * (W + W.T) @ F1 + E @ dH
        Phi = mats.transition.Phi_at(t)
        PhiInv = mats.transition.PhiInv_at(t)
        dz = PhiInv @ F1
        dacc = float(q @ (Phi @ z))
        return np.concatenate([dz, [dacc]])

    # both the inner state and the accumulator are frozen wherever the
    # comparison control matches the base control, so only active segments
    # are integrated
    step = 2e-3 if step is None else step
    state = np.zeros(n + 1)
    base_segments = base.control.segments()

    def matches_base(a, b, uval):
        for (ba, bb, bval) in base_segments:
            if a >= ba - 1e-12 and b <= bb + 1e-12:
                if callable(uval) or callable(bval):
                    return uval is bval
                return np.array_equal(np.atleast_1d(np.asarray(uval)),
                                      np.atleast_1d(np.asarray(bval)))
        return False

    for (a, b, uval) in u.segments():
        if matches_base(a, b, uval):
            continue
        n_steps = max(2, int(math.ceil((b - a) / step)))
        h = (b - a) / n_steps
        t = a
        for _ in range(n_steps):
            u0 = uval(t) if callable(uval) else uval
            um = uval(t + 0.5 * h) if callable(uval) else uval
            u1 = uval(t + h) if callable(uval) else uval
            k1 = rhs(t, base.point_at(t), u0, state)
            k2 = rhs(t + 0.5 * h, base.point_at(t + 0.5 * h), um, state + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, base.point_at(t + 0.5 * h), um, state + 0.5 * h * k2)
            k4 = rhs(t + h, base.point_at(t + h), u1, state + h * k3)
            state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
    return -float(state[n])


def _prefix_integral(carry, h):
    """Fourth-order running integral of samples on a uniform grid (odd count)."""
    K = carry.shape[0]
    prefix = np.zeros_like(carry)
    for k in range(2, K, 2):
        prefix[k] = prefix[k - 2] + (h / 3.0) * (carry[k - 2] + 4.0 * carry[k - 1] + carry[k])
    for k in range(1, K, 2):
        # local three-point Newton-Cotes over [t_{k-1}, t_k]
        kk = min(k + 1, K - 1)
        prefix[k] = prefix[k - 1] + (h / 12.0) * (5.0 * carry[k - 1] + 8.0 * carry[k] - carry[kk])
    return prefix


def integral_necessary_lhs_tensor(problem: ControlProblem, base: Trajectory,
                                  psi: CotangentPath, mats: FrameMatrices, u,
                                  nu=-1.0, nodes_per_segment=129) -> float:
    """The same double integral assembled from chart-component tensors and explicit transports.

    Independent of the frame-matrix accumulation route: the fundamental
    tensors are expressed in chart components, comparison-field differences
    are carried between times through transport matrices built from the
    parallel frame, and both time integrals are prefix/composite Simpson
    sums per control segment.
    """
    ham = HamiltonianTools(problem, mats.derivs)
    chart = problem.chart
    frame = mats.frame
    total = 0.0
    prefix_carry = np.zeros(chart.dim)
    if nodes_per_segment % 2 == 0:
        nodes_per_segment += 1
    for (a, b, uval) in u.segments():
        ts = np.linspace(a, b, nodes_per_segment)
        h = ts[1] - ts[0]
        carry = np.empty((len(ts), chart.dim))
        outer = np.empty(len(ts))
        cached = []
        for k, t in enumerate(ts):
            tq = min(t, problem.T * (1 - 1e-15))
            y = base.point_at(t)
            E = frame.e_at(t)        # rows e_i
            D = frame.dual_at(t)     # rows d_i
            Ecol = E.T
            Phi_ch = E.T @ mats.transition.Phi_at(t) @ E
            Phi1_ch = D.T @ mats.transition.PhiInv_at(t) @ D
            uv = uval(t) if callable(uval) else uval
            ubar = base.control_at(tq)
            fu = np.asarray(problem.f(t, y, uv), dtype=float)
            fb = np.asarray(problem.f(t, y, ubar), dtype=float)
            df = fu - fb
            carry[k] = E @ Phi1_ch @ df
            p = psi.chart_at(t)
            dH_diff = ham.dx(t, y, p, uv, nu) - ham.dx(t, y, p, ubar, nu)
            w = mats.second.w_chart_at(t)
            cached.append((df, dH_diff, w, Phi_ch, Ecol))
        prefix = prefix_carry[None, :] + _prefix_integral(carry, h)
        for k in range(len(ts)):
            df, dH_diff, w, Phi_ch, Ecol = cached[k]
            Xi = Phi_ch @ np.linalg.solve(Ecol.T, prefix[k])
            outer[k] = float(dH_diff @ Xi) + 0.5 * float(df @ (w + w.T) @ Xi)
        total += float(simpson_uniform(outer, h))
        prefix_carry = prefix[-1]
    return total


def pointwise_necessary_lhs(problem: ControlProblem, base: Trajectory, psi: CotangentPath,
                            second: SecondOrderDual, t, v, nu=-1.0, check_critical=True,
                            crit: Optional[CriticalControlSet] = None) -> float:
    """The pointwise second-order form at time t for a tied control value v."""
    if check_critical:
        cs = crit or critical_set(problem, base, psi)
        if not cs.is_critical_value(t, v):
            raise PreconditionError(f"control value {v!r} is not critical at t={t:.6g}")
    ham = HamiltonianTools(problem)
    y = base.point_at(t)
    ubar = base.control_at(min(t, problem.T * (1 - 1e-15)))
    fb = np.asarray(problem.f(t, y, ubar), dtype=float)
    fv = np.asarray(problem.f(t, y, v), dtype=float)
    delta = fb - fv
    wsym = second.w_sym_chart_at(t)
    p = psi.chart_at(t)
    dH = ham.dx(t, y, p, ubar, nu) - ham.dx(t, y, p, v, nu)
    return float(delta @ wsym @ delta + dH @ delta)


def sufficient_margin_scan(problem: ControlProblem, base: Trajectory, psi: CotangentPath,
                           mats: FrameMatrices, beta, eps0, n_samples=200, seed=0,
                           nu=-1.0, step=None, anchor_fraction=0.7,
                           offset_range=(0.5, 3.0)) -> ConditionReport:
    """Sampled sufficiency margin: the integral form against -beta d(u, ubar)^2, plus direct costs.

    Samples patched controls with difference measure below eps0, requires
    lhs <= -beta d^2 for each, and independently confirms J(u) >= J(ubar) by
    integration.  Patch anchors stay in the first ``anchor_fraction`` of the
    horizon and box-control patch values sit a bounded offset away from the
    base value; the family parameters are recorded in the witnesses.
    """
    rng = np.random.default_rng(seed)
    T = problem.T
    worst_margin = -np.inf
    worst_cost_gap = -np.inf
    witness = []
    for s in range(n_samples):
        n_patch = int(rng.integers(1, 4))
        widths = rng.uniform(0.1, 0.3, size=n_patch) * eps0 / n_patch
        starts = np.sort(rng.uniform(0.0, anchor_fraction * T - max(widths), size=n_patch))
        patches = []
        cursor = 0.0
        for a, wdt in zip(starts, widths):
            a = max(a, cursor)
            b = min(a + wdt, T)
            if b <= a:
                continue
            if isinstance(problem.control_set, FiniteSet):
                cur = base.control.value_at(0.5 * (a + b))
                options = [u for u in problem.control_set.values
                           if not np.all(np.asarray(u) == np.asarray(cur))]
                val = options[int(rng.integers(0, len(options)))]
            else:
                box = problem.control_set
                cur = np.atleast_1d(np.asarray(base.control.value_at(0.5 * (a + b)), dtype=float))
                offs = rng.uniform(*offset_range, size=cur.size) * rng.choice([-1.0, 1.0],
                                                                              size=cur.size)
                val = np.clip(cur + offs, box.lower + 1e-9, box.upper - 1e-9)
            patches.append((float(a), float(b), val))
            cursor = b
        if not patches:
            continue
        u = PatchedControl(base=base.control, patches=tuple(patches))
        d = ekeland_distance(u, base.control)
        if d <= 0 or d >= eps0:
            continue
        lhs = integral_necessary_lhs(problem, base, psi, mats, u, nu=nu,
                                     check_critical=False, step=step)
        margin = lhs + beta * d * d
        traj = integrate_trajectory(problem, u, step=max(step or 2e-3, 2e-3))
        cost_gap = base.cost - traj.cost  # <= 0 when the base is optimal
        if margin > worst_margin:
            worst_margin = margin
            witness = [{"sample": s, "d": d, "lhs": lhs, "cost_gap": cost_gap,
                        "patches": [(a, b, np.asarray(v).tolist()) for a, b, v in patches]}]
        worst_cost_gap = max(worst_cost_gap, cost_gap)
    witness.append({"family": {"beta": float(beta), "eps0": float(eps0),
                               "anchor_fraction": anchor_fraction,
                               "offset_range": list(offset_range),
                               "n_samples": n_samples}})
    value = max(worst_margin, worst_cost_gap)
    return ConditionReport.from_upper_bound("sufficient_margin_scan", value, 1e-9,
                                            witnesses=witness)


# ---------------------------------------------------------------------------
# fixed-endpoint conditions


def stationarity_residual(problem: ControlProblem, base: Trajectory, psi: CotangentPath,
                          nu, stride=None) -> float:
    """sup over nodes of |dH/du| at the base control (box control sets)."""
    if not isinstance(problem.control_set, OpenBox):
        raise PreconditionError("the stationarity residual needs an open-box control set")
    ham = HamiltonianTools(problem)
    worst = 0.0
    for k in _check_nodes(base, stride):
        t = base.grid[k]
        g = ham.du(t, base.points[k], psi.chart_at(t), base.control_at(t), nu)
        worst = max(worst, float(np.linalg.norm(g)))
    return worst


def kernel_membership(problem: ControlProblem, base: Trajectory, xi,
                      frame: Optional[FrameField] = None,
                      derivs: Optional[ProblemDerivatives] = None,
                      step=None):
    """Integrate the linearized endpoint field for the direction xi; gap = |V(T)|.

    xi is a callable t -> R^m.  Membership in the endpoint kernel holds when
    the terminal norm is below 1e-6 (1 + ||xi||_L2).
    """
    frame = frame or build_parallel_frame(base)
    derivs = derivs or ProblemDerivatives(problem)
    chart = problem.chart
    n = chart.dim

    def rhs(t, y, uv, V):
        g = chart.metric(y)
        E = frame.e_at(t)
        A = derivs.A(t, y, uv)
        F = E @ g @ A @ E.T
        B = derivs.B(t, y, uv)
        return F @ V + E @ (g @ (B @ np.asarray(xi(t), dtype=float)))

    states = march_along(base, rhs, np.zeros(n))
    from .adjoint import nodal_derivatives
    dstates, dend = nodal_derivatives(base, rhs, states)
    V = TangentPath(base=base, frame=frame, grid=base.grid, comps=states, dcomps=dstates,
                    seg_bounds=base.seg_bounds, dcomps_end=dend)
    gap = float(np.linalg.norm(states[-1]))
    return V, gap


def kernel_tolerance(problem, xi, n_nodes=257) -> float:
    ts = np.linspace(0.0, problem.T, n_nodes)
    vals = np.array([np.linalg.norm(np.asarray(xi(t), dtype=float)) ** 2 for t in ts])
    l2 = math.sqrt(max(simpson_uniform(vals, ts[1] - ts[0]), 0.0))
    return 1e-6 * (1.0 + l2)


def kernel_direction_from_variation(problem: ControlProblem, base: Trajectory,
                                    frame: FrameField, Vfield,
                                    derivs: Optional[ProblemDerivatives] = None):
    """The control direction xi(t) realizing a given variation field in the endpoint kernel.

    Solves B_frame(t) xi = V'(t) - F(t) V(t) pointwise; needs the control
    fields to span the tangent space along the base (square invertible
    B_frame at desk scale).
    """
    derivs = derivs or ProblemDerivatives(problem)
    chart = problem.chart

    def xi(t):
        tq = min(t, problem.T * (1 - 1e-15))
        y = base.point_at(t)
        u = base.control_at(tq)
        g = chart.metric(y)
        E = frame.e_at(t)
        A = derivs.A(t, y, u)
        F = E @ g @ A @ E.T
        B = E @ g @ derivs.B(t, y, u)
        rhs = Vfield.frame_deriv_at(t) - F @ Vfield.frame_at(t)
        return np.linalg.solve(B, rhs)

    return xi


def endpoint_hessian_form(problem: ControlProblem, base: Trajectory, psi: CotangentPath,
                          nu, xi, V, check_kernel=True, n_nodes=513) -> float:
    """The endpoint-constrained second-order form for a kernel pair (xi, V).

    Integrand: the control Hessian of the Hamiltonian on (xi, xi), its state
    Hessian on (V, V), twice the mixed term on (V, xi), minus the curvature
    pairing of (raised costate, V, velocity, V).
    """
    if check_kernel:
        gap = float(np.linalg.norm(np.atleast_1d(V.frame_at(problem.T))))
        if gap > kernel_tolerance(problem, xi):
            raise PreconditionError(f"terminal kernel gap {gap:.3e} exceeds tolerance")
    ham = HamiltonianTools(problem)
    chart = problem.chart
    if n_nodes % 2 == 0:
        n_nodes += 1
    ts = np.linspace(0.0, problem.T, n_nodes)
    vals = np.empty(n_nodes)
    for k, t in enumerate(ts):
        tq = min(t, problem.T * (1 - 1e-15))
        y = base.point_at(t)
        u = base.control_at(tq)
        p = psi.chart_at(t)
        xiv = np.asarray(xi(t), dtype=float)
        Vc = V.frame_at(t) @ V.frame.e_at(t)
        du2 = ham.du2(t, y, p, u, nu)
        dx2 = ham.dx2(t, y, p, u, nu)
        dux = ham.dudx(t, y, p, u, nu)
        rlow = geo.lower_curvature(chart, y)
        psi_vec = geo.raise_covector(chart, y, p)
        ydot = np.asarray(problem.f(t, y, u), dtype=float)
        r = float(np.einsum("abcd,a,b,c,d->", rlow, psi_vec, Vc, ydot, Vc))
        vals[k] = (float(xiv @ du2 @ xiv) + float(Vc @ dx2 @ Vc)
                   + 2.0 * float(Vc @ dux @ xiv) - r)
    return float(simpson_uniform(vals, ts[1] - ts[0]))


def geodesic_residual(problem: ControlProblem, base: Trajectory,
                      derivs: Optional[ProblemDerivatives] = None, stride=None) -> float:
    """Max metric norm of the covariant acceleration along the trajectory."""
    derivs = derivs or ProblemDerivatives(problem)
    chart = problem.chart
    worst = 0.0
    for k in _check_nodes(base, stride):
        t = base.grid[k]
        y = base.points[k]
        u = base.control_at(min(t, problem.T * (1 - 1e-15)))
        A = derivs.A(t, y, u)
        acc = A @ base.velocity[k]
        worst = max(worst, geo.norm(chart, y, acc))
    return worst


class FourierVariation:
    """A variation field with sine-series parallel-frame components, vanishing at both ends."""

    def __init__(self, frame: FrameField, coeffs, T):
        self.frame = frame
        self.coeffs = np.asarray(coeffs, dtype=float)  # (modes, n)
        self.T = float(T)

    def frame_at(self, t):
        ks = np.arange(1, self.coeffs.shape[0] + 1)
        phases = np.sin(np.multiply.outer(np.asarray(t, dtype=float), ks) * math.pi / self.T)
        return phases @ self.coeffs

    def frame_deriv_at(self, t):
        ks = np.arange(1, self.coeffs.shape[0] + 1)
        rates = ks * math.pi / self.T
        phases = np.cos(np.multiply.outer(np.asarray(t, dtype=float), ks) * math.pi / self.T) * rates
        return phases @ self.coeffs

    def chart_at(self, t):
        comps = self.frame_at(t)
        E = self.frame.e_at(t)
        return comps @ E if comps.ndim == 1 else np.einsum("...i,...ia->...a", comps, E)


def seeded_variation_fields(frame: FrameField, count, T, seed=0, modes=8, scale=1.0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        coeffs = rng.normal(size=(modes, frame.e.shape[1])) * scale / modes
        out.append(FourierVariation(frame, coeffs, T))
    return out


def second_variation_of_energy(chart, geodesic: Trajectory, V, n_nodes=1025,
                               residual_tol=1e-6, endpoint_tol=1e-9) -> float:
    """Energy second-variation quadratic form along a geodesic for an endpoint-pinned field.

    Integrand: squared covariant derivative of V along the flow plus the
    curvature pairing R(ydot, V, ydot, V); frame components make the first
    term the plain derivative of the component functions.
    """
    V0 = np.atleast_1d(V.frame_at(0.0))
    VT = np.atleast_1d(V.frame_at(geodesic.grid[-1]))
    if np.linalg.norm(V0) > endpoint_tol or np.linalg.norm(VT) > endpoint_tol:
        raise PreconditionError("variation field must vanish at both endpoints")
    if n_nodes % 2 == 0:
        n_nodes += 1
    ts = np.linspace(0.0, geodesic.grid[-1], n_nodes)
    ys = np.atleast_2d(geodesic.point_at(ts))
    ydots = np.stack([geodesic.velocity_at(t) for t in ts])
    E = V.frame.e_at(ts)
    dV = np.atleast_2d(V.frame_deriv_at(ts))
    Vc = np.einsum("ki,kia->ka", np.atleast_2d(V.frame_at(ts)), E)
    rlow = geo.lower_curvature(chart, ys)
    r = np.einsum("kabcd,ka,kb,kc,kd->k", rlow, ydots, Vc, ydots, Vc)
    vals = np.einsum("ki,ki->k", dV, dV) + r
    return float(simpson_uniform(vals, ts[1] - ts[0]))


def abnormal_set_membership(problem: ControlProblem, base: Trajectory, xi, V,
                            derivs: Optional[ProblemDerivatives] = None,
                            n_nodes=513) -> float:
    """Value of the cost-direction pairing whose vanishing marks the abnormal test set."""
    derivs = derivs or ProblemDerivatives(problem)
    if n_nodes % 2 == 0:
        n_nodes += 1
    ts = np.linspace(0.0, problem.T, n_nodes)
    vals = np.empty(n_nodes)
    for k, t in enumerate(ts):
        tq = min(t, problem.T * (1 - 1e-15))
        y = base.point_at(t)
        u = base.control_at(tq)
        Vc = V.frame_at(t) @ V.frame.e_at(t)
        vals[k] = float(derivs.df0(t, y, u) @ Vc) + float(
            derivs.b0(t, y, u) @ np.asarray(xi(t), dtype=float))
    return float(simpson_uniform(vals, ts[1] - ts[0]))


def multiplier_rank_probe(problem: ControlProblem, base: Trajectory,
                          frame: Optional[FrameField] = None, time_samples=33,
                          rank_tol=1e-7):
    """Numeric rank of the multiplier-to-stationarity map over a probe basis.

    Builds the stationarity value paths for the basis multipliers
    (nu, psi1) in {(-1, 0)} union {(0, coframe covector at T)} and reports
    the singular values; corank one marks an essentially unique multiplier.
    """
    from .adjoint import solve_first_adjoint

    frame = frame or build_parallel_frame(base)
    ham = HamiltonianTools(problem)
    n = problem.chart.dim
    ts = np.linspace(0.0, problem.T * (1 - 1e-12), time_samples)
    rows = []
    basis = [(-1.0, np.zeros(n))]
    DT = frame.d[-1]
    for i in range(n):
        basis.append((0.0, DT[i]))
    for nu, psi1 in basis:
        psi = solve_first_adjoint(problem, base, nu=nu, psi1=psi1, frame=frame)
        vals = []
        for t in ts:
            vals.append(ham.du(t, base.point_at(t), psi.chart_at(t),
                               base.control_at(t), nu))
        rows.append(np.concatenate(vals))
    mat = np.stack(rows)
    svals = np.linalg.svd(mat, compute_uv=False)
    scale = svals[0] if svals[0] > 0 else 1.0
    rank = int(np.sum(svals > rank_tol * scale))
    return rank, svals
