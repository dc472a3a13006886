"""Dual equations along a base trajectory: parallel frames, costates, the second-order form, transitions.

All backward/forward linear equations are integrated in the parallel frame,
where covariant time derivatives become plain component derivatives; chart
components are reconstructed through the frame.  The second-order form W
solves  W' + F^T W + W F - M + Hmat = 0,  W(T) = 0,  with

* F[i, j]  = < nabla_{e_j} f, e_i >
* M[i, k]  = R(psi~, e_i, f, e_k)
* Hmat[i, k] = second covariant state derivative of the Hamiltonian on (e_i, e_k)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import geometry as geo
from .dynamics import ControlProblem, ProblemDerivatives, Trajectory
from .numerics import gram_schmidt, hermite_eval, segmented_hermite


def march_along(base: Trajectory, rhs, init, backward=False):
    """RK4 for a linear-in-state system with coefficients frozen on the base trajectory.

    ``rhs(t, y, u, state)`` sees the base point y and segment control u;
    midpoint stage points come from the trajectory's dense evaluation, so the
    scheme keeps its fourth order.  Returns the state at every base node.
    """
    K = len(base.grid)
    init = np.asarray(init, dtype=float)
    states = np.empty((K,) + init.shape)
    seg_iter = list(enumerate(base.seg_bounds))
    if backward:
        states[-1] = init
        seg_iter = seg_iter[::-1]
    else:
        states[0] = init

    for k, (i0, i1) in seg_iter:
        useg = base.seg_controls[k]

        def uval(t):
            return useg(t) if callable(useg) else useg

        idx = range(i1, i0, -1) if backward else range(i0, i1)
        for i in idx:
            if backward:
                t_from, t_to = base.grid[i], base.grid[i - 1]
                y_from, y_to = base.points[i], base.points[i - 1]
            else:
                t_from, t_to = base.grid[i], base.grid[i + 1]
                y_from, y_to = base.points[i], base.points[i + 1]
            h = t_to - t_from
            tm = 0.5 * (t_from + t_to)
            ym = base.point_at(tm)
            cur = states[i]
            k1 = rhs(t_from, y_from, uval(t_from), cur)
            k2 = rhs(tm, ym, uval(tm), cur + 0.5 * h * k1)
            k3 = rhs(tm, ym, uval(tm), cur + 0.5 * h * k2)
            k4 = rhs(t_to, y_to, uval(t_to), cur + h * k3)
            nxt = cur + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            states[i - 1 if backward else i + 1] = nxt
    return states


def nodal_derivatives(base: Trajectory, rhs, states):
    """Right-continuous nodal state derivatives plus left limits at segment ends.

    Coefficient jumps at control switches make the derivative two-valued at
    shared boundary nodes; interpolating within a segment needs the left
    limit at its last node.
    """
    K = len(base.grid)
    d = np.empty_like(states)
    for k in range(K):
        t = base.grid[k]
        u = base.control_at(min(t, base.problem.T * (1 - 1e-15)))
        d[k] = rhs(t, base.points[k], u, states[k])
    ends = []
    for (i0, i1), useg in zip(base.seg_bounds, base.seg_controls):
        t = base.grid[i1]
        u = useg(t) if callable(useg) else useg
        ends.append(rhs(t, base.points[i1], u, states[i1]))
    return d, np.asarray(ends)


# ---------------------------------------------------------------------------
# parallel frames


@dataclass
class FrameField:
    """A parallel orthonormal frame along a trajectory with its dual coframe."""

    base: Trajectory
    e: np.ndarray   # (K, n, n): e[k, i, :] = components of e_i at node k
    de: np.ndarray  # time derivative of e at nodes (transport equation)
    d: np.ndarray   # (K, n, n): d[k, i, :] = dual covector components
    de_end: Optional[np.ndarray] = None  # left-limit derivatives at segment ends

    def e_at(self, t):
        return segmented_hermite(self.base.grid, self.e, self.de, t,
                                 seg_bounds=self.base.seg_bounds, end_derivs=self.de_end)

    def dual_at(self, t):
        """Dual coframe rows at t: D @ E.T = identity."""
        E = self.e_at(t)
        if E.ndim == 2:
            return np.linalg.inv(E.T)
        return np.linalg.inv(np.swapaxes(E, -1, -2))

    def matrix_at(self, t):
        """Column matrix E(t) with columns e_i, for frame <-> chart conversions."""
        return self.e_at(t).T

    def orthonormality_drift(self):
        g = self.base.problem.chart.metric(self.base.points)
        gram = np.einsum("kia,kab,kjb->kij", self.e, g, self.e)
        return float(np.max(np.abs(gram - np.eye(self.e.shape[1]))))


def build_parallel_frame(base: Trajectory) -> FrameField:
    """Transport a Gram-Schmidt orthonormal basis from the initial point along the trajectory."""
    chart = base.problem.chart

    def rhs_rows(t, y, u, rows):
        # rows[i, :] = components of e_i; each row transports along the flow
        G = chart.christoffel(y)
        v = np.asarray(base.problem.f(t, y, u), dtype=float)
        return -np.einsum("kab,a,ib->ik", G, v, rows)

    rows0 = gram_schmidt(chart.metric(base.points[0])).T
    e_nodes = march_along(base, rhs_rows, rows0)
    de_nodes, de_end = nodal_derivatives(base, rhs_rows, e_nodes)
    d_nodes = np.empty_like(e_nodes)
    for k in range(len(base.grid)):
        # d[k, i, :] rows satisfy d_i(e_j) = delta_ij
        d_nodes[k] = np.linalg.inv(e_nodes[k].T)
    return FrameField(base=base, e=e_nodes, de=de_nodes, d=d_nodes, de_end=de_end)


# ---------------------------------------------------------------------------
# Hamiltonian evaluators


class HamiltonianTools:
    """The control Hamiltonian p(f) + nu f0 and its state/control derivatives."""

    def __init__(self, problem: ControlProblem, derivs: Optional[ProblemDerivatives] = None):
        self.problem = problem
        self.derivs = derivs or ProblemDerivatives(problem)

    def value(self, t, x, p, u, nu) -> float:
        fv = np.asarray(self.problem.f(t, x, u), dtype=float)
        return float(np.dot(p, fv) + nu * self.problem.f0(t, x, u))

    def dx(self, t, x, p, u, nu):
        A = self.derivs.A(t, x, u)
        return A.T @ p + nu * self.derivs.df0(t, x, u)

    def dx2(self, t, x, p, u, nu):
        S = self.derivs.S2f(t, x, u)
        return np.einsum("ljk,l->jk", S, p) + nu * self.derivs.H2f0(t, x, u)

    def du(self, t, x, p, u, nu):
        return self.derivs.B(t, x, u).T @ p + nu * self.derivs.b0(t, x, u)

    def du2(self, t, x, p, u, nu):
        return np.einsum("lab,l->ab", self.derivs.B2(t, x, u), p) + nu * self.derivs.b02(t, x, u)

    def dudx(self, t, x, p, u, nu):
        """Mixed derivative on (state slot, control slot): (n, m)."""
        return (np.einsum("ija,i->ja", self.derivs.dA_du(t, x, u), p)
                + nu * self.derivs.ddf0_du(t, x, u))


def hamiltonian(problem, t, x, p, u, nu) -> float:
    return HamiltonianTools(problem).value(t, np.asarray(x, dtype=float),
                                           np.asarray(p, dtype=float), u, nu)


# ---------------------------------------------------------------------------
# costate paths


@dataclass
class CotangentPath:
    """A covector field along the base trajectory in frame and chart components."""

    base: Trajectory
    frame: FrameField
    comps: np.ndarray      # (K, n) frame components
    dcomps: np.ndarray     # nodal time derivative of the frame components
    nu: float
    psi1: np.ndarray
    dcomps_end: Optional[np.ndarray] = None

    def frame_at(self, t):
        return segmented_hermite(self.base.grid, self.comps, self.dcomps, t,
                                 seg_bounds=self.base.seg_bounds, end_derivs=self.dcomps_end)

    def chart_at(self, t):
        vec = self.frame_at(t)
        D = self.frame.dual_at(t)
        if vec.ndim == 1:
            return vec @ D
        return np.einsum("...i,...ia->...a", vec, D)

    @property
    def chart_nodes(self):
        return np.einsum("ki,kia->ka", self.comps, self.frame.d)


@dataclass
class SecondOrderDual:
    """The matrix path W and the reconstructed bilinear form w along the base."""

    base: Trajectory
    frame: FrameField
    W: np.ndarray        # (K, n, n) frame components
    dW: np.ndarray
    dW_end: Optional[np.ndarray] = None

    def W_at(self, t):
        return segmented_hermite(self.base.grid, self.W, self.dW, t,
                                 seg_bounds=self.base.seg_bounds, end_derivs=self.dW_end)

    def w_chart_at(self, t):
        D = self.frame.dual_at(t)
        W = self.W_at(t)
        return np.einsum("ia,ij,jb->ab", D, W, D)

    def w_sym_chart_at(self, t):
        w = self.w_chart_at(t)
        return 0.5 * (w + w.T)


def _frame_F(problem, derivs, frame, t, y, u):
    """F[i, j] = < nabla_{e_j} f, e_i > at time t."""
    A = derivs.A(t, y, u)
    E = frame.e_at(t).T  # columns e_i
    g = problem.chart.metric(y)
    return E.T @ g @ A @ E


def _frame_F1(problem, frame, t, y, u, ubar):
    fv = np.asarray(problem.f(t, y, u), dtype=float)
    fb = np.asarray(problem.f(t, y, ubar), dtype=float)
    E = frame.e_at(t).T
    g = problem.chart.metric(y)
    return E.T @ g @ (fv - fb)


def solve_first_adjoint(problem: ControlProblem, base: Trajectory, nu: float, psi1,
                        frame: Optional[FrameField] = None,
                        derivs: Optional[ProblemDerivatives] = None) -> CotangentPath:
    """Backward costate equation with terminal covector psi1 and multiplier nu <= 0."""
    frame = frame or build_parallel_frame(base)
    derivs = derivs or ProblemDerivatives(problem)
    psi1 = np.asarray(psi1, dtype=float)
    n = problem.chart.dim

    def rhs(t, y, u, comps):
        F = _frame_F(problem, derivs, frame, t, y, u)
        c = frame.e_at(t) @ derivs.df0(t, y, u)  # c_i = df0(e_i)
        return -(F.T @ comps) - nu * c

    # terminal frame components: psi(e_i) = psi1 . e_i
    ET = frame.e[-1]  # rows e_i
    init = ET @ psi1
    comps = march_along(base, rhs, init, backward=True)
    dcomps, dcomps_end = nodal_derivatives(base, rhs, comps)
    return CotangentPath(base=base, frame=frame, comps=comps, dcomps=dcomps,
                         nu=float(nu), psi1=psi1, dcomps_end=dcomps_end)


def solve_second_adjoint(problem: ControlProblem, base: Trajectory, psi: CotangentPath,
                         derivs: Optional[ProblemDerivatives] = None) -> SecondOrderDual:
    """Backward matrix equation for the second-order dual form, W(T) = 0."""
    derivs = derivs or ProblemDerivatives(problem)
    frame = psi.frame
    chart = problem.chart
    n = chart.dim

    def coeffs(t, y, u):
        F = _frame_F(problem, derivs, frame, t, y, u)
        E = frame.e_at(t)  # rows e_i
        rlow = geo.lower_curvature(chart, y)
        psi_chart = psi.chart_at(t)
        psi_vec = geo.raise_covector(chart, y, psi_chart)
        fv = np.asarray(problem.f(t, y, u), dtype=float)
        M = np.einsum("abcd,a,ib,c,kd->ik", rlow, psi_vec, E, fv, E)
        S = derivs.S2f(t, y, u)
        Hf = np.einsum("ljk,l->jk", S, psi_chart) - derivs.H2f0(t, y, u)
        Hmat = np.einsum("ia,ab,kb->ik", E, Hf, E)
        return F, M, Hmat

    def rhs(t, y, u, W):
        W = W.reshape(n, n)
        F, M, Hmat = coeffs(t, y, u)
        dW = -(F.T @ W) - W @ F + M - Hmat
        return dW.reshape(-1)

    Wflat = march_along(base, rhs, np.zeros(n * n), backward=True)
    dWflat, dWend = nodal_derivatives(base, rhs, Wflat)
    return SecondOrderDual(base=base, frame=frame, W=Wflat.reshape(-1, n, n),
                           dW=dWflat.reshape(-1, n, n), dW_end=dWend.reshape(-1, n, n))


@dataclass
class TransitionPath:
    """Forward fundamental matrix of the frame-reduced linearized flow and its inverse path."""

    base: Trajectory
    frame: FrameField
    Phi: np.ndarray      # (K, n, n)
    dPhi: np.ndarray
    PhiInv: np.ndarray   # (K, n, n), solved as its own equation
    dPhiInv: np.ndarray
    dPhi_end: Optional[np.ndarray] = None
    dPhiInv_end: Optional[np.ndarray] = None

    def Phi_at(self, t):
        return segmented_hermite(self.base.grid, self.Phi, self.dPhi, t,
                                 seg_bounds=self.base.seg_bounds, end_derivs=self.dPhi_end)

    def PhiInv_at(self, t):
        return segmented_hermite(self.base.grid, self.PhiInv, self.dPhiInv, t,
                                 seg_bounds=self.base.seg_bounds, end_derivs=self.dPhiInv_end)

    def inverse_consistency(self):
        prod = np.einsum("kij,kjl->kil", self.Phi, self.PhiInv)
        return float(np.max(np.abs(prod - np.eye(self.Phi.shape[1]))))


def solve_transition(problem: ControlProblem, base: Trajectory, frame: FrameField,
                     derivs: Optional[ProblemDerivatives] = None) -> TransitionPath:
    derivs = derivs or ProblemDerivatives(problem)
    n = problem.chart.dim

    def rhs_fwd(t, y, u, P):
        F = _frame_F(problem, derivs, frame, t, y, u)
        return (F @ P.reshape(n, n)).reshape(-1)

    def rhs_inv(t, y, u, P):
        F = _frame_F(problem, derivs, frame, t, y, u)
        return (-P.reshape(n, n) @ F).reshape(-1)

    Phi = march_along(base, rhs_fwd, np.eye(n).reshape(-1))
    PhiInv = march_along(base, rhs_inv, np.eye(n).reshape(-1))
    dPhi, dPhi_end = nodal_derivatives(base, rhs_fwd, Phi)
    dPhiInv, dPhiInv_end = nodal_derivatives(base, rhs_inv, PhiInv)
    shape = (-1, n, n)
    return TransitionPath(base=base, frame=frame,
                          Phi=Phi.reshape(shape), dPhi=dPhi.reshape(shape),
                          PhiInv=PhiInv.reshape(shape), dPhiInv=dPhiInv.reshape(shape),
                          dPhi_end=dPhi_end.reshape(shape), dPhiInv_end=dPhiInv_end.reshape(shape))


@dataclass
class FrameMatrices:
    """Sampled frame-reduced coefficient paths and the solved dual/transition objects."""

    base: Trajectory
    frame: FrameField
    psi: CotangentPath
    second: SecondOrderDual
    transition: TransitionPath
    derivs: ProblemDerivatives

    def F_at(self, t, u=None):
        y = self.base.point_at(t)
        u = self.base.control_at(t) if u is None else u
        return _frame_F(self.base.problem, self.derivs, self.frame, t, y, u)

    def F1_at(self, t, u):
        y = self.base.point_at(t)
        ubar = self.base.control_at(t)
        return _frame_F1(self.base.problem, self.frame, t, y, u, ubar)

    def M_at(self, t):
        problem = self.base.problem
        chart = problem.chart
        y = self.base.point_at(t)
        u = self.base.control_at(t)
        E = self.frame.e_at(t)
        rlow = geo.lower_curvature(chart, y)
        psi_chart = self.psi.chart_at(t)
        psi_vec = geo.raise_covector(chart, y, psi_chart)
        fv = np.asarray(problem.f(t, y, u), dtype=float)
        return np.einsum("abcd,a,ib,c,kd->ik", rlow, psi_vec, E, fv, E)

    def Hmat_at(self, t):
        problem = self.base.problem
        y = self.base.point_at(t)
        u = self.base.control_at(t)
        E = self.frame.e_at(t)
        S = self.derivs.S2f(t, y, u)
        psi_chart = self.psi.chart_at(t)
        Hf = np.einsum("ljk,l->jk", S, psi_chart) - self.derivs.H2f0(t, y, u)
        return np.einsum("ia,ab,kb->ik", E, Hf, E)

    def delta_dH_at(self, t, u, nu=-1.0):
        """Frame components of grad_x H(ubar) - grad_x H(u)."""
        problem = self.base.problem
        ham = HamiltonianTools(problem, self.derivs)
        y = self.base.point_at(t)
        ubar = self.base.control_at(t)
        p = self.psi.chart_at(t)
        diff = ham.dx(t, y, p, ubar, nu) - ham.dx(t, y, p, u, nu)
        E = self.frame.e_at(t)
        return E @ diff


def assemble_frame_matrices(problem: ControlProblem, base: Trajectory, psi: CotangentPath,
                            frame: Optional[FrameField] = None,
                            derivs: Optional[ProblemDerivatives] = None) -> FrameMatrices:
    """Solve the second-order dual and transition systems and bundle the evaluators."""
    frame = frame or psi.frame
    derivs = derivs or ProblemDerivatives(problem)
    second = solve_second_adjoint(problem, base, psi, derivs=derivs)
    transition = solve_transition(problem, base, frame, derivs=derivs)
    return FrameMatrices(base=base, frame=frame, psi=psi, second=second,
                         transition=transition, derivs=derivs)
