"""Independent flat-space implementation of the condition machinery, for Euclidean charts.

Everything here works in plain coordinates with scipy integrators: no
frames, no transports, no chart machinery.  Used to cross-check costates,
the second-order dual form, and both second-order condition values on flat
scenarios.
"""

import numpy as np
from scipy.integrate import solve_ivp

RTOL = 1e-12
ATOL = 1e-13


def flat_state(problem, control, T=None, n_eval=2001):
    """State path under the control, dense output as a callable."""
    T = problem.T if T is None else T

    def rhs(t, y):
        return np.asarray(problem.f(t, y, control.value_at(min(t, T * (1 - 1e-15)))), dtype=float)

    sol = solve_ivp(rhs, (0.0, T), np.asarray(problem.y0, dtype=float), method="DOP853",
                    rtol=RTOL, atol=ATOL, dense_output=True, max_step=1e-2)
    return sol.sol


def flat_costate(problem, control, y_of_t, nu, psi1):
    """Backward costate: psi' = -A^T psi - nu grad f0 (A = df/dy in coordinates)."""
    T = problem.T

    def rhs(t, psi):
        u = control.value_at(min(t, T * (1 - 1e-15)))
        y = y_of_t(t)
        A = np.asarray(problem.dxf(t, y, u), dtype=float)
        g0 = np.asarray(problem.dxf0(t, y, u), dtype=float)
        return -A.T @ psi - nu * g0

    sol = solve_ivp(rhs, (T, 0.0), np.asarray(psi1, dtype=float), method="DOP853",
                    rtol=RTOL, atol=ATOL, dense_output=True, max_step=1e-2)
    return sol.sol


def flat_second_dual(problem, control, y_of_t, psi_of_t):
    """Backward matrix form W' = -A^T W - W A - Hmat with W(T) = 0 (flat curvature term zero)."""
    T = problem.T
    n = problem.chart.dim

    def rhs(t, w):
        u = control.value_at(min(t, T * (1 - 1e-15)))
        y = y_of_t(t)
        A = np.asarray(problem.dxf(t, y, u), dtype=float)
        S = np.asarray(problem.dx2f(t, y, u), dtype=float)
        H0 = np.asarray(problem.dx2f0(t, y, u), dtype=float)
        psi = psi_of_t(t)
        Hmat = np.einsum("ljk,l->jk", S, psi) - H0
        W = w.reshape(n, n)
        return (-(A.T @ W) - W @ A - Hmat).reshape(-1)

    sol = solve_ivp(rhs, (T, 0.0), np.zeros(n * n), method="DOP853",
                    rtol=RTOL, atol=ATOL, dense_output=True, max_step=1e-2)
    return lambda t: sol.sol(t).reshape(n, n)


def flat_grad_H(problem, t, y, psi, u, nu):
    A = np.asarray(problem.dxf(t, y, u), dtype=float)
    g0 = np.asarray(problem.dxf0(t, y, u), dtype=float)
    return A.T @ psi + nu * g0


def flat_integral_lhs(problem, base_control, u, y_of_t, psi_of_t, W_of_t, nu=-1.0):
    """The double-integral second-order value in flat coordinates.

    Inner field z solves z' = A z + (f(u) - f(ubar)); the outer integrand
    pairs the gradient difference and the symmetrized W with z.
    """
    T = problem.T

    def inner_rhs(t, z):
        tq = min(t, T * (1 - 1e-15))
        uv = u.value_at(tq)
        ub = base_control.value_at(tq)
        y = y_of_t(t)
        A = np.asarray(problem.dxf(t, y, ub), dtype=float)
        df = np.asarray(problem.f(t, y, uv), dtype=float) - np.asarray(problem.f(t, y, ub),
                                                                       dtype=float)
        return A @ z + df

    sol = solve_ivp(inner_rhs, (0.0, T), np.zeros(problem.chart.dim), method="DOP853",
                    rtol=RTOL, atol=ATOL, dense_output=True, max_step=2e-3)
    z_of_t = sol.sol

    def outer(t):
        tq = min(t, T * (1 - 1e-15))
        uv = u.value_at(tq)
        ub = base_control.value_at(tq)
        y = y_of_t(t)
        psi = psi_of_t(t)
        W = W_of_t(t)
        df = np.asarray(problem.f(t, y, uv), dtype=float) - np.asarray(problem.f(t, y, ub),
                                                                       dtype=float)
        dH = flat_grad_H(problem, t, y, psi, uv, nu) - flat_grad_H(problem, t, y, psi, ub, nu)
        z = z_of_t(t)
        return float(dH @ z) + 0.5 * float(df @ (W + W.T) @ z)

    # composite Simpson per control segment of u
    total = 0.0
    for (a, b, uval) in u.segments():
        npts = 401
        ts = np.linspace(a, b, npts)
        vals = np.array([outer(t) for t in ts])
        h = ts[1] - ts[0]
        total += (h / 3.0) * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum() + 2 * vals[2:-2:2].sum())
    return total


def flat_pointwise_lhs(problem, base_control, t, v, y_of_t, psi_of_t, W_of_t, nu=-1.0):
    y = y_of_t(t)
    ub = base_control.value_at(min(t, problem.T * (1 - 1e-15)))
    fb = np.asarray(problem.f(t, y, ub), dtype=float)
    fv = np.asarray(problem.f(t, y, v), dtype=float)
    delta = fb - fv
    W = W_of_t(t)
    psi = psi_of_t(t)
    dH = flat_grad_H(problem, t, y, psi, ub, nu) - flat_grad_H(problem, t, y, psi, v, nu)
    return float(0.5 * delta @ (W + W.T) @ delta + dH @ delta)


def riccati_gain(T=1.0):
    """Scalar Riccati solution for the linear-quadratic scenario: P' = P^2 - 1, P(T) = 0."""
    sol = solve_ivp(lambda t, p: p * p - 1.0, (T, 0.0), [0.0], method="DOP853",
                    rtol=RTOL, atol=ATOL, dense_output=True, max_step=1e-2)
    return lambda t: float(sol.sol(t)[0])
