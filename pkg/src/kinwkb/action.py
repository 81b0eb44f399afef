"""Two-point function S, its derivative identities and the Lagrangian side.

S is integrated as an extra component of the flow ODE (rate
p.xdot + q.ydot - H), so it is as accurate as the trajectory itself.  Its
Hessian in the endpoint comes from the flow Jacobians:

    Hess_z S = d(P, Q)/d(q0, p0) . [d(X, Y)/d(q0, p0)]^{-1}.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bvp import BvpOptions, BvpSolution, solve_bvp
from .errors import ConstraintViolated, DegenerateTime, SingularJacobian
from .geometry import MetricModel
from .hamiltonian_flow import CotangentState, FlowOptions, hamiltonian, integrate_flow

__all__ = [
    "TwoPointAction",
    "two_point_action",
    "action_hessian",
    "hj_residual",
    "lagrangian_functional",
    "weierstrass_excess",
    "quadratic_approx",
    "characteristic_curve",
    "perturbed_characteristic",
]


@dataclass
class TwoPointAction:
    S: float
    grad_z: np.ndarray
    grad_z0: np.ndarray
    hess_z: np.ndarray = field(repr=False)
    vanvleck: float


def action_hessian(m: MetricModel, sol: BvpSolution):
    """Endpoint Hessian of S and the Van Vleck factor 1/|J|."""
    d = m.dim
    jac = sol.variational.jac
    XY = jac[: 2 * d, 2 * d :]
    PQ = np.vstack([jac[3 * d :, 2 * d :], jac[2 * d : 3 * d, 2 * d :]])
    J = np.linalg.det(XY)
    if not abs(J) > 1e-300:
        raise SingularJacobian("d(X,Y)/d(q0,p0) is singular")
    hess = np.linalg.solve(XY.T, PQ.T).T
    return hess, 1.0 / abs(J)


def two_point_action(m: MetricModel, sol: BvpSolution) -> TwoPointAction:
    fin = sol.variational.flow.final
    hess, vv = action_hessian(m, sol)
    return TwoPointAction(
        S=float(sol.S),
        grad_z=np.concatenate([fin.p, fin.q]),
        grad_z0=-np.concatenate([sol.p0, sol.q0]),
        hess_z=hess,
        vanvleck=vv,
    )


def hj_residual(m: MetricModel, t, x0, y0, x, y, h_fd: float = 1e-4,
                opts: Optional[BvpOptions] = None, sol: Optional[BvpSolution] = None) -> float:
    """Relative defect of dS/dt + H(x, y, dS/dx, dS/dy) = 0.

    dS/dt uses a five-point central stencil of step ``h_fd``; the spatial
    gradients are the endpoint momenta.
    """
    if not h_fd > 1e-12 or t - 2 * h_fd <= 0:
        raise DegenerateTime(f"finite-difference step {h_fd!r} unusable at t={t!r}")
    opts = opts or BvpOptions()
    if sol is None:
        sol = solve_bvp(m, t, x0, y0, x, y, opts)
    S = {}
    for k in (-2, -1, 1, 2):
        sk = solve_bvp(m, t + k * h_fd, x0, y0, x, y, opts, zeta0=sol.zeta)
        S[k] = sk.S
    dSdt = (S[-2] - 8 * S[-1] + 8 * S[1] - S[2]) / (12 * h_fd)
    fin = sol.variational.flow.final
    H = hamiltonian(m, CotangentState(np.asarray(x, float), np.asarray(y, float), fin.q, fin.p))
    return abs(dSdt + H) / (1 + abs(H))


def lagrangian_functional(m: MetricModel, curve: Callable, t: float, n_panels: int = 64,
                          constraint_tol: float = 1e-8) -> float:
    """Integral of the constrained Lagrangian along ``curve``.

    ``curve(tau)`` takes an array of times in [0, t] and returns
    ``(x, y, xdot, ydot)`` with shape (len(tau), d) each.  Admissible curves
    satisfy ``xdot = -G(x) y``; on them the Lagrangian is ``1/2 w.G w`` with
    ``w = ydot - 1/2 v(x, y)``.

    Raises
    ------
    ConstraintViolated
        if the kinematic constraint fails anywhere on the quadrature grid.
    """
    nodes, weights = np.polynomial.legendre.leggauss(8)
    edges = np.linspace(0.0, t, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    tau = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wts = (half[:, None] * weights[None, :]).ravel()
    X, Y, Xd, Yd = (np.atleast_2d(np.asarray(a, dtype=float)) for a in curve(tau))
    total = 0.0
    vals = np.empty(tau.size)
    for k in range(tau.size):
        jet = m.jet(X[k], 2)
        viol = np.linalg.norm(Xd[k] + jet.G @ Y[k])
        if viol > constraint_tol * (1 + np.linalg.norm(Xd[k])):
            raise ConstraintViolated(f"|xdot + G y| = {viol:.3e} at tau = {tau[k]:.6g}")
        v = np.einsum("a,abi,b->i", Y[k], jet.dG, Y[k])
        w = Yd[k] - 0.5 * v
        vals[k] = 0.5 * w @ jet.G @ w
    total = float(np.dot(wts, vals))
    return total


def _char_samples(m, sol: BvpSolution, tau, opts):
    s0 = CotangentState(sol.x0, sol.y0, sol.q0, sol.p0)
    order = np.argsort(tau)
    fr = integrate_flow(m, s0, sol.t, opts, t_eval=np.asarray(tau)[order])
    out = np.empty_like(fr.trajectory)
    out[order] = fr.trajectory
    return out


def characteristic_curve(m: MetricModel, sol: BvpSolution, opts: Optional[FlowOptions] = None,
                         bump: Optional[Callable] = None):
    """Curve callable for :func:`lagrangian_functional`.

    Without ``bump`` this is the characteristic itself.  With
    ``bump(tau) -> (b, bdot, bddot)`` the position path becomes x_c + b and the
    velocity is reconstructed as ``y = -g(x) xdot`` so the constraint holds
    exactly; the bump must vanish with its first derivative at both ends to
    keep the endpoints (x, y) fixed.
    """
    d = m.dim

    def curve(tau):
        Z = _char_samples(m, sol, tau, opts)
        n = len(tau)
        X = np.empty((n, d)); Y = np.empty((n, d)); Xd = np.empty((n, d)); Yd = np.empty((n, d))
        if bump is not None:
            b, bd, bdd = (np.atleast_2d(a).reshape(n, d) for a in bump(np.asarray(tau)))
        for k in range(n):
            x, y, q, p = Z[k, :d], Z[k, d : 2 * d], Z[k, 2 * d : 3 * d], Z[k, 3 * d :]
            jet = m.jet(x, 2)
            v = np.einsum("a,abi,b->i", y, jet.dG, y)
            xd = -jet.G @ y
            yd = jet.g @ q + 0.5 * v
            if bump is None:
                X[k], Y[k], Xd[k], Yd[k] = x, y, xd, yd
                continue
            # second derivative of the characteristic position
            xdd = -np.einsum("abk,k,b->a", jet.dG, xd, y) - jet.G @ yd
            xp = x + b[k]
            xpd = xd + bd[k]
            xpdd = xdd + bdd[k]
            jp = m.jet(xp, 2)
            X[k] = xp
            Xd[k] = xpd
            Y[k] = -jp.g @ xpd
            Yd[k] = -np.einsum("abk,k,b->a", jp.dg, xpd, xpd) - jp.g @ xpdd
        return X, Y, Xd, Yd

    return curve


def perturbed_characteristic(m: MetricModel, sol: BvpSolution, amplitude: float, seed: int = 0,
                             n_modes: int = 3, opts: Optional[FlowOptions] = None):
    """Admissible curve with the endpoints of ``sol`` and a random bump.

    The bump is ``s^2 (1 - s)^2 sum_j a_j P_j(s)`` in each coordinate with
    ``s = tau / t``, so both the position and its velocity are unchanged at
    the ends.
    """
    d = m.dim
    t = sol.t
    rng = np.random.default_rng(seed)
    coef = amplitude * rng.standard_normal((n_modes, d))

    def bump(tau):
        s = np.asarray(tau) / t
        w = s**2 * (1 - s) ** 2
        wd = (2 * s * (1 - s) ** 2 - 2 * s**2 * (1 - s)) / t
        wdd = (2 * (1 - s) ** 2 - 8 * s * (1 - s) + 2 * s**2) / t**2
        b = np.zeros((s.size, d)); bd = np.zeros_like(b); bdd = np.zeros_like(b)
        for j in range(n_modes):
            P = s**j
            Pd = j * s ** max(j - 1, 0) / t if j else 0 * s
            Pdd = j * (j - 1) * s ** max(j - 2, 0) / t**2 if j > 1 else 0 * s
            f = w * P
            fd = wd * P + w * Pd
            fdd = wdd * P + 2 * wd * Pd + w * Pdd
            b += np.outer(f, coef[j]); bd += np.outer(fd, coef[j]); bdd += np.outer(fdd, coef[j])
        return b, bd, bdd

    return characteristic_curve(m, sol, opts, bump)


def weierstrass_excess(m: MetricModel, x, y, q1, p1, q2, p2) -> float:
    """H(q2) - H(q1) - dH/dq(q1).(q2 - q1) = 1/2 (q1 - q2).g(x)(q1 - q2)."""
    g = m.metric_at(x)
    dq = np.asarray(q1, dtype=float) - np.asarray(q2, dtype=float)
    return float(0.5 * dq @ g @ dq)


def quadratic_approx(t, x, y, x0, y0) -> float:
    """Leading quadratic form of S around the free flight (exact when flat)."""
    if not t > 0:
        raise DegenerateTime("t must be positive")
    x, y, x0, y0 = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, y, x0, y0))
    dx = x - x0
    return float(
        6 / t**3 * dx @ dx + 6 / t**2 * dx @ (y + y0) + 2 / t * (y @ y + y @ y0 + y0 @ y0)
    )
