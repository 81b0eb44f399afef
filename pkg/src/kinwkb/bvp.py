"""Two-point boundary value problem (x0, y0) -> (x, y) in time t.

The unknowns are the initial momenta zeta = (q0, p0).  Newton's method uses
the tangent block d(X, Y)/d(q0, p0) from the variational equations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import (
    BlowUp,
    DegenerateTime,
    NoConvergence,
    NumericalError,
    SingularJacobian,
)
from .geometry import MetricModel
from .hamiltonian_flow import CotangentState, FlowOptions, VariationalResult, free_flow, variational_flow

log = logging.getLogger(__name__)

__all__ = [
    "BvpOptions",
    "BvpSolution",
    "DiffeoReport",
    "leading_guess",
    "solve_bvp",
    "forward_map",
    "diffeo_check",
]

T_MIN = 1e-10


@dataclass
class BvpOptions:
    tol: float = 1e-10
    max_iter: int = 30
    max_backtracks: int = 8
    step_rtol: float = 1e-11
    singular_fraction: float = 0.5
    flow: FlowOptions = field(default_factory=FlowOptions)


@dataclass
class BvpSolution:
    t: float
    x0: np.ndarray
    y0: np.ndarray
    x: np.ndarray
    y: np.ndarray
    q0: np.ndarray
    p0: np.ndarray
    residual: float
    iterations: int
    variational: VariationalResult = field(repr=False)
    history: List[float] = field(default_factory=list, repr=False)

    @property
    def zeta(self) -> np.ndarray:
        return np.concatenate([self.q0, self.p0])

    @property
    def J(self) -> float:
        return self.variational.J

    @property
    def S(self) -> Optional[float]:
        return self.variational.action


def _vec(a, d=None):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if d is not None and a.size != d:
        raise ValueError(f"expected {d} components, got {a.size}")
    return a


def leading_guess(t, x0, y0, x, y, model: Optional[MetricModel] = None,
                  opts: Optional[FlowOptions] = None, free=None):
    """Invert the leading-order map around the free flow.

    Per dimension ``x - x~ = -t^2/2 q0 - t^3/6 p0`` and
    ``y - y~ = t q0 + t^2/2 p0``.  Without a model the free flow is the flat
    one, ``(x0 - y0 t, y0)``.
    """
    if not t > T_MIN:
        raise DegenerateTime(f"t = {t!r} below threshold {T_MIN}")
    x0, y0, x, y = (_vec(a) for a in (x0, y0, x, y))
    if free is not None:
        xt, yt = free
    elif model is None:
        xt, yt = x0 - y0 * t, y0
    else:
        xt, yt = free_flow(model, x0, y0, t, opts)
    dx, dy = x - xt, y - yt
    q0 = -6.0 / t**2 * dx - 2.0 / t * dy
    p0 = 12.0 / t**3 * dx + 6.0 / t**2 * dy
    return q0, p0


def forward_map(m: MetricModel, t, x0, y0, q0, p0, opts: Optional[FlowOptions] = None,
                with_action: bool = True) -> VariationalResult:
    s0 = CotangentState(_vec(x0), _vec(y0), _vec(q0), _vec(p0))
    return variational_flow(m, s0, t, opts, with_action=with_action)


def _evaluate(m, t, x0, y0, zeta, target, opts):
    d = m.dim
    vr = forward_map(m, t, x0, y0, zeta[:d], zeta[d:], opts.flow)
    fin = vr.flow.final
    r = np.concatenate([fin.x, fin.y]) - target
    return vr, r


def solve_bvp(m: MetricModel, t, x0, y0, x, y, opts: Optional[BvpOptions] = None,
              zeta0=None) -> BvpSolution:
    """Damped Newton shooting for the initial momenta.

    Starts from ``zeta0`` if given, otherwise from :func:`leading_guess`.
    Iterates until the endpoint residual is below ``opts.tol`` and the last
    Newton correction is negligible.

    Raises
    ------
    NoConvergence, SingularJacobian, BlowUp, DegenerateTime
    """
    opts = opts or BvpOptions()
    d = m.dim
    x0, y0, x, y = (_vec(a, d) for a in (x0, y0, x, y))
    if zeta0 is None:
        q0, p0 = leading_guess(t, x0, y0, x, y, m, opts.flow)
        zeta = np.concatenate([q0, p0])
    else:
        if not t > T_MIN:
            raise DegenerateTime(f"t = {t!r} below threshold {T_MIN}")
        zeta = np.array(zeta0, dtype=float)
    target = np.concatenate([x, y])
    scale = np.concatenate([np.full(d, t**-2), np.full(d, t**-3)])
    vr, r = _evaluate(m, t, x0, y0, zeta, target, opts)
    rn = float(np.linalg.norm(r))
    history = [rn]
    it = 0
    while True:
        M = vr.block
        try:
            step = np.linalg.solve(M, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("singular shooting Jacobian") from exc
        if it >= opts.max_iter:
            break
        alpha = 1.0
        accepted = False
        for _ in range(opts.max_backtracks + 1):
            trial = zeta + alpha * step
            try:
                vr_t, r_t = _evaluate(m, t, x0, y0, trial, target, opts)
                rn_t = float(np.linalg.norm(r_t))
            except (BlowUp, NumericalError):
                rn_t = np.inf
            if rn_t < rn or (rn_t <= opts.tol and rn <= opts.tol):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if rn <= opts.tol:
                break
            raise NoConvergence(
                f"line search failed at iteration {it}, residual {rn:.3e}"
            )
        it += 1
        zeta, vr, r, rn = trial, vr_t, r_t, rn_t
        history.append(rn)
        small_step = np.all(np.abs(alpha * step) <= opts.step_rtol * (scale + np.abs(zeta)))
        if rn <= opts.tol and (small_step or rn == 0.0):
            break
    if rn > opts.tol:
        raise NoConvergence(f"residual {rn:.3e} after {it} iterations")
    natural = t ** (4 * d) / 12.0**d
    if not abs(vr.J) > max(1e-300, opts.singular_fraction * natural):
        raise SingularJacobian(f"|J| = {abs(vr.J):.3e} below {opts.singular_fraction} x {natural:.3e}")
    return BvpSolution(t, x0, y0, x, y, zeta[:d].copy(), zeta[d:].copy(), rn, it, vr, history)


@dataclass
class DiffeoReport:
    t: float
    c: float
    n_samples: int
    failures: int
    max_roundtrip: float
    min_absJ: float
    natural_J: float
    coverage_radius: float
    covered: bool
    r_requested: float
    errors: List[str] = field(default_factory=list, repr=False)


def _ball_samples(rng, n, d, radius):
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rad = radius * rng.random(n) ** (1.0 / d)
    return u * rad[:, None]


def _hull_contains(points, queries):
    from scipy.spatial import Delaunay

    try:
        tri = Delaunay(points)
    except Exception:  # degenerate hull
        return np.zeros(len(queries), dtype=bool)
    return tri.find_simplex(queries) >= 0


def diffeo_check(m: MetricModel, t, x0, y0, c: float = 0.1, n_samples: int = 200,
                 seed: int = 0, r: float = 0.25, opts: Optional[BvpOptions] = None) -> DiffeoReport:
    """Sample the scaled polydisk, map forward, and solve back.

    The round-trip error is measured in polydisk units (q-error times
    t^2/c^2, p-error times t^3/c^3).  Coverage is tested by convex-hull
    containment of sampled points of ``B_r(x~) x B_{r/t}(y~)`` in the
    forward images; the largest radius passing the test is reported.
    """
    opts = opts or BvpOptions()
    d = m.dim
    x0, y0 = _vec(x0, d), _vec(y0, d)
    rng = np.random.default_rng(seed)
    Rq, Rp = c**2 / t**2, c**3 / t**3
    qs = _ball_samples(rng, n_samples, d, Rq)
    ps = _ball_samples(rng, n_samples, d, Rp)
    xt, yt = free_flow(m, x0, y0, t, opts.flow)
    images = []
    failures = 0
    worst = 0.0
    minJ = np.inf
    errors = []
    for q0, p0 in zip(qs, ps):
        try:
            vr = forward_map(m, t, x0, y0, q0, p0, opts.flow, with_action=False)
            xe, ye = vr.flow.final.x, vr.flow.final.y
            images.append(np.concatenate([xe - xt, (ye - yt) * t]))
            sol = solve_bvp(m, t, x0, y0, xe, ye, opts)
        except NumericalError as exc:
            failures += 1
            errors.append(f"{type(exc).__name__}: {exc}")
            continue
        err = max(np.max(np.abs(sol.q0 - q0)) / Rq, np.max(np.abs(sol.p0 - p0)) / Rp)
        worst = max(worst, err)
        minJ = min(minJ, abs(sol.J))
    # coverage: test points on the boundary of the unit polydisk, rescaled
    u1 = rng.standard_normal((48, d))
    u2 = rng.standard_normal((48, d))
    u1 /= np.linalg.norm(u1, axis=1, keepdims=True)
    u2 /= np.linalg.norm(u2, axis=1, keepdims=True)
    z = np.zeros((48, d))
    probe_dir = np.concatenate([np.hstack([u1, u2]), np.hstack([u1, z]), np.hstack([z, u2])])
    cov = 0.0
    if len(images) > 2 * d + 1:
        pts = np.asarray(images)
        lo, hi = 0.0, float(np.abs(pts).max())
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if np.all(_hull_contains(pts, mid * probe_dir)):
                lo = mid
            else:
                hi = mid
        cov = lo
    return DiffeoReport(
        t=t, c=c, n_samples=n_samples, failures=failures, max_roundtrip=worst,
        min_absJ=float(minJ), natural_J=t ** (4 * d) / 12.0**d, coverage_radius=cov,
        covered=bool(cov >= r), r_requested=r, errors=errors,
    )
