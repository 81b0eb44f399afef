"""WKB approximation u0 = C phi exp(-S/h) of the kinetic heat kernel.

Two assemblies are provided:

* ``bvp``: S and the Van Vleck factor come from the shooting solution,
  u0 = (2 pi h)^-d |J|^-1/2 exp(-S/h);
* ``series``: S and phi come from the rescaled expansion,
  u0 = (sqrt(12) / (2 pi h))^d t^-2d (psi_0 + t^2 psi_2) exp(-(Sigma_-1/t + t Sigma_1)/h).

Both coincide with the exact Gaussian kernel when the metric is flat.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .action import action_hessian
from .bvp import BvpOptions, BvpSolution, solve_bvp
from .errors import (
    DegenerateTime,
    NumericalError,
    StencilOutOfDomain,
    TruncationTooTight,
    UnsupportedVariant,
)
from .geometry import MetricModel, QuadraticNormalMetric
from .hamiltonian_flow import CotangentState, FlowOptions, free_flow, variational_flow
from .wkb_series import psi_series, sigma_series, untransform

log = logging.getLogger(__name__)

__all__ = [
    "WkbKernel",
    "KernelValue",
    "CutoffSpec",
    "PdeResidual",
    "AmplitudeReport",
    "evaluate_kernel",
    "apply_cutoff",
    "cutoff_weight",
    "pde_residual",
    "amplitude_equivalence",
    "normalization_check",
]

MODES = ("bvp", "series")


@dataclass
class KernelValue:
    u: float
    S: float
    phi: float
    mode: str


class WkbKernel:
    """Leading WKB kernel from the base point (x0, y0).

    Parameters
    ----------
    metric : MetricModel
    h : float
        noise intensity, > 0.
    x0, y0 : array_like
    mode : {"bvp", "series"}
    series_order : int
        highest phase order kept in series mode (amplitude keeps one more).
    """

    def __init__(self, metric: MetricModel, h: float, x0, y0, mode: str = "bvp",
                 bvp_opts: Optional[BvpOptions] = None, series_order: int = 1):
        if not h > 0:
            raise ValueError("h must be positive")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.metric = metric
        self.h = float(h)
        self.d = d = metric.dim
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
        self.y0 = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
        if self.x0.size != d or self.y0.size != d:
            raise ValueError("base point has the wrong dimension")
        self.mode = mode
        self.bvp_opts = bvp_opts or BvpOptions()
        self._free_cache: Dict[float, Tuple[np.ndarray, np.ndarray]] = {}
        self._last: Optional[BvpSolution] = None
        if mode == "series":
            if not isinstance(metric, QuadraticNormalMetric):
                raise UnsupportedVariant("series mode needs a quadratic normal-coordinate metric")
            if np.any(self.x0 != 0) and np.any(metric.tensor != 0):
                raise UnsupportedVariant("series mode is centred at x0 = 0 for curved metrics")
            self.sigma = sigma_series(metric, self.y0, series_order)
            self.alpha, self.psi = psi_series(metric, self.y0, series_order + 1)
            self._sig = {k: self.sigma.compile(k, self.y0) for k in self.sigma.orders}
            self._psi = {k: self.psi.compile(k, self.y0) for k in self.psi.orders}
            self.C = (np.sqrt(12.0) / (2 * np.pi * self.h)) ** d
        else:
            self.C = (2 * np.pi * self.h) ** (-d)

    def __repr__(self):
        return f"WkbKernel(mode={self.mode!r}, h={self.h}, d={self.d})"

    # pieces -------------------------------------------------------------------
    def free(self, t):
        t = float(t)
        if t not in self._free_cache:
            self._free_cache[t] = free_flow(self.metric, self.x0, self.y0, t, self.bvp_opts.flow)
        return self._free_cache[t]

    def solve(self, t, x, y, warm: bool = True) -> BvpSolution:
        zeta0 = None
        if warm and self._last is not None and abs(self._last.t - t) <= 0.05 * t:
            zeta0 = self._last.zeta
        try:
            sol = solve_bvp(self.metric, t, self.x0, self.y0, x, y, self.bvp_opts, zeta0=zeta0)
        except NumericalError:
            if zeta0 is None:
                raise
            sol = solve_bvp(self.metric, t, self.x0, self.y0, x, y, self.bvp_opts)
        self._last = sol
        return sol

    def phase_amplitude(self, t, x, y):
        """(S, log phi) at one point; phi excludes the constant C."""
        if not t > 0:
            raise DegenerateTime("t must be positive")
        if self.mode == "bvp":
            sol = self.solve(t, x, y)
            return float(sol.S), -0.5 * float(np.log(abs(sol.J)))
        S, phi = self._series_eval(t, np.atleast_2d(x), np.atleast_2d(y))
        if not phi[0] > 0:
            raise NumericalError("series amplitude is not positive here")
        return float(S[0]), float(np.log(phi[0]))

    def _series_eval(self, t, X, Y):
        xt, yt = self.free(t)
        Z = np.hstack([(X - xt) / t, Y - yt])
        S = np.zeros(Z.shape[0])
        for k, f in self._sig.items():
            S += t**k * f(Z)
        acc = np.zeros(Z.shape[0])
        for k, f in self._psi.items():
            acc += t**k * f(Z)
        return S, t ** (-self.alpha) * acc

    def value(self, t, x, y) -> KernelValue:
        S, lphi = self.phase_amplitude(t, x, y)
        phi = float(np.exp(lphi))
        return KernelValue(self.C * phi * np.exp(-S / self.h), S, phi, self.mode)

    def __call__(self, t, x, y) -> float:
        return self.value(t, x, y).u

    def batch(self, t, X, Y) -> np.ndarray:
        """Values at many points (rows of X, Y)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.mode == "series":
            S, phi = self._series_eval(t, X, Y)
            return self.C * phi * np.exp(-S / self.h)
        return np.array([self(t, x, y) for x, y in zip(X, Y)])


def evaluate_kernel(k: WkbKernel, t, x, y) -> float:
    return k(t, np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(y, dtype=float)))


# --------------------------------------------------------------------------
# cutoff
# --------------------------------------------------------------------------

@dataclass
class CutoffSpec:
    """Bump equal to 1 on the inner polydisk and 0 outside B_r x B_{r/t}.

    ``eps`` is the relative width of the transition layer.
    """

    r: float
    eps: float = 0.25

    def __post_init__(self):
        if not self.r > 0 or not 0 < self.eps < 1:
            raise ValueError("need r > 0 and 0 < eps < 1")


def _profile(s):
    """1 for s <= 0, 0 for s >= 1, C^2 quintic in between."""
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def cutoff_weight(spec: CutoffSpec, t, dx, dy) -> float:
    rx = np.linalg.norm(dx) / spec.r
    ry = np.linalg.norm(dy) * t / spec.r
    lo = 1.0 - spec.eps
    return float(_profile((rx - lo) / spec.eps) * _profile((ry - lo) / spec.eps))


def apply_cutoff(k: WkbKernel, spec: CutoffSpec, t, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w = cutoff_weight(spec, t, x - k.x0, y - k.y0)
    if w == 0.0:
        return 0.0
    u = k(t, x, y)
    return u if w == 1.0 else w * u


# --------------------------------------------------------------------------
# PDE residual
# --------------------------------------------------------------------------

@dataclass
class PdeResidual:
    """Residual of the kinetic equation divided by u0, split by powers of h.

    value = -hj + h * transport + h^2 * diffusion.
    """

    value: float
    h: float
    hj: float
    transport: float
    diffusion: float
    steps: Tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))


def _richardson(fn, delta, levels=3, order=2):
    """Extrapolate a central difference with error series in delta^2."""
    table = [fn(delta / 2**i) for i in range(levels)]
    p = order
    while len(table) > 1:
        f = 2.0**p
        table = [(f * table[i + 1] - table[i]) / (f - 1) for i in range(len(table) - 1)]
        p += 2
    return table[0]


def _derivatives(F: Callable, t, x, y, steps):
    """First derivatives of F in (t, x, y) and second derivatives in y.

    ``F`` returns an array; central differences are extrapolated twice.
    """
    d = x.size
    st, sx, sy = steps
    f0 = F(t, x, y)

    def d1(var, i, delta):
        def diff(h):
            if var == "t":
                return (F(t + h, x, y) - F(t - h, x, y)) / (2 * h)
            e = np.zeros(d); e[i] = h
            if var == "x":
                return (F(t, x + e, y) - F(t, x - e, y)) / (2 * h)
            return (F(t, x, y + e) - F(t, x, y - e)) / (2 * h)
        return _richardson(diff, delta)

    def d2(i, j, delta):
        ei = np.zeros(d); ei[i] = 1.0
        ej = np.zeros(d); ej[j] = 1.0
        if i == j:
            def diff(h):
                return (F(t, x, y + h * ei) - 2 * f0 + F(t, x, y - h * ei)) / h**2
        else:
            def diff(h):
                return (F(t, x, y + h * (ei + ej)) - F(t, x, y + h * (ei - ej))
                        - F(t, x, y - h * (ei - ej)) + F(t, x, y - h * (ei + ej))) / (4 * h * h)
        return _richardson(diff, delta)

    Ft = d1("t", 0, st)
    Fx = np.array([d1("x", i, sx) for i in range(d)])
    Fy = np.array([d1("y", i, sy) for i in range(d)])
    Fyy = np.empty((d, d) + np.shape(f0))
    for i in range(d):
        for j in range(i, d):
            Fyy[i, j] = Fyy[j, i] = d2(i, j, sy)
    return f0, Ft, Fx, Fy, Fyy


def pde_residual(k: WkbKernel, t, x, y, fd_steps: Optional[Sequence[float]] = None) -> PdeResidual:
    """Relative residual of h u_t - h Gy.u_x + h/2 v.u_y - h^2/2 g:u_yy.

    The derivatives of S and log phi are taken by Richardson-extrapolated
    central differences with steps ``fd_steps = (st, sx, sy)`` relative to
    the natural scales t, t^{3/2}, t^{1/2}.  Since log u0 is affine in 1/h
    the residual is assembled exactly in h from the h-free pieces.

    Raises
    ------
    StencilOutOfDomain
        if the stencil reaches t <= 0 or leaves the metric chart.
    """
    if fd_steps is None:
        fd_steps = (1e-3, 1e-2, 1e-2) if k.mode == "series" else (2e-3, 2e-2, 2e-2)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    st, sx, sy = (float(s) for s in fd_steps)
    steps = (st * t, sx * t**1.5, sy * t**0.5)
    if t - steps[0] <= 0:
        raise StencilOutOfDomain("time stencil reaches t <= 0")
    radius = getattr(k.metric, "validity_radius", np.inf)
    if np.linalg.norm(x) + 2 * steps[1] >= radius:
        raise StencilOutOfDomain("position stencil leaves the chart")

    def F(tt, xx, yy):
        return np.array(k.phase_amplitude(tt, xx, yy))

    f0, Ft, Fx, Fy, Fyy = _derivatives(F, t, x, y, steps)
    S_t, L_t = Ft
    S_x, L_x = Fx[:, 0], Fx[:, 1]
    S_y, L_y = Fy[:, 0], Fy[:, 1]
    S_yy, L_yy = Fyy[..., 0], Fyy[..., 1]
    jet = k.metric.jet(x, 2)
    w = jet.G @ y
    v = np.einsum("a,abi,b->i", y, jet.dG, y)
    g = jet.g
    H = 0.5 * S_y @ g @ S_y - S_x @ w + 0.5 * S_y @ v
    hj = S_t + H
    transport = L_t - w @ L_x + 0.5 * v @ L_y + S_y @ g @ L_y + 0.5 * np.sum(g * S_yy)
    diffusion = -0.5 * (np.sum(g * L_yy) + L_y @ g @ L_y)
    h = k.h
    value = -hj + h * transport + h * h * diffusion
    return PdeResidual(float(value), h, float(hj), float(transport), float(diffusion), steps)


# --------------------------------------------------------------------------
# amplitude along characteristics
# --------------------------------------------------------------------------

@dataclass
class AmplitudeReport:
    times: np.ndarray
    ratio: np.ndarray
    max_rel_dev: float
    liouville: np.ndarray


def amplitude_equivalence(m: MetricModel, sol: BvpSolution, h: float = 1.0,
                          t_start: Optional[float] = None, n_panels: int = 24,
                          opts: Optional[FlowOptions] = None) -> AmplitudeReport:
    """Integrate phi' = -1/2 phi tr(g S_yy) along the characteristic of ``sol``.

    S_yy at time s is the endpoint Hessian of the two-point function for the
    time-s problem, read off the variational matrices.  The ratio
    phi / |J|^{-1/2} is reported on geometric panel edges between ``t_start``
    (default t/10) and t, normalized to its first value.  ``h`` does not
    enter the transport equation; it is accepted for symmetry with the
    kernel API.

    ``liouville`` holds s^{2d} |J(s)|^{-1/2} / 12^{d/2}.
    """
    t = sol.t
    d = m.dim
    if t_start is None:
        t_start = 0.1 * t
    if not 0 < t_start < t:
        raise DegenerateTime("t_start must lie in (0, t)")
    opts = opts or FlowOptions()
    edges = np.geomspace(t_start, t, n_panels + 1)
    nodes, weights = np.polynomial.legendre.leggauss(8)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    gl = mid[:, None] + half[:, None] * nodes[None, :]
    te = np.unique(np.concatenate([edges, gl.ravel()]))
    s0 = CotangentState(sol.x0, sol.y0, sol.q0, sol.p0)
    vr = variational_flow(m, s0, t, opts, t_eval=te)
    traj = vr.flow.trajectory
    jacs = vr.jac_trajectory
    tr = np.empty(te.size)
    Jabs = np.empty(te.size)
    n = 4 * d
    for i in range(te.size):
        jac = jacs[i]
        XY = jac[: 2 * d, 2 * d :]
        PQ = np.vstack([jac[3 * d :, 2 * d :], jac[2 * d : 3 * d, 2 * d :]])
        hess = np.linalg.solve(XY.T, PQ.T).T
        g = m.metric_at(traj[i, :d])
        tr[i] = np.sum(g * hess[d:, d:])
        Jabs[i] = abs(np.linalg.det(XY))
    pos = {v: i for i, v in enumerate(te)}
    logphi = np.zeros(edges.size)
    for p in range(n_panels):
        idx = [pos[v] for v in gl[p]]
        logphi[p + 1] = logphi[p] - 0.5 * half[p] * np.dot(weights, tr[idx])
    Je = np.array([Jabs[pos[v]] for v in edges])
    ratio = np.exp(logphi) / Je**-0.5
    ratio = ratio / ratio[0]
    liou = edges ** (2 * d) * Je**-0.5 / 12.0 ** (d / 2)
    return AmplitudeReport(edges, ratio, float(np.max(np.abs(ratio - 1))), liou)


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------

def normalization_check(k: WkbKernel, t, n_nodes: Optional[int] = None, width: float = 8.0,
                        shell: float = 7.0, tail_tol: float = 1e-6) -> float:
    """Total mass of u0 over (x, y) by whitened tensor Gauss-Legendre quadrature.

    The box is ``width`` standard deviations of the flat Gaussian around the
    free-flight endpoint.  The share of the mass sitting beyond ``shell``
    standard deviations is used as a truncation estimate.

    Raises
    ------
    TruncationTooTight
    """
    d = k.d
    h = k.h
    if n_nodes is None:
        n_nodes = 40 if d == 1 else 24
    xt, yt = k.free(t)
    cov1 = h * np.array([[t**3 / 3, -(t**2) / 2], [-(t**2) / 2, t]])
    L1 = np.linalg.cholesky(cov1)
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    nodes = nodes * width
    weights = weights * width
    grids = np.meshgrid(*([nodes] * (2 * d)), indexing="ij")
    U = np.stack([gr.ravel() for gr in grids], axis=1)  # ordered (x_1, y_1, x_2, y_2, ...)
    W = np.ones(U.shape[0])
    for j in range(2 * d):
        W = W * weights[np.searchsorted(nodes, U[:, j])]
    Zx = np.empty((U.shape[0], d))
    Zy = np.empty((U.shape[0], d))
    for i in range(d):
        pair = U[:, 2 * i : 2 * i + 2] @ L1.T
        Zx[:, i] = xt[i] + pair[:, 0]
        Zy[:, i] = yt[i] + pair[:, 1]
    vals = k.batch(t, Zx, Zy)
    jac = np.prod(np.diag(L1)) ** d
    contrib = W * vals * jac
    mass = float(np.sum(contrib))
    outer = np.max(np.abs(U), axis=1) > shell
    tail = float(np.sum(contrib[outer]) / mass) if mass else np.inf
    if not tail <= tail_tol:
        raise TruncationTooTight(f"mass fraction {tail:.2e} beyond {shell} sigma")
    return mass
