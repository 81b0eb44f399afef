"""Local (contractible-sector) trace of the WKB kernel.

The trace integrates the diagonal u0(t, z; z) over phase space.  In the flat
case the diagonal phase is 6|y|^2/t and the y-integral is Gaussian, giving
vol(M) (2 pi h t^3)^{-d/2}.  Only the sector of trajectories that stay in the
chart is included; winding sectors of a torus are not summed (every winding
contributes the same amount in the flat case, so their sum diverges).
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .bvp import BvpOptions, solve_bvp
from .errors import NumericalError, QuadratureFailure, UnsupportedVariant
from .geometry import MetricModel, QuadraticNormalMetric, scalar_curvature

log = logging.getLogger(__name__)

__all__ = ["TraceEstimate", "CurvatureReport", "local_trace", "leading_trace", "curvature_probe",
           "fit_power"]


@dataclass
class TraceEstimate:
    value: float
    t: float
    h: float
    leading: float
    breakdown: Dict[str, float] = field(default_factory=dict)
    quad_error: float = 0.0


def leading_trace(vol, t, h, d) -> float:
    return float(vol * (2 * np.pi * h * t**3) ** (-d / 2))


def _diag_kernel(m, t, h, x, y, opts):
    sol = solve_bvp(m, t, x, y, x, y, opts)
    d = m.dim
    return (2 * np.pi * h) ** (-d) * abs(sol.J) ** -0.5 * np.exp(-sol.S / h)


def _y_integral(m, t, h, x, n_y, opts):
    """Gauss-Hermite integral of the diagonal kernel over y at fixed x."""
    d = m.dim
    u, w = np.polynomial.hermite.hermgauss(n_y)
    s = np.sqrt(h * t / 6.0)
    total = 0.0
    for idx in itertools.product(range(n_y), repeat=d):
        y = s * u[list(idx)]
        weight = np.prod(w[list(idx)]) * s**d
        val = _diag_kernel(m, t, h, x, y, opts)
        total += weight * val * np.exp(6.0 * (y @ y) / (h * t))
    return total


def local_trace(m: MetricModel, vol_M: Optional[float], t, h, n_y: int = 24,
                x_box: Optional[float] = None, n_x: int = 3, check: bool = True,
                rtol: float = 1e-6, opts: Optional[BvpOptions] = None) -> TraceEstimate:
    """Diagonal integral of the bvp-mode kernel.

    With ``x_box`` unset the integrand is taken to be independent of x (flat
    metrics) and multiplied by ``vol_M``.  Otherwise x runs over the cube
    [-x_box, x_box]^d with ``n_x`` Gauss-Legendre nodes per axis and the
    leading term uses the cube volume.  The y-integral is Gauss-Hermite
    against exp(-6|y|^2/(h t)); with ``check`` it is repeated with four more
    nodes per axis.

    Raises
    ------
    QuadratureFailure
        if the two y-rules differ by more than ``rtol``, or a diagonal
        problem cannot be solved.
    """
    if not (t > 0 and h > 0):
        raise ValueError("t and h must be positive")
    d = m.dim
    opts = opts or BvpOptions()
    if x_box is None:
        if vol_M is None:
            raise ValueError("vol_M is required without an x box")
        xs, wx, vol = [np.zeros(d)], [1.0], float(vol_M)
        scale = vol
    else:
        nodes, weights = np.polynomial.legendre.leggauss(n_x)
        xs, wx = [], []
        for idx in itertools.product(range(n_x), repeat=d):
            xs.append(x_box * nodes[list(idx)])
            wx.append(np.prod(weights[list(idx)]) * x_box**d)
        vol = (2 * x_box) ** d
        scale = 1.0

    def integrate(ny):
        acc = 0.0
        for x, w in zip(xs, wx):
            acc += w * _y_integral(m, t, h, x, ny, opts)
        return acc * scale

    try:
        value = integrate(n_y)
        err = 0.0
        if check:
            alt = integrate(n_y + 4)
            err = abs(alt - value) / abs(alt)
            if err > rtol:
                raise QuadratureFailure(f"y-quadrature not converged (rel. change {err:.2e})")
            value = alt
    except NumericalError as exc:
        if isinstance(exc, QuadratureFailure):
            raise
        raise QuadratureFailure(f"diagonal problem failed: {exc}") from exc
    lead = leading_trace(vol, t, h, d)
    return TraceEstimate(value, float(t), float(h), lead,
                         {"leading": lead, "correction": value - lead}, err)


def fit_power(t, values):
    """Least-squares slope and prefactor of log|values| against log t."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    beta, logc = np.polyfit(np.log(t), np.log(np.abs(v)), 1)
    return float(np.sign(np.median(v)) * np.exp(logc)), float(beta)


@dataclass
class CurvatureReport:
    """Deviation of the local trace from the flat leading term.

    ``odd`` and ``even`` are the parts of ratio - 1 that are odd and even
    under T -> -T; the power-law fit (c, beta) uses the odd part, which
    carries the response linear in the curvature.  The even part collects
    the quadratic effects such as det g != 1 away from the origin.
    """

    t_grid: np.ndarray
    h: float
    ratios: np.ndarray
    odd: np.ndarray
    even: np.ndarray
    c: float
    beta: float
    R: float
    estimates: list = field(default_factory=list, repr=False)


def curvature_probe(m: QuadraticNormalMetric, t_grid: Sequence[float], h: float,
                    x_box: float = 0.2, n_x: int = 3, n_y: int = 6, flat_tol: float = 1e-9,
                    opts: Optional[BvpOptions] = None) -> CurvatureReport:
    """Fit the curvature response of the local trace to c t^beta.

    The trace over the cube [-x_box, x_box]^d is computed for the model and
    for the model with the tensor negated; the odd combination is fitted.
    When it stays below ``flat_tol`` the fit is reported as c = 0,
    beta = nan.
    """
    if not isinstance(m, QuadraticNormalMetric):
        raise UnsupportedVariant("curvature probe needs a quadratic normal-coordinate metric")

    def ratios(model):
        ests = [local_trace(model, None, t, h, n_y=n_y, x_box=x_box, n_x=n_x, check=False,
                            opts=opts) for t in t_grid]
        return np.array([e.value / e.leading for e in ests]), ests

    rp, ests = ratios(m)
    if np.any(m.tensor != 0):
        rm, _ = ratios(QuadraticNormalMetric(-m.tensor))
    else:
        rm = rp
    odd = 0.5 * (rp - rm)
    even = 0.5 * (rp + rm) - 1.0
    if np.all(np.abs(odd) < flat_tol):
        c, beta = 0.0, float("nan")
    else:
        c, beta = fit_power(t_grid, odd)
    return CurvatureReport(np.asarray(t_grid, dtype=float), float(h), rp, odd, even, c, beta,
                           float(scalar_curvature(m)), ests)
