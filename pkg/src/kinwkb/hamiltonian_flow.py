"""Degenerate Hamiltonian system on the cotangent bundle and its linearization.

The Hamiltonian is

    H(x, y, q, p) = 1/2 q.g(x)q - p.G(x)y + 1/2 sum_i q_i y.dG_i(x).y

and the canonical equations are

    xdot = -G y,   ydot = g q + 1/2 v,   qdot = -dH/dy,   pdot = -dH/dx,

with ``v_i = y.dG_i.y``.  State vectors are always ordered (x, y, q, p).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _backend
from ._pyflow import energy_from_jet, field_from_jet
from .errors import BlowUp, DegenerateTime, NumericalError
from .geometry import MetricModel

__all__ = [
    "CotangentState",
    "FlowOptions",
    "FlowResult",
    "VariationalResult",
    "ScalingReport",
    "hamiltonian",
    "hamiltonian_rhs",
    "integrate_flow",
    "variational_flow",
    "free_flow",
    "xy_block",
    "symplectic_form",
    "check_scaling_hypothesis",
]


@dataclass(frozen=True)
class CotangentState:
    x: np.ndarray
    y: np.ndarray
    q: np.ndarray
    p: np.ndarray

    @classmethod
    def from_vector(cls, v, d: int) -> "CotangentState":
        v = np.asarray(v, dtype=float)
        return cls(v[:d].copy(), v[d : 2 * d].copy(), v[2 * d : 3 * d].copy(), v[3 * d : 4 * d].copy())

    @classmethod
    def make(cls, x, y, q=None, p=None) -> "CotangentState":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        q = np.zeros_like(x) if q is None else np.atleast_1d(np.asarray(q, dtype=float))
        p = np.zeros_like(x) if p is None else np.atleast_1d(np.asarray(p, dtype=float))
        return cls(x, y, q, p)

    @property
    def dim(self) -> int:
        return self.x.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, self.q, self.p])


@dataclass
class FlowOptions:
    """Integrator settings shared by all flow-based routines."""

    rtol: float = 1e-12
    atol: float = 1e-12
    max_steps: int = 200000
    blowup: float = 1e6
    backend: Optional[str] = None


@dataclass
class FlowResult:
    final: CotangentState
    times: np.ndarray
    trajectory: np.ndarray = field(repr=False)
    energy_drift: float
    steps: int
    backend: str = "python"


@dataclass
class VariationalResult:
    flow: FlowResult
    jac: np.ndarray = field(repr=False)
    J: float
    action: Optional[float] = None
    jac_trajectory: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def block(self) -> np.ndarray:
        """d(X, Y)/d(q0, p0)."""
        return xy_block(self.jac, self.flow.final.dim)


def xy_block(jac: np.ndarray, d: int) -> np.ndarray:
    return jac[: 2 * d, 2 * d :]


def symplectic_form(d: int) -> np.ndarray:
    """Canonical form pairing x with p and y with q in (x, y, q, p) order."""
    n = 4 * d
    I = np.eye(d)
    Om = np.zeros((n, n))
    Om[:d, 3 * d :] = I
    Om[3 * d :, :d] = -I
    Om[d : 2 * d, 2 * d : 3 * d] = I
    Om[2 * d : 3 * d, d : 2 * d] = -I
    return Om


def hamiltonian(m: MetricModel, s: CotangentState) -> float:
    jet = m.jet(s.x, 2)
    return float(energy_from_jet(jet, s.vector(), m.dim))


def hamiltonian_rhs(m: MetricModel, s: CotangentState) -> CotangentState:
    jet = m.jet(s.x, 2)
    f, _, _ = field_from_jet(jet, s.vector(), m.dim, False)
    return CotangentState.from_vector(f, m.dim)


def _check_time(t):
    if not np.isfinite(t) or t < 0:
        raise DegenerateTime(f"flow time must be finite and non-negative, got {t}")


def _sample_times(t, t_eval, n_samples):
    if t_eval is None:
        return np.linspace(0.0, t, n_samples) if t > 0 else np.zeros(1)
    te = np.asarray(t_eval, dtype=float)
    if te.size and (te[0] < 0 or te[-1] > t or np.any(np.diff(te) <= 0)):
        raise ValueError("t_eval must be strictly increasing within [0, t]")
    return te


def integrate_flow(m: MetricModel, s0: CotangentState, t: float,
                   opts: Optional[FlowOptions] = None, t_eval=None,
                   n_samples: int = 33) -> FlowResult:
    """Integrate the Hamiltonian system from ``s0`` for time ``t``.

    Raises
    ------
    StepFailure, BlowUp, OutOfChart
    """
    opts = opts or FlowOptions()
    _check_time(t)
    te = _sample_times(t, t_eval, n_samples)
    d = m.dim
    res = _backend.run_flow(m, s0.vector(), t, False, False, opts.rtol, opts.atol, te,
                            opts.max_steps, opts.blowup, opts.backend)
    return FlowResult(
        final=CotangentState.from_vector(res["y"], d),
        times=te,
        trajectory=res["samples"],
        energy_drift=float(res["energy_drift"]),
        steps=int(res["steps"]),
        backend=res["backend"],
    )


def variational_flow(m: MetricModel, s0: CotangentState, t: float,
                     opts: Optional[FlowOptions] = None, with_action: bool = False,
                     t_eval=None, n_samples: int = 2) -> VariationalResult:
    """Flow together with its tangent matrix d(X,Y,Q,P)(t)/d(x0,y0,q0,p0).

    ``J`` is the determinant of the (X, Y) x (q0, p0) block.  With
    ``with_action`` the integral of p.xdot + q.ydot - H rides along.
    """
    opts = opts or FlowOptions()
    _check_time(t)
    d = m.dim
    n = 4 * d
    te = _sample_times(t, t_eval, n_samples)
    aug = np.concatenate([s0.vector(), np.eye(n).ravel()] + ([np.zeros(1)] if with_action else []))
    res = _backend.run_flow(m, aug, t, True, with_action, opts.rtol, opts.atol, te,
                            opts.max_steps, opts.blowup, opts.backend)
    y = res["y"]
    jac = y[n : n + n * n].reshape(n, n)
    flow = FlowResult(
        final=CotangentState.from_vector(y[:n], d),
        times=te,
        trajectory=res["samples"][:, :n],
        energy_drift=float(res["energy_drift"]),
        steps=int(res["steps"]),
        backend=res["backend"],
    )
    J = float(np.linalg.det(xy_block(jac, d)))
    jt = res["samples"][:, n : n + n * n].reshape(-1, n, n)
    return VariationalResult(flow, jac, J, float(y[-1]) if with_action else None, jt)


def free_flow(m: MetricModel, x0, y0, t: float, opts: Optional[FlowOptions] = None,
              t_eval=None):
    """Endpoint (x~, y~) of the geodesic started at (x0, y0) with q = p = 0."""
    s0 = CotangentState.make(x0, y0)
    if t == 0:
        return s0.x.copy(), s0.y.copy()
    fr = integrate_flow(m, s0, t, opts, t_eval=t_eval)
    if t_eval is not None:
        return fr.trajectory[:, : m.dim], fr.trajectory[:, m.dim : 2 * m.dim]
    return fr.final.x, fr.final.y


@dataclass
class ScalingReport:
    t_grid: np.ndarray
    k_fit: dict
    ratios: dict = field(repr=False)
    slopes: dict
    predicted: dict
    blowups: int = 0

    def slope_errors(self) -> dict:
        return {k: abs(self.slopes[k] - self.predicted[k]) for k in self.slopes}


def _unit(rng, d):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def check_scaling_hypothesis(m: MetricModel, x0, c: float, t_grid: Sequence[float],
                             n_samples: int = 4, seed: int = 0,
                             opts: Optional[FlowOptions] = None) -> ScalingReport:
    """Probe the scaled-polydisk growth bounds and the Jacobian power laws.

    Initial data lie on the boundary ``|y0| = c/t, |q0| = c^2/t^2,
    |p0| = c^3/t^3``.  For each component the largest ratio of the
    displacement to its bound is reported as the fitted constant ``k``.
    Log-log slopes of the block norms of dX/dp0, dX/dq0, dY/dp0, dY/dq0 are
    fitted against t; the leading predictions are 3, 2, 2, 1.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0) or np.any(np.diff(t_grid) >= 0):
        raise ValueError("t_grid must be positive and decreasing")
    d = m.dim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    rng = np.random.default_rng(seed)
    dirs = [(_unit(rng, d), _unit(rng, d), _unit(rng, d)) for _ in range(n_samples)]
    names = ("x", "y", "q", "p")
    ratios = {k: np.full((t_grid.size, n_samples), np.nan) for k in names}
    blocks = {k: np.full((t_grid.size, n_samples), np.nan) for k in ("Xp", "Xq", "Yp", "Yq")}
    blowups = 0
    for it, t in enumerate(t_grid):
        bounds = [t * (1 + c / t), t * (1 + c**2 / t**2), t * (1 + c**3 / t**3), t * (1 + c**4 / t**4)]
        for js, (u, v, w) in enumerate(dirs):
            s0 = CotangentState(x0, c / t * u, c**2 / t**2 * v, c**3 / t**3 * w)
            try:
                vr = variational_flow(m, s0, t, opts)
            except (BlowUp, NumericalError):
                blowups += 1
                continue
            z0, z1 = s0.vector(), vr.flow.final.vector()
            for ic, name in enumerate(names):
                disp = np.linalg.norm(z1[ic * d : (ic + 1) * d] - z0[ic * d : (ic + 1) * d])
                ratios[name][it, js] = disp / bounds[ic]
            J = vr.jac
            blocks["Xp"][it, js] = np.linalg.norm(J[:d, 3 * d :], 2)
            blocks["Xq"][it, js] = np.linalg.norm(J[:d, 2 * d : 3 * d], 2)
            blocks["Yp"][it, js] = np.linalg.norm(J[d : 2 * d, 3 * d :], 2)
            blocks["Yq"][it, js] = np.linalg.norm(J[d : 2 * d, 2 * d : 3 * d], 2)
    k_fit = {k: float(np.nanmax(r)) if np.any(np.isfinite(r)) else float("nan") for k, r in ratios.items()}
    slopes = {}
    lt = np.log(t_grid)
    for k, b in blocks.items():
        mean = np.nanmean(b, axis=1)
        slopes[k] = float(np.polyfit(lt, np.log(mean), 1)[0])
    predicted = {"Xp": 3.0, "Xq": 2.0, "Yp": 2.0, "Yq": 1.0}
    return ScalingReport(t_grid, k_fit, ratios, slopes, predicted, blowups)
