"""Select the compiled core or the pure-Python fallback.

The choice is made once at import.  Setting ``KINWKB_PURE_PYTHON=1`` forces
the fallback; individual calls may also request a backend explicitly.
"""
from __future__ import annotations

import logging
import os

import numpy as np

from . import _pyflow
from .errors import BlowUp, NonPositiveDefinite, OutOfChart, StepFailure
from .geometry import QuadraticNormalMetric

log = logging.getLogger(__name__)

try:
    from . import _core  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - exercised only without a build
    _core = None

COMPILED_AVAILABLE = _core is not None
DEFAULT_BACKEND = (
    "compiled" if COMPILED_AVAILABLE and os.environ.get("KINWKB_PURE_PYTHON") != "1" else "python"
)
if DEFAULT_BACKEND == "python":
    log.debug("compiled core not in use; running pure-Python kernels")


def resolve(model, backend: str | None = None) -> str:
    backend = backend or DEFAULT_BACKEND
    if backend == "auto":
        backend = DEFAULT_BACKEND
    if backend == "compiled":
        if not COMPILED_AVAILABLE:
            raise RuntimeError("compiled core requested but not built")
        if not isinstance(model, QuadraticNormalMetric) or model.dim > _core.MAX_DIM:
            return "python"
    return backend


def run_flow(model, aug0, t_end, with_jac, with_action, rtol, atol, t_eval=None,
             max_steps=200000, blowup=1e6, backend=None):
    """Integrate the augmented Hamiltonian system; raise on failure."""
    aug0 = np.ascontiguousarray(aug0, dtype=float)
    n_state = 4 * model.dim
    t_eval = np.empty(0) if t_eval is None else np.ascontiguousarray(t_eval, dtype=float)
    which = resolve(model, backend)
    if which == "compiled":
        samples = np.empty((t_eval.size, aug0.size))
        y, status, steps, rejected, drift, t = _core.integrate(
            model.tensor, aug0, n_state, float(t_end), rtol, atol, t_eval, samples,
            with_jac, with_action, max_steps, blowup, model.validity_radius,
        )
        res = dict(y=y, samples=samples, status=status, steps=steps, rejected=rejected,
                   energy_drift=drift, t=t)
    else:
        field = _pyflow.GenericField(model, with_jac, with_action)
        res = _pyflow.integrate(field, field.energy, aug0, n_state, float(t_end), rtol, atol,
                                t_eval, max_steps, blowup)
    res["backend"] = which
    status = res["status"]
    if status == _pyflow.STATUS_STEP_FAILURE:
        raise StepFailure(f"integration stalled at t={res['t']:.6g} after {res['steps']} steps")
    if status == _pyflow.STATUS_BLOWUP:
        raise BlowUp(f"state norm exceeded {blowup:g} at t={res['t']:.6g}")
    if status == _pyflow.STATUS_OUT_OF_CHART:
        if which == "compiled":
            raise OutOfChart(f"trajectory left the chart at t={res['t']:.6g}")
        raise NonPositiveDefinite(f"metric degenerate along trajectory at t={res['t']:.6g}")
    return res


def em_step(x, y, dw, dt, T, sqrt_h, backend=None):
    """Euler-Maruyama step in place; returns the count of degenerate paths."""
    if (backend or DEFAULT_BACKEND) == "compiled" and COMPILED_AVAILABLE and x.shape[1] <= _core.MAX_DIM:
        return _core.em_step(x, y, dw, dt, T, sqrt_h)
    return _em_step_numpy(x, y, dw, dt, T, sqrt_h)


def _em_step_numpy(x, y, dw, dt, T, sqrt_h):
    d = x.shape[1]
    dg = np.einsum("ijkl,nl->nijk", T, x)
    g = np.eye(d) + 0.5 * np.einsum("nijk,nk->nij", dg, x)
    try:
        L = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        ok = np.all(np.linalg.eigvalsh(g) > 0, axis=1)
        bad = int((~ok).sum())
        idx = np.nonzero(ok)[0]
        xs, ys = x[idx], y[idx]
        _em_step_numpy(xs, ys, dw[idx], dt, T, sqrt_h)
        x[idx], y[idx] = xs, ys
        return bad
    w = np.linalg.solve(g, y[..., None])[..., 0]
    v = -np.einsum("nj,njki,nk->ni", w, dg, w)
    x -= w * dt
    y += 0.5 * v * dt + sqrt_h * np.einsum("nij,nj->ni", L, dw)
    return 0
