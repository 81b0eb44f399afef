import os
import subprocess
import sys

import numpy as np
import pytest

from kinwkb import _backend, kappa_model
from kinwkb.bvp import BvpOptions, solve_bvp
from kinwkb.hamiltonian_flow import CotangentState, FlowOptions, integrate_flow, variational_flow

compiled = pytest.mark.skipif(not _backend.COMPILED_AVAILABLE, reason="compiled core not built")


@compiled
def test_flow_backends_agree(kappa):
    s0 = CotangentState.make([0.05, -0.02], [0.3, -0.1], [0.4, 0.2], [1.0, -0.5])
    a = variational_flow(kappa, s0, 0.4, FlowOptions(backend="compiled"))
    b = variational_flow(kappa, s0, 0.4, FlowOptions(backend="python"))
    assert np.allclose(a.jac, b.jac, rtol=0, atol=1e-12)
    fa = integrate_flow(kappa, s0, 0.4, FlowOptions(backend="compiled")).final.vector()
    fb = integrate_flow(kappa, s0, 0.4, FlowOptions(backend="python")).final.vector()
    assert np.allclose(fa, fb, rtol=0, atol=1e-12)


@compiled
def test_bvp_backends_agree(kappa):
    args = (kappa, 0.2, [0, 0], [0.2, -0.1], [-0.04, 0.03], [0.3, -0.05])
    a = solve_bvp(*args, BvpOptions(flow=FlowOptions(backend="compiled")))
    b = solve_bvp(*args, BvpOptions(flow=FlowOptions(backend="python")))
    assert a.S == pytest.approx(b.S, rel=1e-11)
    assert a.J == pytest.approx(b.J, rel=1e-9)


@compiled
def test_em_step_backends_agree(rng):
    m = kappa_model(0.25)
    T = np.ascontiguousarray(m.tensor)
    dw = rng.standard_normal((500, 2)) * 0.05
    out = []
    for b in ("compiled", "python"):
        x = np.full((500, 2), 0.05)
        y = np.full((500, 2), 0.2)
        for _ in range(10):
            _backend.em_step(x, y, dw, 0.005, T, np.sqrt(0.5), b)
        out.append(np.hstack([x, y]))
    assert np.allclose(out[0], out[1], rtol=0, atol=1e-13)


def test_env_var_forces_fallback():
    code = "from kinwkb import _backend; print(_backend.DEFAULT_BACKEND)"
    env = dict(os.environ, KINWKB_PURE_PYTHON="1")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert res.stdout.strip() == "python"
    env.pop("KINWKB_PURE_PYTHON")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert res.stdout.strip() == ("compiled" if _backend.COMPILED_AVAILABLE else "python")


def test_extension_metrics_use_python(kappa):
    from kinwkb import ExtensionMetric
    ext = ExtensionMetric(2, lambda x: None)
    assert _backend.resolve(ext, "compiled") == "python"
