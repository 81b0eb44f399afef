import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinwkb import FlatMetric, kappa_model
from kinwkb.errors import BlowUp, DegenerateTime
from kinwkb.hamiltonian_flow import (CotangentState, FlowOptions, check_scaling_hypothesis,
                                     free_flow, hamiltonian, hamiltonian_rhs, integrate_flow,
                                     symplectic_form, variational_flow, xy_block)


def flat_closed_form(x0, y0, q0, p0, t):
    x = x0 - y0 * t - 0.5 * q0 * t**2 - p0 * t**3 / 6
    y = y0 + q0 * t + 0.5 * p0 * t**2
    return np.concatenate([x, y, q0 + p0 * t, p0])


def test_hamiltonian_values(flat1, flat2, kappa):
    assert hamiltonian(flat1, CotangentState.make([0], [0], [1], [0])) == 0.5
    assert hamiltonian(flat1, CotangentState.make([0], [1], [0], [1])) == -1.0
    s = CotangentState.make([0, 0], [0.3, -1.2], [0.7, 0.1], [2.0, -0.4])
    assert hamiltonian(kappa, s) == pytest.approx(hamiltonian(flat2, s), abs=1e-15)


def test_rhs_flat(flat1):
    r = hamiltonian_rhs(flat1, CotangentState.make([0], [1], [0], [0]))
    assert np.allclose(r.vector(), [-1, 0, 0, 0])
    r = hamiltonian_rhs(flat1, CotangentState.make([0], [0], [1], [0]))
    assert np.allclose(r.vector(), [0, 1, 0, 0])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8))
def test_rhs_is_canonical(v):
    """The vector field equals (dH/dp, dH/dq, -dH/dy, -dH/dx) by finite differences."""
    m = kappa_model(0.25)
    z = np.array(v)
    z[:2] *= 0.5
    H = lambda w: hamiltonian(m, CotangentState.from_vector(w, 2))
    grad = np.empty(8)
    h = 1e-5
    for i in range(8):
        e = np.zeros(8); e[i] = h
        grad[i] = (H(z + e) - H(z - e)) / (2 * h)
    gx, gy, gq, gp = grad[:2], grad[2:4], grad[4:6], grad[6:]
    r = hamiltonian_rhs(m, CotangentState.from_vector(z, 2)).vector()
    assert np.allclose(r, np.concatenate([gp, gq, -gy, -gx]), atol=1e-8)


def test_integrate_flat_closed_forms(flat1):
    fr = integrate_flow(flat1, CotangentState.make([0], [1], [0], [0]), 1.0)
    assert np.allclose(fr.final.vector(), [-1, 1, 0, 0], atol=1e-12)
    fr = integrate_flow(flat1, CotangentState.make([0], [0], [1], [0]), 1.0)
    assert np.allclose(fr.final.vector(), [-0.5, 1, 1, 0], atol=1e-12)
    assert fr.times[0] == 0 and np.all(np.diff(fr.times) > 0)
    assert np.array_equal(fr.trajectory[0], [0, 0, 1, 0])


@pytest.mark.parametrize("d", [1, 2, 3])
def test_flat_closed_form_any_dim(d, rng):
    m = FlatMetric(d)
    x0, y0, q0, p0 = rng.normal(size=(4, d))
    fr = integrate_flow(m, CotangentState(x0, y0, q0, p0), 0.7)
    assert np.allclose(fr.final.vector(), flat_closed_form(x0, y0, q0, p0, 0.7), atol=1e-10)


def test_variational_flat(flat1):
    vr = variational_flow(flat1, CotangentState.make([0], [0], [0], [0]), 1.0)
    assert np.allclose(vr.block, [[-0.5, -1 / 6], [1, 0.5]], atol=1e-12)
    assert vr.J == pytest.approx(-1 / 12, abs=1e-12)
    for t in (0.1, 0.5, 1.0):
        vr = variational_flow(flat1, CotangentState.make([0.2], [0.1], [0], [0]), t)
        assert abs(abs(vr.J) - t**4 / 12) < 1e-10


def test_variational_at_time_zero(kappa):
    vr = variational_flow(kappa, CotangentState.make([0.1, 0], [0.2, 0.1], [0, 0], [0, 0]), 0.0)
    assert np.array_equal(vr.jac, np.eye(8))
    assert vr.J == 0


def test_variational_matches_finite_differences(kappa):
    s = CotangentState.make([0.1, -0.05], [0.4, 0.2], [0.3, -0.6], [1.0, 0.5])
    vr = variational_flow(kappa, s, 0.3)
    z = s.vector()
    fd = np.empty((8, 8))
    for i in range(8):
        e = np.zeros(8); e[i] = 1e-6
        a = integrate_flow(kappa, CotangentState.from_vector(z + e, 2), 0.3).final.vector()
        b = integrate_flow(kappa, CotangentState.from_vector(z - e, 2), 0.3).final.vector()
        fd[:, i] = (a - b) / 2e-6
    assert np.allclose(vr.jac, fd, atol=1e-7)
    assert np.allclose(xy_block(vr.jac, 2), vr.block)


def test_invariants_kappa(kappa, rng):
    opts = FlowOptions(rtol=1e-12, atol=1e-12)
    Om = symplectic_form(2)
    for _ in range(10):
        z = np.concatenate([rng.uniform(-0.3, 0.3, 2), rng.normal(size=6)])
        s = CotangentState.from_vector(z, 2)
        vr = variational_flow(kappa, s, 0.2, opts)
        H0 = hamiltonian(kappa, s)
        assert vr.flow.energy_drift <= 10 * 1e-12 * abs(H0) + 1e-13 + 1e-12
        assert np.linalg.norm(vr.jac.T @ Om @ vr.jac - Om) <= 1e-6
        assert np.linalg.det(vr.jac) == pytest.approx(1.0, abs=1e-8)


def test_second_derivatives_in_p0(flat1, kappa):
    """d^2 X / dp0^2 vanishes in the flat case and is of order >= 5 in t otherwise.

    Differences of the exact first-derivative block dX/dp0 are used.
    """
    def d2(m, x0, y0, t, h):
        d = m.dim
        def blk(p):
            pp = np.zeros(d); pp[0] = p
            s = CotangentState(np.asarray(x0, float), np.asarray(y0, float), np.zeros(d), pp)
            return variational_flow(m, s, t).jac[:d, 3 * d:]
        return np.abs((blk(h) - blk(-h)) / (2 * h)).max()

    assert d2(flat1, [0.0], [0.1], 0.5, 1.0) < 1e-12
    ts = np.array([0.4, 0.2, 0.1, 0.05])
    vals = [d2(kappa, [0.1, 0.05], [0.1, -0.2], t, 1e-4 / t**3) for t in ts]
    slope = np.polyfit(np.log(ts), np.log(vals), 1)[0]
    assert slope >= 5


def test_free_flow_flat_and_guard(flat1):
    x, y = free_flow(flat1, [0.3], [0.5], 2.0)
    assert x == pytest.approx([-0.7]) and y == pytest.approx([0.5])
    with pytest.raises(BlowUp):
        integrate_flow(flat1, CotangentState.make([0], [1e7], [0], [0]), 1.0)
    with pytest.raises((DegenerateTime, ValueError)):
        integrate_flow(flat1, CotangentState.make([0], [0], [0], [0]), -1.0)


def test_scaling_hypothesis_flat(flat1):
    rep = check_scaling_hypothesis(flat1, [0.0], 0.1, [0.4, 0.2, 0.1, 0.05])
    assert rep.slopes["Xp"] == pytest.approx(3.0, abs=1e-6)
    assert rep.slopes["Yq"] == pytest.approx(1.0, abs=1e-6)
    assert rep.blowups == 0


def test_scaling_hypothesis_kappa(kappa):
    rep = check_scaling_hypothesis(kappa, [0.0, 0.0], 0.1, [0.4, 0.2, 0.1, 0.05])
    assert all(v <= 0.1 for v in rep.slope_errors().values())
    assert all(np.isfinite(v) for v in rep.k_fit.values())
