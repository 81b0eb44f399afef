import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinwkb import kappa_model
from kinwkb.bvp import BvpOptions, diffeo_check, forward_map, leading_guess, solve_bvp
from kinwkb.errors import DegenerateTime, NoConvergence
from kinwkb.hamiltonian_flow import free_flow


def test_leading_guess_examples():
    q0, p0 = leading_guess(1.0, [0], [0], [-0.5], [1])
    assert q0 == pytest.approx([1.0]) and p0 == pytest.approx([0.0], abs=1e-15)
    q0, p0 = leading_guess(1.0, [0], [0], [0], [1])
    assert q0 == pytest.approx([-2.0]) and p0 == pytest.approx([6.0])
    q0, p0 = leading_guess(0.5, [0.2], [0.4], [0.2 - 0.4 * 0.5], [0.4])
    assert np.allclose(q0, 0) and np.allclose(p0, 0)
    with pytest.raises(DegenerateTime):
        leading_guess(1e-13, [0], [0], [0], [0])


def test_flat_solve_one_step(flat1):
    sol = solve_bvp(flat1, 1.0, [0], [0], [-0.5], [1])
    assert sol.q0 == pytest.approx([1.0], abs=1e-14) and sol.p0 == pytest.approx([0.0], abs=1e-13)
    assert sol.iterations <= 1 and sol.residual < 1e-14


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.sampled_from([0.1, 0.2, 0.4]))
def test_round_trip(u, t):
    m = kappa_model(0.25)
    c = 0.1
    q0 = np.array(u[:2]) * c**2 / t**2
    p0 = np.array(u[2:]) * c**3 / t**3
    x0, y0 = np.array([0.05, -0.02]), np.array([0.3, 0.1])
    fin = forward_map(m, t, x0, y0, q0, p0).flow.final
    sol = solve_bvp(m, t, x0, y0, fin.x, fin.y)
    assert np.max(np.abs(sol.q0 - q0)) <= 1e-8 * max(1, c**2 / t**2)
    assert np.max(np.abs(sol.p0 - p0)) <= 1e-8 * max(1, c**3 / t**3)


def test_kappa_iterations_and_quadratic_convergence(kappa):
    t = 0.2
    x0, y0 = np.zeros(2), np.array([0.2, -0.1])
    xt, yt = free_flow(kappa, x0, y0, t)
    sol = solve_bvp(kappa, t, x0, y0, xt + np.array([0.01, -0.02]), yt + np.array([0.1, 0.05]))
    assert sol.iterations <= 8
    h = sol.history
    for a, b in zip(h[:-1], h[1:]):
        if 0 < a < 1e-3 and b > 1e-13:
            assert b <= 10 * a * a


def test_leading_guess_error_is_order_t(kappa):
    errs = []
    ts = np.array([0.4, 0.2, 0.1, 0.05])
    x0, y0 = np.zeros(2), np.array([0.3, -0.2])
    for t in ts:
        xt, yt = free_flow(kappa, x0, y0, t)
        x, y = xt + t * np.array([0.3, 0.1]), yt + np.array([0.2, -0.4])
        sol = solve_bvp(kappa, t, x0, y0, x, y)
        g = np.concatenate(leading_guess(t, x0, y0, x, y, kappa))
        errs.append(np.linalg.norm(g - sol.zeta) / np.linalg.norm(sol.zeta))
    assert np.polyfit(np.log(ts), np.log(errs), 1)[0] >= 0.9


def test_errors(kappa):
    with pytest.raises(NoConvergence):
        solve_bvp(kappa, 0.2, [0, 0], [0, 0], [0.05, 0.0], [0.3, 0.0], BvpOptions(max_iter=0))


def test_diffeo_flat(flat1):
    rep = diffeo_check(flat1, 0.5, [0.0], [0.2], c=0.1, n_samples=50, seed=3)
    assert rep.failures == 0 and rep.max_roundtrip <= 1e-9
    assert rep.min_absJ == pytest.approx(0.5**4 / 12, rel=1e-10)


def test_diffeo_kappa(kappa):
    rep = diffeo_check(kappa, 0.1, [0.0, 0.0], [0.1, 0.0], c=0.1, n_samples=200, seed=1)
    assert rep.failures == 0
    assert rep.max_roundtrip <= 1e-8
    assert rep.min_absJ > 0.5 * rep.natural_J
    assert rep.coverage_radius > 0
