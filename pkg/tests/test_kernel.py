import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinwkb import FlatMetric, kappa_model
from kinwkb.bvp import solve_bvp
from kinwkb.errors import DegenerateTime, StencilOutOfDomain
from kinwkb.kernel import (CutoffSpec, WkbKernel, amplitude_equivalence, apply_cutoff,
                           cutoff_weight,
                           evaluate_kernel, normalization_check, pde_residual)
from kinwkb.oracle import exact_flat_kernel

PEAK = np.sqrt(12.0) / (2 * np.pi)


def test_flat_values(flat1):
    k = WkbKernel(flat1, 1.0, [0.0], [0.0])
    assert evaluate_kernel(k, 1.0, 0.0, 0.0) == pytest.approx(PEAK, rel=1e-12)
    assert evaluate_kernel(k, 1.0, -0.5, 1.0) == pytest.approx(PEAK * np.exp(-0.5), rel=1e-10)
    assert PEAK == pytest.approx(0.551329, abs=1e-6)


def test_flat_modes_agree(flat2, rng):
    kb = WkbKernel(flat2, 0.7, [0.1, -0.2], [0.3, 0.1], "bvp")
    ks = WkbKernel(flat2, 0.7, [0.1, -0.2], [0.3, 0.1], "series")
    for _ in range(5):
        x, y = rng.normal(size=(2, 2)) * 0.3
        a, b = kb(0.4, x, y), ks(0.4, x, y)
        assert a == pytest.approx(b, rel=1e-10)
        z = np.concatenate([x, y])
        assert a == pytest.approx(exact_flat_kernel(0.4, 0.7, z, [0.1, -0.2, 0.3, 0.1], 2), rel=1e-10)


def test_flat_diagonal(flat1):
    t, h, y = 0.3, 0.5, 0.7
    k = WkbKernel(flat1, h, [0.2], [y])
    u = k(t, [0.2], [y])
    assert u == pytest.approx(PEAK / h * t**-2 * np.exp(-6 * y * y / (h * t)), rel=1e-10)


def test_amplitude_equivalence(flat1, kappa):
    sol = solve_bvp(flat1, 1.0, [0], [0.2], [-0.3], [0.5])
    rep = amplitude_equivalence(flat1, sol)
    assert rep.max_rel_dev <= 1e-8
    assert np.allclose(rep.liouville, 1.0, atol=1e-8)
    sol = solve_bvp(kappa, 0.3, [0, 0], [0.2, -0.1], [-0.05, 0.04], [0.25, 0.1])
    assert amplitude_equivalence(kappa, sol).max_rel_dev <= 1e-5
    with pytest.raises(DegenerateTime):
        amplitude_equivalence(kappa, sol, t_start=0.0)


def test_cutoff(kappa):
    k = WkbKernel(kappa, 0.5, [0, 0], [0, 0])
    spec = CutoffSpec(r=0.2, eps=0.25)
    t = 0.2
    x, y = np.array([0.01, 0.0]), np.array([0.05, 0.0])
    assert cutoff_weight(spec, t, x, y) == 1.0
    assert apply_cutoff(k, spec, t, x, y) == pytest.approx(k(t, x, y), rel=1e-12)
    assert apply_cutoff(k, spec, t, [0.3, 0.0], y) == 0.0
    x_mid = np.array([0.9 * 0.2, 0.0])
    v = apply_cutoff(k, spec, t, x_mid, y)
    assert 0 < v < k(t, x_mid, y)
    with pytest.raises(ValueError):
        CutoffSpec(r=0.2, eps=1.5)


def test_pde_residual_flat(flat1):
    k = WkbKernel(flat1, 0.5, [0.1], [0.2], "bvp")
    r = pde_residual(k, 0.5, [0.05], [0.4])
    assert abs(r.value) <= 1e-5


def test_pde_residual_stencil_convergence(kappa):
    k = WkbKernel(kappa, 0.2, [0, 0], [0.2, 0.1], "series")
    a = pde_residual(k, 0.2, [-0.03, -0.02], [0.25, 0.05], (1e-3, 1e-2, 1e-2))
    b = pde_residual(k, 0.2, [-0.03, -0.02], [0.25, 0.05], (5e-4, 5e-3, 5e-3))
    assert abs(a.value - b.value) < 0.1 * abs(b.value)
    with pytest.raises(StencilOutOfDomain):
        pde_residual(k, 0.2, [0, 0], [0, 0], (2.0, 1e-2, 1e-2))


def test_pde_residual_scaling(kappa):
    hs = np.array([0.4, 0.2, 0.1, 0.05])
    vals = []
    for h in hs:
        k = WkbKernel(kappa, h, [0, 0], [0, 0], "series")
        vals.append(abs(pde_residual(k, 0.2, [0, 0], [0, 0]).value))
    slope = np.polyfit(np.log(hs), np.log(vals), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


@pytest.mark.parametrize("t,h", [(0.1, 0.5), (0.5, 1.0), (1.0, 0.5)])
def test_normalization_flat(flat1, t, h):
    m1 = normalization_check(WkbKernel(flat1, h, [0.1], [0.3], "series"), t)
    m2 = normalization_check(WkbKernel(flat1, h, [0.1], [-0.3], "series"), t)
    assert m1 == pytest.approx(1.0, abs=1e-8)
    assert m1 == pytest.approx(m2, abs=1e-12)


def test_normalization_kappa(kappa):
    mass = normalization_check(WkbKernel(kappa, 0.5, [0, 0], [0, 0], "series"), 0.2)
    assert abs(mass - 1) <= 2e-2


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_positivity(v):
    k = WkbKernel(kappa_model(0.25), 0.5, [0, 0], [0.1, 0.0], "series")
    t = 0.2
    xt, yt = k.free(t)
    u = k(t, xt + 0.05 * np.array(v[:2]), yt + 0.5 * np.array(v[2:]))
    assert u > 0


def test_mode_agreement_improves_with_t(kappa):
    devs = []
    for t in (0.4, 0.2, 0.1):
        kb = WkbKernel(kappa, 0.5, [0, 0], [0.2, 0.1], "bvp")
        ks = WkbKernel(kappa, 0.5, [0, 0], [0.2, 0.1], "series")
        xt, yt = kb.free(t)
        x, y = xt + t**1.5 * np.array([0.3, -0.2]), yt + t**0.5 * np.array([0.2, 0.1])
        devs.append(abs(kb(t, x, y) - ks(t, x, y)) / kb(t, x, y))
    assert devs[0] > devs[1] > devs[2]
