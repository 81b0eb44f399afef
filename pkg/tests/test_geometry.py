import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinwkb import (ExtensionMetric, FlatMetric, QuadraticNormalMetric, kappa_model, metric_jet,
                    scalar_curvature, validate_normal_coords)
from kinwkb.errors import NonPositiveDefinite, OutOfChart, UnsupportedVariant
from kinwkb.geometry import tensor_from_triplets


def _fd(f, x, h=1e-3):
    """Fourth-order central differences of f along each coordinate."""
    out = []
    for i in range(x.size):
        e = np.zeros_like(x); e[i] = h
        out.append((-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h))
    return np.stack(out, axis=-1)


def test_flat_jet_is_trivial():
    j = metric_jet(FlatMetric(1), np.array([0.3]))
    assert j.g == pytest.approx(np.eye(1)) and j.G == pytest.approx(np.eye(1))
    for a in (j.dg, j.dG, j.d2g, j.d2G):
        assert np.all(a == 0)


def test_kappa_metric_value(kappa):
    # g11 = 1 + 1/2 (-2 kappa) x1^2 = 1 - 0.0025 at x = (0.1, 0)
    j = metric_jet(kappa, np.array([0.1, 0.0]))
    assert j.g[0, 0] == pytest.approx(0.9975, abs=1e-15)
    assert j.g[1, 1] == pytest.approx(1.0025, abs=1e-15)
    assert j.g[0, 1] == 0


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8)))
def test_jets_against_finite_differences(x):
    m = kappa_model(0.25)
    x = np.array(x)
    j = m.jet(x, 3)
    assert np.max(np.abs(j.g @ j.G - np.eye(2))) < 1e-12
    dG_fd = _fd(lambda z: m.jet(z, 0).G, x)
    d2G_fd = _fd(lambda z: m.jet(z, 1).dG, x)
    dg_fd = _fd(lambda z: m.metric_at(z), x)
    assert np.allclose(j.dG, dG_fd, rtol=1e-6, atol=1e-9)
    assert np.allclose(j.d2G, d2G_fd, rtol=1e-6, atol=1e-9)
    assert np.allclose(j.dg, dg_fd, rtol=1e-6, atol=1e-9)
    # symmetric in the upper pair
    assert np.allclose(j.dG, j.dG.transpose(1, 0, 2))
    assert np.allclose(j.d2G, j.d2G.transpose(1, 0, 2, 3))


def test_zero_tensor_matches_flat():
    q = QuadraticNormalMetric(np.zeros((2, 2, 2, 2)))
    f = FlatMetric(2)
    x = np.array([0.3, -0.7])
    a, b = q.jet(x, 2), f.jet(x, 2)
    for k in ("g", "G", "dg", "dG", "d2g", "d2G"):
        assert np.array_equal(getattr(a, k), getattr(b, k))


def test_validate_normal_coords(kappa):
    flat = validate_normal_coords(QuadraticNormalMetric(np.zeros((2,) * 4)))
    assert flat.symmetry_ij == flat.symmetry_kl == flat.trace_free == 0
    rep = validate_normal_coords(kappa)
    assert rep.trace_free == 0
    assert rep.det_exponent >= 3.5
    bad = QuadraticNormalMetric(tensor_from_triplets(2, [(0, 0, 1, 1, 1.0)]))
    assert validate_normal_coords(bad).trace_free == pytest.approx(1.0)


def test_scalar_curvature(kappa):
    assert scalar_curvature(QuadraticNormalMetric(np.zeros((2,) * 4))) == 0
    assert scalar_curvature(kappa) == pytest.approx(-1.0)
    assert scalar_curvature(kappa.scaled(3.0)) == pytest.approx(-3.0)
    with pytest.raises(UnsupportedVariant):
        scalar_curvature(ExtensionMetric(2, lambda x: None))


def test_chart_guards(kappa):
    with pytest.raises(OutOfChart):
        kappa.jet(np.array([10.0, 0.0]))
    strong = QuadraticNormalMetric(tensor_from_triplets(1, [(0, 0, 0, 0, -4.0)]))
    r = strong.validity_radius
    assert r == pytest.approx(np.sqrt(0.5))
    assert np.all(np.linalg.eigvalsh(strong.metric_at(np.array([0.99 * r]))) > 0)


def test_rejects_asymmetric_tensor():
    T = np.zeros((2,) * 4)
    T[0, 1, 0, 0] = 1.0
    with pytest.raises(ValueError):
        QuadraticNormalMetric(T)


def test_extension_metric_delegates(kappa):
    ext = ExtensionMetric(2, lambda x: (lambda j: (j.g, j.dg, j.d2g, j.d3g))(kappa.jet(x, 3)))
    x = np.array([0.2, 0.1])
    a, b = ext.jet(x, 2), kappa.jet(x, 2)
    assert np.allclose(a.G, b.G) and np.allclose(a.d2G, b.d2G)
