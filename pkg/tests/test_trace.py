import numpy as np
import pytest

from kinwkb import ExtensionMetric, FlatMetric, QuadraticNormalMetric, kappa_model
from kinwkb.errors import UnsupportedVariant
from kinwkb.trace import curvature_probe, fit_power, leading_trace, local_trace

T_GRID = [0.4, 0.2, 0.1, 0.05]


def test_flat_circle():
    est = local_trace(FlatMetric(1), 2 * np.pi, 0.5, 1.0)
    assert est.leading == pytest.approx(7.0898154036, rel=1e-9)
    assert abs(est.value - est.leading) <= 1e-6
    assert est.value > 0


@pytest.mark.parametrize("d", [1, 2])
def test_flat_t_exponent(d):
    vals = [local_trace(FlatMetric(d), 1.0, t, 1.0, n_y=8).value for t in T_GRID]
    _, beta = fit_power(T_GRID, vals)
    assert beta == pytest.approx(-1.5 * d, rel=1e-2)
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_flat_h_scaling():
    hs = [1.0, 0.5, 0.25]
    vals = [local_trace(FlatMetric(1), 1.0, 0.3, h).value for h in hs]
    _, beta = fit_power(hs, vals)
    assert beta == pytest.approx(-0.5, rel=1e-2)


def test_leading_closed_form():
    assert leading_trace(1.0, 1.0, 1.0, 2) == pytest.approx(1 / (2 * np.pi))


def test_flat_requires_volume():
    with pytest.raises(ValueError):
        local_trace(FlatMetric(1), None, 0.5, 1.0)
    with pytest.raises(ValueError):
        local_trace(FlatMetric(1), 1.0, -0.5, 1.0)


def test_zero_tensor_probe():
    rep = curvature_probe(QuadraticNormalMetric(np.zeros((2, 2, 2, 2))), [0.2, 0.1], 1.0,
                          n_x=2, n_y=4)
    assert rep.c == 0.0
    assert np.allclose(rep.ratios, 1.0, atol=1e-9)


def test_kappa_probe_report():
    rep = curvature_probe(kappa_model(0.25), [0.2, 0.1], 1.0, n_x=2, n_y=4)
    assert rep.R == pytest.approx(-1.0)
    assert rep.c < 0
    assert np.all(np.isfinite(rep.even))
    with pytest.raises(UnsupportedVariant):
        curvature_probe(ExtensionMetric(2, lambda x: (np.eye(2), np.zeros((2, 2, 2)),
                                                      np.zeros((2, 2, 2, 2)))), [0.2], 1.0)
