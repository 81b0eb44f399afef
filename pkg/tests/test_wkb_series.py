from fractions import Fraction

import numpy as np
import pytest

from kinwkb import FlatMetric, kappa_model
from kinwkb.bvp import solve_bvp
from kinwkb.errors import DegenerateTime, NonHomogeneousInput, ResonantMode, UnsupportedVariant
from kinwkb.hamiltonian_flow import free_flow
from kinwkb.polynomial import Ring
from kinwkb.wkb_series import (ExpansionRing, ResonanceOperator, compare_tabulated, psi_series,
                               sigma_minus1, sigma_series, solve_linear_resonance, untransform)

F = Fraction


def test_eigenvalues():
    assert ResonanceOperator().eigenvalues() == [1, 2]


def test_resonance_example():
    R = Ring(["xi", "eta"])
    xi, eta = R.var(0), R.var(1)
    op = ResonanceOperator(F(1))
    u = solve_linear_resonance(op, xi * xi, [(0, 1)])
    assert u == xi * xi * F(4, 5) + xi * eta * F(3, 10) + eta * eta * F(1, 30)
    assert op.apply(u, [(0, 1)]) == xi * xi
    assert solve_linear_resonance(op, R.zero(), [(0, 1)]).is_zero()


def test_resonance_errors():
    R = Ring(["xi", "eta"])
    xi = R.var(0)
    with pytest.raises(ResonantMode):
        solve_linear_resonance(ResonanceOperator(F(-1)), xi, [(0, 1)])
    with pytest.raises(NonHomogeneousInput):
        solve_linear_resonance(ResonanceOperator(F(1)), xi + xi * xi, [(0, 1)],
                               require_homogeneous=True)


def test_sigma_minus1():
    s = sigma_minus1()
    assert (s.A, s.B, s.C) == (12, 6, 4)
    assert s.rejected == ((3, 3, 3),)
    er = ExpansionRing(1, np.zeros((1,) * 4))
    xi, eta = er.var(er.xi[0]), er.var(er.eta[0])
    assert s.poly(er) == xi * xi * 6 + xi * eta * 6 + eta * eta * 2
    assert s.poly(er).evaluate([1, 0, 0]) == 6
    H = np.array(s.hessian(), dtype=float)
    assert np.array_equal(H, [[12, 6], [6, 4]]) and np.all(np.linalg.eigvalsh(H) > 0)


def _check_equation(series, k):
    """Second route: (k + A z.grad) X_k + F_k = 0 applied directly."""
    op = ResonanceOperator(F(k))
    return (op.apply(series[k], series.er.pairs) + series.forcing[k]).is_zero()


@pytest.mark.parametrize("symbolic", [False, True])
def test_sigma_series_residual(symbolic):
    m = kappa_model(0.25)
    sig = sigma_series(2 if symbolic else m, None, 1, symbolic)
    assert sig.residual_is_zero
    assert _check_equation(sig, 1)
    assert sig[0].is_zero()
    assert not sig[1].is_zero()
    assert sig.degrees(1) == [4]


def test_series_flat_is_trivial():
    for d in (1, 2):
        sig = sigma_series(FlatMetric(d), None, 1)
        _, psi = psi_series(FlatMetric(d), None, 2)
        assert sig[1].is_zero() and psi[2].is_zero()


def test_psi_series():
    m = kappa_model(0.25)
    alpha, psi = psi_series(m, None, 2)
    assert alpha == 4
    assert psi_series(FlatMetric(1), None, 2)[0] == 2
    assert psi.residual_is_zero and _check_equation(psi, 2)
    assert psi[0] == psi.er.ring.const(1)
    assert psi[1].is_zero()
    assert max(psi.degrees(2)) <= 2
    _, sym = psi_series(2, None, 2, symbolic=True)
    assert sym.residual_is_zero


def test_linearity_in_tensor():
    a, b = kappa_model(0.25), kappa_model(0.5)
    sa, sb = sigma_series(a, None, 1), sigma_series(b, None, 1)
    pa, pb = psi_series(a, None, 2)[1], psi_series(b, None, 2)[1]
    assert sb[1] == sa[1] * 2
    assert pb[2] == pa[2] * 2


def test_y0_substitution_is_exact():
    m = kappa_model(0.25)
    sig = sigma_series(m, [0.5, -0.25], 1)
    assert sig.residual_is_zero
    assert sig.degrees(1) and max(sig.degrees(1)) == 4


def test_untransform_flat():
    m = FlatMetric(1)
    sig = sigma_series(m, None, 1)
    _, psi = psi_series(m, None, 2)
    S, phi = untransform(sig, psi, 1.0, [-0.5], [1.0], [0.0], [0.0], ([0.0], [0.0]))
    assert S == pytest.approx(0.5, abs=1e-15)
    assert phi == 1.0
    S, phi = untransform(sig, psi, 0.5, [0.1], [0.2], [0.0], [0.0], ([0.0], [0.0]))
    assert phi == pytest.approx(0.5**-2)
    with pytest.raises(DegenerateTime):
        untransform(sig, psi, 0.0, [0.1], [0.2], [0.0], [0.0], ([0.0], [0.0]))


def test_untransform_guard():
    m = kappa_model(0.25)
    sig = sigma_series(m, None, 1)
    with pytest.raises(UnsupportedVariant):
        untransform(sig, None, 0.2, [0.1, 0], [0, 0], [0.1, 0.0], [0, 0], ([0.1, 0], [0, 0]))


def test_series_against_bvp(kappa):
    y0 = np.array([0.3, -0.2])
    x0 = np.zeros(2)
    sig = sigma_series(kappa, y0, 1)
    ts = np.array([0.4, 0.2, 0.1, 0.05])
    err, err0 = [], []
    for t in ts:
        xt, yt = free_flow(kappa, x0, y0, t)
        x = xt + t * np.array([0.2, -0.1])
        y = yt + np.array([0.3, 0.1])
        Sb = solve_bvp(kappa, t, x0, y0, x, y).S
        S, _ = untransform(sig, None, t, x, y, x0, y0, (xt, yt))
        err.append(abs(Sb - S))
        Sm1 = sig.compile(-1, y0)(np.concatenate([(x - xt) / t, y - yt])[None])[0] / t
        err0.append(abs(Sb - Sm1))
    assert np.polyfit(np.log(ts), np.log(err), 1)[0] >= 1.5
    assert np.polyfit(np.log(ts), np.log(err0), 1)[0] >= 0.9


def test_json_round_trip():
    sig = sigma_series(2, None, 1, symbolic=True)
    js = sig.to_json()
    assert js["residual_zero"] is True
    terms = js["orders"]["1"]
    assert len(terms) == len(sig[1].terms)
    er = sig.er
    rebuilt = er.ring.zero()
    for term in terms:
        p = er.ring.const(F(term["coefficient"]))
        for name, e in term["monomial"].items():
            p = p * er.ring.var(name) ** e
        for sym in term["tensor"]:
            idx = tuple(int(c) for c in sym[2:-1].split(","))
            p = p * er.T[idx]
        rebuilt = rebuilt + p
    assert rebuilt == sig[1]


def test_compare_tabulated_report():
    rep = compare_tabulated(2)
    assert set(rep["items"]) == {"sigma_1", "F_1", "psi_2"}
    # the tabulated forcing agrees with the generated one term by term
    assert rep["items"]["F_1"]["equal_symbolic"]
    for item in rep["items"].values():
        assert len(item["relative_l1_difference_on_samples"]) == 3
    assert "sigma_1_pure_y0_sector" in rep
