from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinwkb.polynomial import Poly, Ring, TSeries, solve_rational

R = Ring(["a", "b", "c"])

coef = st.fractions(min_value=-5, max_value=5, max_denominator=7)
mono = st.tuples(*[st.integers(0, 3)] * 3)
polys = st.dictionaries(mono, coef, max_size=5).map(
    lambda d: Poly(R, {R.mono(k): v for k, v in d.items() if v}))
points = st.tuples(*[st.fractions(min_value=-2, max_value=2, max_denominator=5)] * 3)


@given(polys, polys, polys)
def test_ring_axioms(p, q, r):
    assert p + q == q + p
    assert p * q == q * p
    assert p * (q + r) == p * q + p * r
    assert (p - p).is_zero()


@given(polys, polys)
def test_product_rule(p, q):
    for i in range(3):
        assert (p * q).diff(i) == p.diff(i) * q + p * q.diff(i)


@given(polys, points)
def test_subs_is_evaluation(p, pt):
    full = p.subs({i: v for i, v in enumerate(pt)})
    assert set(full.terms) <= {0}
    exact = full.terms.get(0, Fraction(0))
    assert float(exact) == pytest.approx(p.evaluate([float(v) for v in pt]), abs=1e-9)


@given(polys, points)
def test_compile_matches_evaluate(p, pt):
    f = p.compile([0, 1, 2])
    z = np.array([[float(v) for v in pt]])
    assert f(z)[0] == pytest.approx(p.evaluate(z[0]), abs=1e-9)


@given(polys, polys, points)
def test_subs_poly_composes(p, q, pt):
    # substituting q for variable 0, then evaluating, equals evaluating p at q(pt)
    comp = p.subs_poly({0: q})
    vals = [float(v) for v in pt]
    qv = q.evaluate(vals)
    assert comp.evaluate(vals) == pytest.approx(p.evaluate([qv] + vals[1:]), rel=1e-9, abs=1e-9)


def test_split_degree_and_pow():
    a, b = R.var("a"), R.var("b")
    p = (a + b) ** 3 + a
    parts = p.split_degree([0, 1])
    assert sorted(parts) == [1, 3]
    assert parts[3] == a**3 + a * a * b * 3 + a * b * b * 3 + b**3
    assert p.total_degrees([0, 1]) == [1, 3]


def test_exponent_overflow():
    with pytest.raises(OverflowError):
        R.mono([256, 0, 0])


def test_tseries_product_tracks_exactness():
    one = R.const(1)
    s = TSeries(R, {-1: one, 0: one}, top=1)      # known through t^1
    u = TSeries(R, {1: one}, top=2)
    prod = s * u
    # s starts at t^-1, u is exact to t^2 -> product exact to t^1
    assert prod.top == 1
    assert prod.coef(0) == one and prod.coef(1) == one
    with pytest.raises(ValueError):
        prod.coef(2)
    # a zero series known only to t^0 does not make products exact forever:
    # its unknown t^1 tail times t^-1 is already unknown at t^0
    z = TSeries(R, {}, top=0)
    assert (z * s).top == -1


def test_tseries_calculus():
    a = R.var("a")
    s = TSeries(R, {0: a, 2: a * a}, top=3)
    assert s.dt().coef(1) == a * a * 2
    assert s.integrate().coef(3) == a * a * Fraction(1, 3)
    assert s.shift(-1).coef(-1) == a


@settings(max_examples=30)
@given(st.lists(st.lists(st.fractions(min_value=-4, max_value=4, max_denominator=5),
                         min_size=3, max_size=3), min_size=3, max_size=3),
       st.lists(st.fractions(min_value=-4, max_value=4, max_denominator=5), min_size=3, max_size=3))
def test_solve_rational(M, rhs):
    sol = solve_rational(M, [rhs])
    det = np.linalg.det(np.array(M, dtype=float))
    if sol is None:
        assert abs(det) < 1e-9
        return
    u = sol[0]
    for i in range(3):
        assert sum(M[i][j] * u[j] for j in range(3)) == rhs[i]
