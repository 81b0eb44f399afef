import numpy as np
import pytest

from kinwkb import QuadraticNormalMetric, kappa_model
from kinwkb.errors import ConfigError, InsufficientSamples, PathOutOfChart
from kinwkb.oracle import (SdeConfig, drift_divergence, exact_flat_kernel, flat_covariance,
                           flat_torus_kernel, mc_density, simulate_sde)

FLAT1 = QuadraticNormalMetric(np.zeros((1, 1, 1, 1)))


def test_exact_kernel_values():
    assert exact_flat_kernel(1, 1, [0, 0], [0, 0]) == pytest.approx(np.sqrt(12) / (2 * np.pi), rel=1e-14)
    t = 0.5
    inv = np.linalg.inv(flat_covariance(t, 1.0))
    assert np.allclose(inv, [[96, 24], [24, 8]], rtol=1e-12)
    # mean sits at (x0 - y0 t, y0)
    vals = exact_flat_kernel(t, 0.3, np.array([[0.2 - 0.5 * t, 0.5], [0.25, 0.5]]), [0.2, 0.5])
    assert vals[0] > vals[1]
    with pytest.raises(ValueError):
        exact_flat_kernel(0.0, 1, [0, 0], [0, 0])


def test_flat_kernel_integrates_to_one():
    t, h = 0.4, 0.7
    s = np.sqrt(np.diag(flat_covariance(t, h)))
    xs = np.linspace(-8 * s[0], 8 * s[0], 401)
    ys = np.linspace(-8 * s[1], 8 * s[1], 401)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    v = exact_flat_kernel(t, h, np.c_[X.ravel(), Y.ravel()], [0, 0]).reshape(X.shape)
    mass = np.trapezoid(np.trapezoid(v, ys, axis=1), xs)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_flat_sde_moments():
    t, h = 1.0, 0.5
    smp = simulate_sde(FLAT1, [0.1, 0.3], t, h, SdeConfig(200000, seed=7, n_steps=100))
    assert smp.x.mean() == pytest.approx(0.1 - 0.3 * t, abs=0.01)
    assert smp.y.mean() == pytest.approx(0.3, abs=0.01)
    C = np.cov(smp.z, rowvar=False)
    # Euler-Maruyama: Y exact, X carries an O(dt) bias
    assert np.allclose(C, flat_covariance(t, h), rtol=0.03, atol=2e-3)


def test_zero_noise_is_free_flow(kappa):
    smp = simulate_sde(kappa, [0.01, 0.0, 0.2, 0.1], 0.2, 0.0, SdeConfig(10, seed=1, n_steps=50))
    assert np.ptp(smp.z, axis=0).max() == 0.0


def test_thread_count_does_not_change_samples(kappa):
    z0 = [0, 0, 0.2, -0.1]
    a = simulate_sde(kappa, z0, 0.2, 0.5, SdeConfig(5000, seed=3, n_steps=20, block_size=1000))
    b = simulate_sde(kappa, z0, 0.2, 0.5,
                     SdeConfig(5000, seed=3, n_steps=20, block_size=1000, threads=4))
    assert np.array_equal(a.z, b.z)
    c = simulate_sde(kappa, z0, 0.2, 0.5, SdeConfig(5000, seed=4, n_steps=20, block_size=1000))
    assert not np.array_equal(a.z, c.z)


def test_sde_guards(kappa):
    with pytest.raises(ConfigError):
        SdeConfig(10, seed=None)
    with pytest.raises(ConfigError):
        SdeConfig(10, seed=1, n_steps=5)
    with pytest.raises(ConfigError):
        simulate_sde(kappa, [0, 0], 1, 1, SdeConfig(10, seed=1))
    with pytest.raises(PathOutOfChart):
        simulate_sde(kappa, [0, 0, 30.0, 0], 1.0, 0.5, SdeConfig(200, seed=1, n_steps=50))


def test_kde_matches_exact_flat():
    t, h = 1.0, 1.0
    smp = simulate_sde(FLAT1, [0, 0], t, h, SdeConfig(400000, seed=11, n_steps=100))
    for z in ([0, 0], [-0.3, 0.4]):
        est = mc_density(smp, z, "whitened", 0.5)
        exact = exact_flat_kernel(t, h, z, [0, 0])
        assert abs(est.value - exact) <= max(4 * est.stderr, 0.02 * exact)
    with pytest.raises(InsufficientSamples):
        mc_density(smp.z[:100], [0, 0])


def test_stderr_scales_with_sample_size():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((400000, 2))
    e1 = mc_density(Z[:100000], [0, 0], "silverman").stderr
    e2 = mc_density(Z, [0, 0], "silverman").stderr
    # bandwidth shrinks with n as well, so the ratio is close to but above 2
    assert 1.4 < e1 / e2 < 3.0


def test_torus_kernel():
    ell, t, h = 1.0, 0.5, 0.5
    a = flat_torus_kernel(ell, t, h, [0.1, 0.2], [0.0, 0.0])
    b = flat_torus_kernel(ell, t, h, [0.1 + ell, 0.2], [0.0, 0.0])
    assert a.value == pytest.approx(b.value, rel=1e-8)
    big = flat_torus_kernel(50.0, t, h, [0.1, 0.2], [0.0, 0.0])
    assert big.value == pytest.approx(exact_flat_kernel(t, h, [0.1, 0.2], [0, 0]), rel=1e-14)
    assert a.last_term < 1e-6 * a.value
    with pytest.raises(ValueError):
        flat_torus_kernel(ell, t, h, [0, 0], [0, 0], m_max=2)


def test_drift_divergence_free(rng):
    m = kappa_model(0.25)
    for _ in range(5):
        x, y = rng.uniform(-0.3, 0.3, size=(2, 2))
        assert abs(drift_divergence(m, x, y)) <= 1e-10
