"""Independent references: exact flat kernel, Monte Carlo paths, wrapped kernel.

The stochastic model is

    dX = -G(X) Y dt,   dY = 1/2 v(X, Y) dt + sqrt(h) sigma(X) dW,   sigma sigma^T = g,

whose forward equation is the kinetic equation approximated by the WKB
kernel.  The drift is divergence free, so no zeroth-order term appears.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _backend
from .errors import ConfigError, InsufficientSamples, PathOutOfChart
from .geometry import MetricModel, QuadraticNormalMetric

log = logging.getLogger(__name__)

__all__ = [
    "SdeConfig",
    "SdeSamples",
    "DensityEstimate",
    "WrappedValue",
    "flat_covariance",
    "exact_flat_kernel",
    "simulate_sde",
    "mc_density",
    "flat_torus_kernel",
    "drift_field",
    "drift_divergence",
]

LOST_FRACTION_MAX = 1e-3


def flat_covariance(t, h):
    """Per-dimension covariance of (X, Y) for the flat model."""
    return h * np.array([[t**3 / 3.0, -(t**2) / 2.0], [-(t**2) / 2.0, t]])


def exact_flat_kernel(t, h, z, z0, d: int = 1) -> float:
    """Gaussian transition density of the flat model.

    ``z = (x, y)`` and ``z0 = (x0, y0)`` are flat arrays of length 2d.  The
    mean is (x0 - y0 t, y0) and the covariance ``flat_covariance(t, h)`` in
    every dimension.
    """
    if not (t > 0 and h > 0):
        raise ValueError("t and h must be positive")
    z = np.asarray(z, dtype=float).reshape(-1, 2 * d)
    z0 = np.asarray(z0, dtype=float).ravel()
    x0, y0 = z0[:d], z0[d:]
    dx = z[:, :d] - (x0 - y0 * t)
    dy = z[:, d:] - y0
    # inverse covariance (1/h)[[12/t^3, 6/t^2], [6/t^2, 4/t]]
    q = (12 / t**3 * dx * dx + 12 / t**2 * dx * dy + 4 / t * dy * dy).sum(axis=1) / h
    norm = (np.sqrt(12.0) / (2 * np.pi * h * t**2)) ** d
    out = norm * np.exp(-0.5 * q)
    return float(out[0]) if out.size == 1 else out


@dataclass
class SdeConfig:
    n_paths: int
    seed: int
    n_steps: int = 200
    threads: int = 1
    block_size: int = 1 << 16
    backend: Optional[str] = None

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("a seed is required for stochastic runs")
        if not int(self.n_paths) >= 1:
            raise ConfigError("n_paths must be >= 1")
        if not int(self.n_steps) >= 10:
            raise ConfigError("need at least 10 steps (dt <= t/10)")
        if not int(self.threads) >= 1 or not int(self.block_size) >= 1:
            raise ConfigError("threads and block_size must be positive")
        self.n_paths = int(self.n_paths)
        self.n_steps = int(self.n_steps)
        self.seed = int(self.seed) & ((1 << 64) - 1)


@dataclass
class SdeSamples:
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    t: float
    h: float
    dt: float
    seed: int
    lost: int

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def z(self) -> np.ndarray:
        return np.hstack([self.x, self.y])


def _tensor(m: MetricModel):
    if isinstance(m, QuadraticNormalMetric):
        return np.ascontiguousarray(m.tensor, dtype=float)
    raise ConfigError("Monte Carlo simulation needs a quadratic normal-coordinate metric")


def _run_block(m, T, z0, t, h, cfg: SdeConfig, block: int, n: int):
    d = m.dim
    rng = np.random.Generator(np.random.Philox(key=[cfg.seed, block]))
    x = np.tile(np.asarray(z0[:d], dtype=float), (n, 1))
    y = np.tile(np.asarray(z0[d:], dtype=float), (n, 1))
    dt = t / cfg.n_steps
    sdt = np.sqrt(dt)
    sqrt_h = np.sqrt(h)
    radius = m.validity_radius
    curved = bool(np.any(T != 0)) and np.isfinite(radius)
    alive = np.arange(n)
    lost = 0
    X, Y = x, y
    for _ in range(cfg.n_steps):
        dw = rng.standard_normal((n, d)) * sdt
        if alive.size < n:
            dw = np.ascontiguousarray(dw[alive])
        bad = _backend.em_step(X, Y, dw, dt, T, sqrt_h, cfg.backend)
        if curved or bad:
            ok = np.linalg.norm(X, axis=1) < radius
            if bad:
                ok &= np.all(np.isfinite(X), axis=1) & np.all(np.isfinite(Y), axis=1)
            if not np.all(ok):
                lost += int((~ok).sum())
                alive = alive[ok]
                X, Y = X[ok], Y[ok]
    return X, Y, lost


def simulate_sde(m: MetricModel, z0, t, h, cfg: SdeConfig) -> SdeSamples:
    """Euler-Maruyama endpoints of ``cfg.n_paths`` paths from ``z0``.

    Paths are grouped in fixed blocks; block b draws its noise from a Philox
    stream keyed by (seed, b), so the sample set does not depend on the
    number of worker threads.  Paths leaving the chart are dropped and
    counted.

    Raises
    ------
    PathOutOfChart
        if more than 0.1% of the paths were lost.
    """
    if not t > 0 or h < 0:
        raise ConfigError("need t > 0 and h >= 0")
    T = _tensor(m)
    z0 = np.asarray(z0, dtype=float).ravel()
    if z0.size != 2 * m.dim:
        raise ConfigError("z0 must hold x0 and y0")
    sizes = []
    left = cfg.n_paths
    while left > 0:
        sizes.append(min(cfg.block_size, left))
        left -= sizes[-1]
    jobs = list(enumerate(sizes))
    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda j: _run_block(m, T, z0, t, h, cfg, j[0], j[1]), jobs))
    else:
        results = [_run_block(m, T, z0, t, h, cfg, b, n) for b, n in jobs]
    x = np.concatenate([r[0] for r in results])
    y = np.concatenate([r[1] for r in results])
    lost = sum(r[2] for r in results)
    if lost > LOST_FRACTION_MAX * cfg.n_paths:
        raise PathOutOfChart(f"{lost} of {cfg.n_paths} paths left the chart")
    if lost:
        log.warning("%d paths left the chart and were dropped", lost)
    return SdeSamples(x, y, float(t), float(h), t / cfg.n_steps, cfg.seed, lost)


@dataclass
class DensityEstimate:
    value: float
    stderr: float
    method: str
    bandwidth: np.ndarray


def mc_density(samples, z, bandwidth="silverman", scale: float = 1.0, n_batches: int = 16,
               min_samples: int = 10000) -> DensityEstimate:
    """Gaussian kernel density estimate at ``z`` with batch-means error.

    ``samples`` is an (n, D) array or :class:`SdeSamples`.  ``bandwidth``:

    * ``"silverman"``: product kernel, per-coordinate Silverman widths;
    * ``"whitened"``: samples whitened by their covariance, isotropic
      Silverman width in the whitened frame;
    * an array of per-coordinate widths (product kernel).

    ``scale`` multiplies the automatic widths.
    """
    Z = samples.z if isinstance(samples, SdeSamples) else np.asarray(samples, dtype=float)
    Z = np.atleast_2d(Z)
    n, D = Z.shape
    if n < min_samples:
        raise InsufficientSamples(f"{n} samples, need at least {min_samples}")
    z = np.asarray(z, dtype=float).ravel()
    factor = (4.0 / ((D + 2) * n)) ** (1.0 / (D + 4))
    if isinstance(bandwidth, str) and bandwidth == "whitened":
        mu = Z.mean(axis=0)
        C = np.cov(Z, rowvar=False).reshape(D, D)
        L = np.linalg.cholesky(C)
        W = np.linalg.solve(L, (Z - mu).T).T
        wz = np.linalg.solve(L, z - mu)
        bw = np.full(D, factor * scale)
        jac = 1.0 / np.prod(np.diag(L))
        U = (W - wz) / bw
        method = "product-kernel/whitened"
        reported = L @ bw
    else:
        if isinstance(bandwidth, str):
            if bandwidth != "silverman":
                raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
            bw = Z.std(axis=0, ddof=1) * factor * scale
        else:
            bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (D,)).copy()
        jac = 1.0
        U = (Z - z) / bw
        method = "product-kernel"
        reported = bw
    kern = np.exp(-0.5 * np.einsum("ij,ij->i", U, U)) / ((2 * np.pi) ** (D / 2) * np.prod(bw))
    kern = kern * jac
    value = float(np.mean(kern))
    batches = np.array_split(kern, n_batches)
    means = np.array([b.mean() for b in batches])
    stderr = float(means.std(ddof=1) / np.sqrt(n_batches))
    return DensityEstimate(value, stderr, method, np.asarray(reported))


@dataclass
class WrappedValue:
    value: float
    last_term: float
    m_max: int


def flat_torus_kernel(ell, t, h, z, z0, m_max: int = 3) -> WrappedValue:
    """Flat kernel on the circle of circumference ``ell`` by winding sums."""
    if m_max < 3:
        raise ValueError("m_max must be at least 3")
    z = np.asarray(z, dtype=float).ravel()
    total = 0.0
    last = 0.0
    # add the terms from the outside in so that small terms are summed first
    for mm in sorted(range(-m_max, m_max + 1), key=lambda k: -abs(k)):
        v = exact_flat_kernel(t, h, [z[0] + mm * ell, z[1]], z0, 1)
        if abs(mm) == m_max:
            last = max(last, v)
        total += v
    return WrappedValue(total, last, m_max)


def drift_field(m: MetricModel, x, y):
    """Drift (-G y, 1/2 v) of the stochastic model."""
    jet = m.jet(np.asarray(x, dtype=float), 2)
    y = np.asarray(y, dtype=float)
    v = np.einsum("a,abi,b->i", y, jet.dG, y)
    return np.concatenate([-jet.G @ y, 0.5 * v])


def drift_divergence(m: MetricModel, x, y, step: float = 1e-3) -> float:
    """Phase-space divergence of the drift by extrapolated central differences."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x.size
    z = np.concatenate([x, y])

    def div(hs):
        acc = 0.0
        for i in range(2 * d):
            e = np.zeros(2 * d); e[i] = hs
            fp = drift_field(m, (z + e)[:d], (z + e)[d:])[i]
            fm = drift_field(m, (z - e)[:d], (z - e)[d:])[i]
            acc += (fp - fm) / (2 * hs)
        return acc

    a, b, c = div(step), div(step / 2), div(step / 4)
    r1, r2 = (4 * b - a) / 3, (4 * c - b) / 3
    return float((16 * r2 - r1) / 15)
