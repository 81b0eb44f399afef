"""Pure-Python Hamiltonian right-hand side and Dormand-Prince integrator.

This is the reference implementation and the fallback used when the compiled
core is unavailable or the metric is not of quadratic type.  The compiled
module ``_core`` mirrors the algorithm step for step.

Augmented state layout: ``[z (n = 4d), Phi (n*n, row major), S]`` where the
tangent matrix and action slots are present only when requested.
"""
from __future__ import annotations

import math

import numpy as np

# Dormand-Prince 5(4) tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

STATUS_OK = 0
STATUS_STEP_FAILURE = 1
STATUS_BLOWUP = 2
STATUS_OUT_OF_CHART = 3


def split_state(z, d):
    return z[:d], z[d : 2 * d], z[2 * d : 3 * d], z[3 * d : 4 * d]


def energy_from_jet(jet, z, d):
    x, y, q, p = split_state(z, d)
    v = np.einsum("a,abi,b->i", y, jet.dG, y)
    return 0.5 * q @ jet.g @ q - p @ jet.G @ y + 0.5 * q @ v


def field_from_jet(jet, z, d, with_jac):
    """Return (f, Jf, H) for the Hamiltonian vector field at z.

    ``Jf`` is None unless ``with_jac``; it needs third derivatives of G.
    """
    x, y, q, p = split_state(z, d)
    g, G, dg, dG, d2G = jet.g, jet.G, jet.dg, jet.dG, jet.d2G
    Gy = G @ y
    dGy = np.einsum("abk,b->ak", dG, y)  # column k is dG_k y
    v = y @ dGy
    gq = g @ q
    H = 0.5 * q @ gq - p @ Gy + 0.5 * q @ v
    QdG = np.einsum("i,abi->ab", q, dG)
    yd2Gy = np.einsum("a,abik,b->ik", y, d2G, y)
    H_p = -Gy
    H_q = gq + 0.5 * v
    H_y = -G @ p + QdG @ y
    H_x = 0.5 * np.einsum("a,abk,b->k", q, dg, q) - p @ dGy + 0.5 * q @ yd2Gy
    f = np.concatenate([H_p, H_q, -H_y, -H_x])
    if not with_jac:
        return f, None, H
    d3G = jet.d3G
    Hxx = (
        0.5 * np.einsum("a,abkl,b->kl", q, jet.d2g, q)
        - np.einsum("a,abkl,b->kl", p, d2G, y)
        + 0.5 * np.einsum("i,a,abikl,b->kl", q, y, d3G, y)
    )
    Hxy = -np.einsum("bak,a->kb", dG, p) + np.einsum("i,baik,a->kb", q, d2G, y)
    Hxq = np.einsum("jbk,b->kj", dg, q) + 0.5 * yd2Gy.T
    Hxp = -dGy.T
    Hyy = QdG
    Hyq = dGy
    Hyp = -G.T
    Z = np.zeros((d, d))
    Hs = np.block(
        [
            [Hxx, Hxy, Hxq, Hxp],
            [Hxy.T, Hyy, Hyq, Hyp],
            [Hxq.T, Hyq.T, g, Z],
            [Hxp.T, Hyp.T, Z, Z],
        ]
    )
    Jf = np.concatenate([Hs[3 * d :], Hs[2 * d : 3 * d], -Hs[d : 2 * d], -Hs[:d]])
    return f, Jf, H


class GenericField:
    """Right-hand side closure over an arbitrary metric model."""

    def __init__(self, model, with_jac: bool, with_action: bool):
        self.model = model
        self.d = model.dim
        self.n = 4 * self.d
        self.with_jac = with_jac
        self.with_action = with_action
        self.order = 3 if with_jac else 2

    def size(self):
        n = self.n
        return n + (n * n if self.with_jac else 0) + (1 if self.with_action else 0)

    def __call__(self, a):
        d, n = self.d, self.n
        z = a[:n]
        jet = self.model.jet(z[:d], self.order)
        f, Jf, H = field_from_jet(jet, z, d, self.with_jac)
        out = np.empty_like(a)
        out[:n] = f
        k = n
        if self.with_jac:
            Phi = a[n : n + n * n].reshape(n, n)
            out[n : n + n * n] = (Jf @ Phi).ravel()
            k += n * n
        if self.with_action:
            x, y, q, p = split_state(z, d)
            out[k] = p @ f[:d] + q @ f[d : 2 * d] - H
        return out

    def energy(self, a):
        z = a[: self.n]
        jet = self.model.jet(z[: self.d], 2)
        return float(energy_from_jet(jet, z, self.d))


def _rms(v):
    return math.sqrt(float(np.dot(v, v)) / v.size)


def initial_step(fun, y0, f0, t_end, rtol, atol):
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, t_end)
    f1 = fun(y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_end)


def integrate(
    fun,
    energy,
    y0,
    n_state: int,
    t_end: float,
    rtol: float,
    atol: float,
    t_eval=None,
    max_steps: int = 200000,
    blowup: float = 1e6,
    in_chart=None,
):
    """Adaptive Dormand-Prince integration of an autonomous system.

    Returns a dict with keys ``y`` (final augmented state), ``samples``
    (rows at ``t_eval``), ``status``, ``steps``, ``rejected``,
    ``energy_drift`` and ``t``.
    """
    y = np.array(y0, dtype=float)
    size = y.size
    t_eval = np.empty(0) if t_eval is None else np.asarray(t_eval, dtype=float)
    samples = np.empty((t_eval.size, size))
    ie = 0
    while ie < t_eval.size and t_eval[ie] <= 0.0:
        samples[ie] = y
        ie += 1
    result = dict(y=y, samples=samples, status=STATUS_OK, steps=0, rejected=0,
                  energy_drift=0.0, t=0.0)
    if t_end <= 0.0:
        return result
    H0 = energy(y)
    drift = 0.0
    f = fun(y)
    h = initial_step(fun, y, f, t_end, rtol, atol)
    t = 0.0
    K = np.empty((7, size))
    steps = rejected = 0
    step_rejected = False
    status = STATUS_OK
    while t < t_end:
        if steps >= max_steps:
            status = STATUS_STEP_FAILURE
            break
        min_step = 10 * np.spacing(t) if t > 0 else 1e-300
        if h < min_step:
            status = STATUS_STEP_FAILURE
            break
        t_new = t + h
        if t_new >= t_end:
            t_new = t_end
        hh = t_new - t
        K[0] = f
        for s in range(1, 6):
            dy = K[:s].T @ np.asarray(A[s]) * hh
            K[s] = fun(y + dy)
        y_new = y + hh * (K[:6].T @ B)
        f_new = fun(y_new)
        K[6] = f_new
        err = hh * (K.T @ E)
        scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
        en = _rms(err / scale)
        if not np.isfinite(en):
            en = np.inf
        if en < 1.0:
            if en == 0.0:
                factor = MAX_FACTOR
            else:
                factor = min(MAX_FACTOR, SAFETY * en ** -0.2)
            if step_rejected:
                factor = min(1.0, factor)
            step_rejected = False
            steps += 1
            # dense output for requested sample times in (t, t_new]
            while ie < t_eval.size and t_eval[ie] <= t_new:
                th = (t_eval[ie] - t) / hh
                pw = np.array([th, th * th, th ** 3, th ** 4])
                samples[ie] = y + hh * ((K.T @ P) @ pw)
                ie += 1
            t = t_new
            y = y_new
            f = f_new
            h = hh * factor
            drift = max(drift, abs(energy(y) - H0))
            if not np.all(np.isfinite(y)) or np.linalg.norm(y[:n_state]) > blowup:
                status = STATUS_BLOWUP
                break
            if in_chart is not None and not in_chart(y):
                status = STATUS_OUT_OF_CHART
                break
        else:
            h = hh * max(MIN_FACTOR, SAFETY * en ** -0.2) if np.isfinite(en) else hh * MIN_FACTOR
            step_rejected = True
            rejected += 1
    while ie < t_eval.size and status == STATUS_OK:
        samples[ie] = y
        ie += 1
    result.update(y=y, status=status, steps=steps, rejected=rejected, energy_drift=drift, t=t)
    return result
