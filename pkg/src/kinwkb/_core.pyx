# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the quadratic normal-coordinate metric.

* ``rhs``: Hamiltonian vector field, tangent (variational) matrix and action
  rate for ``g = I + 1/2 T(x, x)``.
* ``integrate``: the adaptive Dormand-Prince loop of ``_pyflow.integrate``
  with dense output, run entirely in C.
* ``em_step``: one Euler-Maruyama step for a batch of SDE paths.

Dimensions up to ``MAXD`` are supported; callers fall back to Python above.
"""
from libc.math cimport sqrt, fabs, pow, isfinite
from libc.string cimport memcpy, memset

import numpy as np

cdef enum:
    MAXD = 4
    MAXN = 16
    MAXA = 273

MAX_DIM = MAXD

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0

cdef double Cc[6]
cdef double Ac[6][5]
cdef double Bc[6]
cdef double Ec[7]
cdef double Pc[7][4]


cdef void _init_tableau():
    cdef int i, j
    for i in range(6):
        for j in range(5):
            Ac[i][j] = 0.0
    Ac[1][0] = 1.0 / 5
    Ac[2][0] = 3.0 / 40; Ac[2][1] = 9.0 / 40
    Ac[3][0] = 44.0 / 45; Ac[3][1] = -56.0 / 15; Ac[3][2] = 32.0 / 9
    Ac[4][0] = 19372.0 / 6561; Ac[4][1] = -25360.0 / 2187
    Ac[4][2] = 64448.0 / 6561; Ac[4][3] = -212.0 / 729
    Ac[5][0] = 9017.0 / 3168; Ac[5][1] = -355.0 / 33; Ac[5][2] = 46732.0 / 5247
    Ac[5][3] = 49.0 / 176; Ac[5][4] = -5103.0 / 18656
    Bc[0] = 35.0 / 384; Bc[1] = 0.0; Bc[2] = 500.0 / 1113; Bc[3] = 125.0 / 192
    Bc[4] = -2187.0 / 6784; Bc[5] = 11.0 / 84
    Ec[0] = -71.0 / 57600; Ec[1] = 0.0; Ec[2] = 71.0 / 16695; Ec[3] = -71.0 / 1920
    Ec[4] = 17253.0 / 339200; Ec[5] = -22.0 / 525; Ec[6] = 1.0 / 40
    Pc[0][0] = 1.0; Pc[0][1] = -8048581381.0 / 2820520608
    Pc[0][2] = 8663915743.0 / 2820520608; Pc[0][3] = -12715105075.0 / 11282082432
    Pc[1][0] = 0.0; Pc[1][1] = 0.0; Pc[1][2] = 0.0; Pc[1][3] = 0.0
    Pc[2][0] = 0.0; Pc[2][1] = 131558114200.0 / 32700410799
    Pc[2][2] = -68118460800.0 / 10900136933; Pc[2][3] = 87487479700.0 / 32700410799
    Pc[3][0] = 0.0; Pc[3][1] = -1754552775.0 / 470086768
    Pc[3][2] = 14199869525.0 / 1410260304; Pc[3][3] = -10690763975.0 / 1880347072
    Pc[4][0] = 0.0; Pc[4][1] = 127303824393.0 / 49829197408
    Pc[4][2] = -318862633887.0 / 49829197408; Pc[4][3] = 701980252875.0 / 199316789632
    Pc[5][0] = 0.0; Pc[5][1] = -282668133.0 / 205662961
    Pc[5][2] = 2019193451.0 / 616988883; Pc[5][3] = -1453857185.0 / 822651844
    Pc[6][0] = 0.0; Pc[6][1] = 40617522.0 / 29380423
    Pc[6][2] = -110615467.0 / 29380423; Pc[6][3] = 69997945.0 / 29380423


_init_tableau()


cdef struct Geo:
    int d
    double g[MAXD][MAXD]
    double G[MAXD][MAXD]
    double dg[MAXD][MAXD][MAXD]
    double dG[MAXD][MAXD][MAXD]
    double d2G[MAXD][MAXD][MAXD][MAXD]
    double d3G[MAXD][MAXD][MAXD][MAXD][MAXD]


cdef inline double T4(const double* T, int d, int i, int j, int k, int l) nogil:
    return T[((i * d + j) * d + k) * d + l]


cdef int _invert(int d, double a[MAXD][MAXD], double out[MAXD][MAXD]) nogil:
    """Gauss-Jordan with partial pivoting; returns 0 on success."""
    cdef double m[MAXD][2 * MAXD]
    cdef int i, j, k, piv
    cdef double best, tmp, f
    for i in range(d):
        for j in range(d):
            m[i][j] = a[i][j]
            m[i][d + j] = 1.0 if i == j else 0.0
    for k in range(d):
        piv = k
        best = fabs(m[k][k])
        for i in range(k + 1, d):
            if fabs(m[i][k]) > best:
                best = fabs(m[i][k])
                piv = i
        if best == 0.0:
            return 1
        if piv != k:
            for j in range(2 * d):
                tmp = m[k][j]; m[k][j] = m[piv][j]; m[piv][j] = tmp
        f = 1.0 / m[k][k]
        for j in range(2 * d):
            m[k][j] *= f
        for i in range(d):
            if i != k and m[i][k] != 0.0:
                f = m[i][k]
                for j in range(2 * d):
                    m[i][j] -= f * m[k][j]
    for i in range(d):
        for j in range(d):
            out[i][j] = 0.5 * (m[i][d + j] + m[j][d + i])
    return 0


cdef int _geometry(const double* T, int d, const double* x, Geo* s, int order) nogil:
    cdef int i, j, k, l, m, a, b
    cdef double acc, t1, t2
    s.d = d
    for i in range(d):
        for j in range(d):
            for k in range(d):
                acc = 0.0
                for l in range(d):
                    acc += T4(T, d, i, j, k, l) * x[l]
                s.dg[i][j][k] = acc
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for k in range(d):
                acc += s.dg[i][j][k] * x[k]
            s.g[i][j] = (1.0 if i == j else 0.0) + 0.5 * acc
    if _invert(d, s.g, s.G):
        return 1
    # dG_k = -G g_k G
    cdef double Gg[MAXD][MAXD][MAXD]
    for a in range(d):
        for j in range(d):
            for k in range(d):
                acc = 0.0
                for i in range(d):
                    acc += s.G[a][i] * s.dg[i][j][k]
                Gg[a][j][k] = acc
    for a in range(d):
        for b in range(d):
            for k in range(d):
                acc = 0.0
                for j in range(d):
                    acc += Gg[a][j][k] * s.G[j][b]
                s.dG[a][b][k] = -acc
    # d2G_kl = -(dG_l g_k G + G g_kl G + G g_k dG_l)
    for a in range(d):
        for b in range(d):
            for k in range(d):
                for l in range(d):
                    t1 = 0.0
                    t2 = 0.0
                    for i in range(d):
                        for j in range(d):
                            t1 += s.dG[a][i][l] * s.dg[i][j][k] * s.G[j][b]
                            t1 += s.G[a][i] * s.dg[i][j][k] * s.dG[j][b][l]
                            t2 += s.G[a][i] * T4(T, d, i, j, k, l) * s.G[j][b]
                    s.d2G[a][b][k][l] = -(t1 + t2)
    if order < 3:
        return 0
    cdef double sm
    for a in range(d):
        for b in range(d):
            for k in range(d):
                for l in range(d):
                    for m in range(d):
                        sm = 0.0
                        for i in range(d):
                            for j in range(d):
                                sm += s.d2G[a][i][l][m] * s.dg[i][j][k] * s.G[j][b]
                                sm += s.dG[a][i][l] * T4(T, d, i, j, k, m) * s.G[j][b]
                                sm += s.dG[a][i][l] * s.dg[i][j][k] * s.dG[j][b][m]
                                sm += s.dG[a][i][m] * T4(T, d, i, j, k, l) * s.G[j][b]
                                # transposed partners
                                sm += s.G[a][i] * s.dg[i][j][k] * s.d2G[j][b][l][m]
                                sm += s.G[a][i] * T4(T, d, i, j, k, m) * s.dG[j][b][l]
                                sm += s.dG[a][i][m] * s.dg[i][j][k] * s.dG[j][b][l]
                                sm += s.G[a][i] * T4(T, d, i, j, k, l) * s.dG[j][b][m]
                        s.d3G[a][b][k][l][m] = -sm
    return 0


cdef int _field(const double* T, int d, const double* aug, double* out,
                int with_jac, int with_action, double* H_out) nogil:
    """Vector field for the augmented state.  Returns nonzero if g is singular."""
    cdef Geo s
    cdef int n = 4 * d
    cdef const double* x = aug
    cdef const double* y = aug + d
    cdef const double* q = aug + 2 * d
    cdef const double* p = aug + 3 * d
    cdef int i, j, k, l, a, b, c
    cdef double acc, H
    if _geometry(T, d, x, &s, 3 if with_jac else 2):
        return 1
    cdef double Gy[MAXD]
    cdef double gq[MAXD]
    cdef double v[MAXD]
    cdef double dGy[MAXD][MAXD]
    cdef double QdG[MAXD][MAXD]
    cdef double yd2Gy[MAXD][MAXD]
    cdef double Hx[MAXD]
    cdef double Hy[MAXD]
    for a in range(d):
        acc = 0.0
        for b in range(d):
            acc += s.G[a][b] * y[b]
        Gy[a] = acc
        acc = 0.0
        for b in range(d):
            acc += s.g[a][b] * q[b]
        gq[a] = acc
        for k in range(d):
            acc = 0.0
            for b in range(d):
                acc += s.dG[a][b][k] * y[b]
            dGy[a][k] = acc
        for b in range(d):
            acc = 0.0
            for i in range(d):
                acc += q[i] * s.dG[a][b][i]
            QdG[a][b] = acc
    for i in range(d):
        acc = 0.0
        for a in range(d):
            acc += y[a] * dGy[a][i]
        v[i] = acc
        for k in range(d):
            acc = 0.0
            for a in range(d):
                for b in range(d):
                    acc += y[a] * s.d2G[a][b][i][k] * y[b]
            yd2Gy[i][k] = acc
    H = 0.0
    for a in range(d):
        H += 0.5 * q[a] * gq[a] - p[a] * Gy[a] + 0.5 * q[a] * v[a]
    H_out[0] = H
    for b in range(d):
        acc = 0.0
        for a in range(d):
            acc += -s.G[a][b] * p[a] + QdG[b][a] * y[a]
        Hy[b] = acc
    for k in range(d):
        acc = 0.0
        for a in range(d):
            for b in range(d):
                acc += 0.5 * q[a] * s.dg[a][b][k] * q[b]
            acc -= p[a] * dGy[a][k]
        for i in range(d):
            acc += 0.5 * q[i] * yd2Gy[i][k]
        Hx[k] = acc
    for a in range(d):
        out[a] = -Gy[a]
        out[d + a] = gq[a] + 0.5 * v[a]
        out[2 * d + a] = -Hy[a]
        out[3 * d + a] = -Hx[a]
    cdef int off = n
    cdef double Hs[MAXN][MAXN]
    cdef double Jf[MAXN][MAXN]
    if with_jac:
        memset(&Hs[0][0], 0, sizeof(Hs))
        for k in range(d):
            for l in range(d):
                acc = 0.0
                for a in range(d):
                    for b in range(d):
                        acc += 0.5 * q[a] * T4(T, d, a, b, k, l) * q[b]
                        acc -= p[a] * s.d2G[a][b][k][l] * y[b]
                        for i in range(d):
                            acc += 0.5 * q[i] * y[a] * s.d3G[a][b][i][k][l] * y[b]
                Hs[k][l] = acc
            for b in range(d):
                acc = 0.0
                for a in range(d):
                    acc -= s.dG[b][a][k] * p[a]
                    for i in range(d):
                        acc += q[i] * s.d2G[b][a][i][k] * y[a]
                Hs[k][d + b] = acc
                Hs[d + b][k] = acc
            for j in range(d):
                acc = 0.5 * yd2Gy[j][k]
                for b in range(d):
                    acc += s.dg[j][b][k] * q[b]
                Hs[k][2 * d + j] = acc
                Hs[2 * d + j][k] = acc
            for a in range(d):
                Hs[k][3 * d + a] = -dGy[a][k]
                Hs[3 * d + a][k] = -dGy[a][k]
        for a in range(d):
            for b in range(d):
                Hs[d + a][d + b] = QdG[a][b]
                Hs[d + a][2 * d + b] = dGy[a][b]
                Hs[2 * d + b][d + a] = dGy[a][b]
                Hs[d + a][3 * d + b] = -s.G[b][a]
                Hs[3 * d + b][d + a] = -s.G[b][a]
                Hs[2 * d + a][2 * d + b] = s.g[a][b]
        for j in range(n):
            for a in range(d):
                Jf[a][j] = Hs[3 * d + a][j]
                Jf[d + a][j] = Hs[2 * d + a][j]
                Jf[2 * d + a][j] = -Hs[d + a][j]
                Jf[3 * d + a][j] = -Hs[a][j]
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for c in range(n):
                    acc += Jf[i][c] * aug[n + c * n + j]
                out[n + i * n + j] = acc
        off += n * n
    if with_action:
        acc = -H
        for a in range(d):
            acc += p[a] * out[a] + q[a] * out[d + a]
        out[off] = acc
    return 0


def rhs(const double[:, :, :, ::1] T, double[::1] aug, bint with_jac, bint with_action):
    """Evaluate the augmented vector field; returns (out, H)."""
    cdef int d = T.shape[0]
    if d > MAXD:
        raise ValueError("dimension too large for compiled core")
    out = np.empty(aug.shape[0])
    cdef double[::1] o = out
    cdef double H = 0.0
    if _field(&T[0, 0, 0, 0], d, &aug[0], &o[0], with_jac, with_action, &H):
        raise ArithmeticError("singular metric")
    return out, H


cdef double _rms(const double* v, const double* scale, int size) nogil:
    cdef double acc = 0.0, r
    cdef int i
    for i in range(size):
        r = v[i] / scale[i]
        acc += r * r
    return sqrt(acc / size)


def integrate(const double[:, :, :, ::1] T, double[::1] y0, int n_state, double t_end,
              double rtol, double atol, double[::1] t_eval, double[:, ::1] samples,
              bint with_jac, bint with_action, long max_steps=200000,
              double blowup=1e6, double radius=1e300):
    """Dormand-Prince loop in C.

    Mirrors ``_pyflow.integrate``.  Writes dense samples into ``samples`` and
    returns ``(y_final, status, steps, rejected, energy_drift, t_reached)``.
    """
    cdef int d = T.shape[0]
    cdef int size = y0.shape[0]
    if d > MAXD or size > MAXA:
        raise ValueError("problem too large for compiled core")
    cdef const double* Tp = &T[0, 0, 0, 0]
    cdef double y[MAXA]
    cdef double ynew[MAXA]
    cdef double ytmp[MAXA]
    cdef double K[7][MAXA]
    cdef double scale[MAXA]
    cdef double err[MAXA]
    cdef double f[MAXA]
    cdef double H0, Hc, drift = 0.0
    cdef double t = 0.0, h, hh, t_new, en, factor, th, acc, nrm, d0, d1, d2, h0, h1
    cdef int i, s, j, ie = 0, n_eval = t_eval.shape[0], status = 0
    cdef long steps = 0, rejected = 0
    cdef bint step_rejected = False
    cdef double pw[4]
    for i in range(size):
        y[i] = y0[i]
    while ie < n_eval and t_eval[ie] <= 0.0:
        for i in range(size):
            samples[ie, i] = y[i]
        ie += 1
    if t_end <= 0.0:
        return np.asarray(y0).copy(), 0, 0, 0, 0.0, 0.0
    with nogil:
        if _field(Tp, d, y, f, with_jac, with_action, &H0):
            status = 3
        if status == 0:
            # initial step selection
            for i in range(size):
                scale[i] = atol + fabs(y[i]) * rtol
            d0 = _rms(y, scale, size)
            d1 = _rms(f, scale, size)
            if d0 < 1e-5 or d1 < 1e-5:
                h0 = 1e-6
            else:
                h0 = 0.01 * d0 / d1
            if h0 > t_end:
                h0 = t_end
            for i in range(size):
                ytmp[i] = y[i] + h0 * f[i]
            if _field(Tp, d, ytmp, K[1], with_jac, with_action, &Hc):
                status = 3
            for i in range(size):
                err[i] = K[1][i] - f[i]
            d2 = _rms(err, scale, size) / h0
            if d1 <= 1e-15 and d2 <= 1e-15:
                h1 = h0 * 1e-3
                if h1 < 1e-6:
                    h1 = 1e-6
            else:
                h1 = pow(0.01 / (d1 if d1 > d2 else d2), 0.2)
            h = 100 * h0
            if h1 < h:
                h = h1
            if t_end < h:
                h = t_end
        while status == 0 and t < t_end:
            if steps >= max_steps:
                status = 1
                break
            if h < (10 * 2.220446049250313e-16 * t if t > 0 else 1e-300):
                status = 1
                break
            t_new = t + h
            if t_new >= t_end:
                t_new = t_end
            hh = t_new - t
            for i in range(size):
                K[0][i] = f[i]
            for s in range(1, 6):
                for i in range(size):
                    acc = 0.0
                    for j in range(s):
                        acc += Ac[s][j] * K[j][i]
                    ytmp[i] = y[i] + hh * acc
                if _field(Tp, d, ytmp, K[s], with_jac, with_action, &Hc):
                    status = 3
                    break
            if status:
                break
            for i in range(size):
                acc = 0.0
                for j in range(6):
                    acc += Bc[j] * K[j][i]
                ynew[i] = y[i] + hh * acc
            if _field(Tp, d, ynew, K[6], with_jac, with_action, &Hc):
                status = 3
                break
            for i in range(size):
                acc = 0.0
                for j in range(7):
                    acc += Ec[j] * K[j][i]
                err[i] = hh * acc
                scale[i] = atol + (fabs(y[i]) if fabs(y[i]) > fabs(ynew[i]) else fabs(ynew[i])) * rtol
            en = _rms(err, scale, size)
            if not isfinite(en):
                en = 1e300
            if en < 1.0:
                if en == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = SAFETY * pow(en, -0.2)
                    if factor > MAX_FACTOR:
                        factor = MAX_FACTOR
                if step_rejected and factor > 1.0:
                    factor = 1.0
                step_rejected = False
                steps += 1
                while ie < n_eval and t_eval[ie] <= t_new:
                    th = (t_eval[ie] - t) / hh
                    pw[0] = th; pw[1] = th * th; pw[2] = th * th * th; pw[3] = th * th * th * th
                    for i in range(size):
                        acc = 0.0
                        for j in range(7):
                            acc += K[j][i] * (Pc[j][0] * pw[0] + Pc[j][1] * pw[1]
                                              + Pc[j][2] * pw[2] + Pc[j][3] * pw[3])
                        samples[ie, i] = y[i] + hh * acc
                    ie += 1
                t = t_new
                for i in range(size):
                    y[i] = ynew[i]
                    f[i] = K[6][i]
                h = hh * factor
                # K[6] evaluation already produced H at the new point
                if fabs(Hc - H0) > drift:
                    drift = fabs(Hc - H0)
                nrm = 0.0
                for i in range(n_state):
                    if not isfinite(y[i]):
                        nrm = 1e308
                        break
                    nrm += y[i] * y[i]
                if sqrt(nrm) > blowup:
                    status = 2
                    break
                nrm = 0.0
                for i in range(d):
                    nrm += y[i] * y[i]
                if sqrt(nrm) > radius:
                    status = 3
                    break
            else:
                factor = SAFETY * pow(en, -0.2)
                if factor < MIN_FACTOR:
                    factor = MIN_FACTOR
                h = hh * factor
                step_rejected = True
                rejected += 1
        if status == 0:
            while ie < n_eval:
                for i in range(size):
                    samples[ie, i] = y[i]
                ie += 1
    yout = np.empty(size)
    for i in range(size):
        yout[i] = y[i]
    return yout, status, steps, rejected, drift, t


def em_step(double[:, ::1] x, double[:, ::1] y, const double[:, ::1] dw, double dt,
            const double[:, :, :, ::1] T, double sqrt_h):
    """Advance every path by one Euler-Maruyama step, in place.

    dX = -G(X) Y dt,  dY = 1/2 v(X, Y) dt + sqrt(h) chol(g(X)) dW,
    with ``v_i = y . dG_i . y = -(G y) . dg_i . (G y)``.  ``dw`` holds
    standard normal draws already scaled by ``sqrt(dt)``.  Returns the
    number of paths whose metric became singular (left untouched).
    """
    cdef Py_ssize_t n = x.shape[0], r
    cdef int d = x.shape[1]
    cdef const double* Tp = &T[0, 0, 0, 0]
    cdef int i, j, k, l, bad = 0, failed = 0
    cdef double g[MAXD][MAXD]
    cdef double G[MAXD][MAXD]
    cdef double L[MAXD][MAXD]
    cdef double w[MAXD]
    cdef double v[MAXD]
    cdef double acc
    if d > MAXD:
        raise ValueError("dimension too large for compiled core")
    with nogil:
        for r in range(n):
            for i in range(d):
                for j in range(d):
                    acc = 0.0
                    for k in range(d):
                        for l in range(d):
                            acc += T4(Tp, d, i, j, k, l) * x[r, k] * x[r, l]
                    g[i][j] = (1.0 if i == j else 0.0) + 0.5 * acc
            if _invert(d, g, G):
                bad += 1
                continue
            # Cholesky of g
            failed = 0
            for i in range(d):
                for j in range(i + 1):
                    acc = g[i][j]
                    for k in range(j):
                        acc -= L[i][k] * L[j][k]
                    if i == j:
                        if acc <= 0.0:
                            failed = 1
                            break
                        L[i][i] = sqrt(acc)
                    else:
                        L[i][j] = acc / L[j][j]
                if failed:
                    break
            if failed:
                bad += 1
                continue
            for i in range(d):
                acc = 0.0
                for j in range(d):
                    acc += G[i][j] * y[r, j]
                w[i] = acc
            for i in range(d):
                acc = 0.0
                for j in range(d):
                    for k in range(d):
                        for l in range(d):
                            acc += w[j] * T4(Tp, d, j, k, i, l) * x[r, l] * w[k]
                v[i] = -acc
            for i in range(d):
                x[r, i] -= w[i] * dt
            for i in range(d):
                acc = 0.0
                for j in range(i + 1):
                    acc += L[i][j] * dw[r, j]
                y[r, i] += 0.5 * v[i] * dt + sqrt_h * acc
    return bad
