# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integration core.

Mirrors ``_pykernel`` operation for operation; the two must stay in sync.
"""

from libc.math cimport cos, sin, exp, pow, fabs, sqrt, isfinite, M_PI

import numpy as np

from . import _tableau

cdef enum:
    NS = 12
    NMAX = 5
    NPAR = 7

cdef enum:
    K_POWER = 0
    K_WVN = 1
    K_EXP = 2
    K_FOURIER = 3
    K_RANDOM = 4
    K_TABLE_LINEAR = 5
    K_TABLE_STEP = 6

cdef struct Prog:
    int n
    const int* kinds
    const double* par
    const long long* off
    const double* data

cdef double _term(const Prog* p, int t, double x) noexcept nogil:
    cdef const double* q = p.par + t * NPAR
    cdef double amp = q[0], alpha = q[1], omega = q[2], phase = q[3]
    cdef double y = q[4] * x
    cdef double r, th, c1, s1, ck, sk, tmp, acc
    cdef long long o = p.off[2 * t], m = p.off[2 * t + 1]
    cdef long long j, lo, hi, mid
    cdef int kind = p.kinds[t]
    if q[6] * x < 0.0:
        return 0.0
    if kind == K_POWER:
        r = 1.0 if alpha == 0.0 else pow(1.0 + fabs(y), -alpha)
        return amp * r * cos(omega * y + phase)
    elif kind == K_WVN:
        r = 1.0 if alpha == 0.0 else pow(1.0 + fabs(y), -alpha)
        return amp * r * sin(omega * y + phase)
    elif kind == K_EXP:
        return amp * exp(-alpha * fabs(y)) * cos(omega * y + phase)
    elif kind == K_FOURIER:
        th = 2.0 * M_PI * y / q[5]
        c1 = cos(th)
        s1 = sin(th)
        ck = 1.0
        sk = 0.0
        acc = p.data[o]
        for j in range((m - 1) // 2):
            tmp = ck * c1 - sk * s1
            sk = sk * c1 + ck * s1
            ck = tmp
            acc += p.data[o + 1 + 2 * j] * ck + p.data[o + 2 + 2 * j] * sk
        return amp * acc
    elif kind == K_RANDOM:
        r = 1.0 if alpha == 0.0 else pow(1.0 + fabs(y), -alpha)
        acc = 0.0
        for j in range(m // 3):
            acc += p.data[o + 3 * j] * cos(p.data[o + 3 * j + 1] * y + p.data[o + 3 * j + 2])
        return amp * r * acc
    else:
        # tabulated: m nodes, xs then vs; zero outside the table
        if m == 0 or y < p.data[o] or y > p.data[o + m - 1]:
            return 0.0
        if y == p.data[o + m - 1]:
            return amp * p.data[o + 2 * m - 1]
        lo = 0
        hi = m - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if p.data[o + mid] <= y:
                lo = mid
            else:
                hi = mid
        if kind == K_TABLE_STEP or p.data[o + hi] == p.data[o + lo]:
            return amp * p.data[o + m + lo]
        tmp = (y - p.data[o + lo]) / (p.data[o + hi] - p.data[o + lo])
        return amp * (p.data[o + m + lo] + tmp * (p.data[o + m + hi] - p.data[o + m + lo]))


cdef double _eval(const Prog* p, double x) noexcept nogil:
    cdef double s = 0.0
    cdef int t
    for t in range(p.n):
        s += _term(p, t, x)
    return s


cdef inline double complex _cexp(double complex z) noexcept nogil:
    cdef double e = exp(z.real)
    return e * cos(z.imag) + 1j * (e * sin(z.imag))


cdef void _rhs(int mode, const Prog* pu, const Prog* pv, double lam,
               double complex kappa, double x, const double complex* y,
               double complex* f) noexcept nogil:
    cdef double u = _eval(pu, x)
    cdef double v = _eval(pv, x)
    cdef double complex th, thc, thc2
    if mode == 0:
        f[0] = y[1]
        f[1] = (u + v - lam) * y[0]
    else:
        th = y[0]
        thc = th.conjugate()
        thc2 = thc * thc
        f[0] = y[1]
        f[1] = (u - lam) * th
        f[2] = v * (th.real * th.real + th.imag * th.imag)
        f[3] = v * thc2
        f[4] = v * thc2 * _cexp(kappa * y[2])


cdef double TA[NS][NS]
cdef double TB[NS]
cdef double TC[NS]
cdef double TE3[NS + 1]
cdef double TE5[NS + 1]


def _load_tableau():
    cdef int i, j
    for i in range(NS):
        TB[i] = _tableau.B[i]
        TC[i] = _tableau.C[i]
        for j in range(NS):
            TA[i][j] = _tableau.A[i][j]
    for i in range(NS + 1):
        TE3[i] = _tableau.E3[i]
        TE5[i] = _tableau.E5[i]


_load_tableau()


cdef int _integrate(int mode, const Prog* pu, const Prog* pv, double lam,
                    double complex kappa, double x0, const double* xout,
                    long long nout, double complex* y0, int n,
                    double complex* out, double rtol, double atol,
                    double max_step, double h0, long long max_steps,
                    long long* nsteps, long long* nrej,
                    double* xreached) noexcept nogil:
    cdef double complex y[NMAX]
    cdef double complex ynew[NMAX]
    cdef double complex ytmp[NMAX]
    cdef double complex K[NS + 1][NMAX]
    cdef double x = x0, h_ctrl, h, err5, err3, sc, e5n, e3n, denom, errn, fac
    cdef double complex acc, e5c, e3c
    cdef long long j = 0, steps = 0, rej = 0
    cdef int i, s, r, clipped, rejected
    cdef double eps = 2.220446049250313e-16
    cdef double target

    for i in range(n):
        y[i] = y0[i]
    while j < nout and xout[j] <= x + 10.0 * eps * (fabs(x) + 1.0):
        for i in range(n):
            out[j * n + i] = y[i]
        j += 1
    h_ctrl = h0 if h0 > 0 else 0.01
    if h_ctrl > max_step:
        h_ctrl = max_step
    _rhs(mode, pu, pv, lam, kappa, x, y, &K[0][0])

    while j < nout:
        if steps >= max_steps:
            xreached[0] = x
            nsteps[0] = steps
            nrej[0] = rej
            return 2
        target = xout[j]
        rejected = 0
        while True:
            h = h_ctrl
            clipped = 0
            if x + h >= target:
                h = target - x
                clipped = 1
            if h < 10.0 * eps * (fabs(x) + 1.0):
                xreached[0] = x
                nsteps[0] = steps
                nrej[0] = rej
                return 1
            for s in range(1, NS):
                for i in range(n):
                    acc = 0.0
                    for r in range(s):
                        acc = acc + TA[s][r] * K[r][i]
                    ytmp[i] = y[i] + h * acc
                _rhs(mode, pu, pv, lam, kappa, x + TC[s] * h, ytmp, &K[s][0])
            for i in range(n):
                acc = 0.0
                for s in range(NS):
                    acc = acc + TB[s] * K[s][i]
                ynew[i] = y[i] + h * acc
            _rhs(mode, pu, pv, lam, kappa, x + h, ynew, &K[NS][0])
            e5n = 0.0
            e3n = 0.0
            for i in range(n):
                e5c = 0.0
                e3c = 0.0
                for s in range(NS + 1):
                    e5c = e5c + TE5[s] * K[s][i]
                    e3c = e3c + TE3[s] * K[s][i]
                sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
                err5 = abs(e5c) / sc
                err3 = abs(e3c) / sc
                e5n += err5 * err5
                e3n += err3 * err3
            if e5n == 0.0 and e3n == 0.0:
                errn = 0.0
            else:
                denom = e5n + 0.01 * e3n
                errn = fabs(h) * e5n / sqrt(denom * n)
            if not isfinite(errn):
                errn = 1e300
            if errn < 1.0:
                if errn == 0.0:
                    fac = 10.0
                else:
                    fac = 0.9 * pow(errn, -0.125)
                    if fac > 10.0:
                        fac = 10.0
                if rejected and fac > 1.0:
                    fac = 1.0
                if not clipped:
                    h_ctrl = h * fac
                    if h_ctrl > max_step:
                        h_ctrl = max_step
                break
            fac = 0.9 * pow(errn, -0.125)
            if fac < 0.2:
                fac = 0.2
            h_ctrl = h * fac
            rejected = 1
            rej += 1
        steps += 1
        x = target if clipped else x + h
        for i in range(n):
            y[i] = ynew[i]
            K[0][i] = K[NS][i]
            if not (isfinite(y[i].real) and isfinite(y[i].imag)):
                xreached[0] = x
                nsteps[0] = steps
                nrej[0] = rej
                return 3
        while j < nout and xout[j] <= x + 10.0 * eps * (fabs(x) + 1.0):
            for i in range(n):
                out[j * n + i] = y[i]
            j += 1
    xreached[0] = x
    nsteps[0] = steps
    nrej[0] = rej
    return 0


cdef void _fill(Prog* p, const int[::1] kinds, const double[:, ::1] par,
                const long long[:, ::1] off, const double[::1] data):
    p.n = kinds.shape[0]
    p.kinds = &kinds[0] if p.n > 0 else NULL
    p.par = &par[0, 0] if p.n > 0 else NULL
    p.off = &off[0, 0] if p.n > 0 else NULL
    p.data = &data[0] if data.shape[0] > 0 else NULL


def evaluate(program, x):
    """Evaluate a compiled potential program at the points ``x``."""
    cdef Prog p
    cdef const int[::1] kinds = program.kinds
    cdef const double[:, ::1] par = program.par
    cdef const long long[:, ::1] off = program.off
    cdef const double[::1] data = program.data
    xs = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef const double[::1] xv = xs
    res = np.empty(xs.shape[0], dtype=np.float64)
    cdef double[::1] rv = res
    cdef Py_ssize_t i
    _fill(&p, kinds, par, off, data)
    with nogil:
        for i in range(xv.shape[0]):
            rv[i] = _eval(&p, xv[i])
    return res.reshape(np.shape(x))


def propagate(int mode, prog_u, prog_v, double lam, double x0, xout, y0,
              double complex kappa=0.0, double rtol=1e-10, double atol=1e-12,
              double max_step=1.0, double h0=0.0, long long max_steps=10_000_000):
    """Integrate from ``x0`` and record the state at each point of ``xout``.

    Returns ``(states, status, nsteps, nrejected, x_reached)``.
    """
    cdef Prog pu, pv
    cdef const int[::1] ku = prog_u.kinds
    cdef const double[:, ::1] au = prog_u.par
    cdef const long long[:, ::1] ou = prog_u.off
    cdef const double[::1] du = prog_u.data
    cdef const int[::1] kv = prog_v.kinds
    cdef const double[:, ::1] av = prog_v.par
    cdef const long long[:, ::1] ov = prog_v.off
    cdef const double[::1] dv = prog_v.data
    _fill(&pu, ku, au, ou, du)
    _fill(&pv, kv, av, ov, dv)

    xo = np.ascontiguousarray(xout, dtype=np.float64)
    yv = np.ascontiguousarray(y0, dtype=np.complex128).copy()
    cdef int n = yv.shape[0]
    if n != (2 if mode == 0 else 5):
        raise ValueError("state length does not match mode")
    cdef const double[::1] xov = xo
    cdef double complex[::1] y0v = yv
    cdef long long nout = xo.shape[0]
    res = np.zeros((nout, n), dtype=np.complex128)
    cdef double complex[:, ::1] rv = res
    cdef long long nsteps = 0, nrej = 0
    cdef double xr = x0
    cdef int status
    cdef const double* xp = &xov[0] if nout > 0 else NULL
    cdef double complex* op = &rv[0, 0] if nout > 0 else NULL
    with nogil:
        status = _integrate(mode, &pu, &pv, lam, kappa, x0, xp, nout,
                            &y0v[0], n, op, rtol, atol, max_step, h0,
                            max_steps, &nsteps, &nrej, &xr)
    return res, status, nsteps, nrej, xr
