"""Pure-Python integration core, used when the compiled extension is absent.

Line-for-line counterpart of ``_kernel.pyx``.  Plain floats and complex
numbers are used instead of numpy inside the step loop because per-call
numpy overhead dominates for 2- and 5-component states.
"""

import cmath
import math

import numpy as np

from . import _tableau

NS = _tableau.N_STAGES
_A = [list(row) for row in _tableau.A]
_B = list(_tableau.B)
_C = list(_tableau.C)
_E3 = list(_tableau.E3)
_E5 = list(_tableau.E5)

K_POWER, K_WVN, K_EXP, K_FOURIER, K_RANDOM, K_TABLE_LINEAR, K_TABLE_STEP = range(7)


class _Prog:
    __slots__ = ("terms",)

    def __init__(self, program):
        terms = []
        data = program.data
        for t in range(len(program.kinds)):
            o, m = int(program.off[t, 0]), int(program.off[t, 1])
            terms.append((int(program.kinds[t]), tuple(float(v) for v in program.par[t]),
                          [float(v) for v in data[o:o + 2 * m if program.kinds[t] >= K_TABLE_LINEAR else o + m]],
                          m))
        self.terms = terms


def _term(kind, q, d, m, x):
    amp, alpha, omega, phase, sign, period, halfline = q
    y = sign * x
    if halfline * x < 0.0:
        return 0.0
    if kind == K_POWER:
        r = 1.0 if alpha == 0.0 else (1.0 + abs(y)) ** -alpha
        return amp * r * math.cos(omega * y + phase)
    if kind == K_WVN:
        r = 1.0 if alpha == 0.0 else (1.0 + abs(y)) ** -alpha
        return amp * r * math.sin(omega * y + phase)
    if kind == K_EXP:
        return amp * math.exp(-alpha * abs(y)) * math.cos(omega * y + phase)
    if kind == K_FOURIER:
        th = 2.0 * math.pi * y / period
        c1, s1 = math.cos(th), math.sin(th)
        ck, sk = 1.0, 0.0
        acc = d[0]
        for j in range((m - 1) // 2):
            ck, sk = ck * c1 - sk * s1, sk * c1 + ck * s1
            acc += d[1 + 2 * j] * ck + d[2 + 2 * j] * sk
        return amp * acc
    if kind == K_RANDOM:
        r = 1.0 if alpha == 0.0 else (1.0 + abs(y)) ** -alpha
        acc = 0.0
        for j in range(m // 3):
            acc += d[3 * j] * math.cos(d[3 * j + 1] * y + d[3 * j + 2])
        return amp * r * acc
    if m == 0 or y < d[0] or y > d[m - 1]:
        return 0.0
    if y == d[m - 1]:
        return amp * d[2 * m - 1]
    lo, hi = 0, m - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if d[mid] <= y:
            lo = mid
        else:
            hi = mid
    if kind == K_TABLE_STEP or d[hi] == d[lo]:
        return amp * d[m + lo]
    tmp = (y - d[lo]) / (d[hi] - d[lo])
    return amp * (d[m + lo] + tmp * (d[m + hi] - d[m + lo]))


def _eval(prog, x):
    s = 0.0
    for kind, q, d, m in prog.terms:
        s += _term(kind, q, d, m, x)
    return s


def evaluate(program, x):
    """Evaluate a compiled potential program at the points ``x``."""
    prog = _Prog(program)
    xs = np.asarray(x, dtype=np.float64)
    flat = [_eval(prog, float(v)) for v in xs.ravel()]
    return np.array(flat, dtype=np.float64).reshape(xs.shape)


def _rhs(mode, pu, pv, lam, kappa, x, y):
    u = _eval(pu, x)
    v = _eval(pv, x)
    if mode == 0:
        return [y[1], (u + v - lam) * y[0]]
    th = y[0]
    thc = th.conjugate()
    thc2 = thc * thc
    return [y[1], (u - lam) * th, complex(v * (th.real * th.real + th.imag * th.imag)),
            v * thc2, v * thc2 * cmath.exp(kappa * y[2])]


def propagate(mode, prog_u, prog_v, lam, x0, xout, y0, kappa=0.0, rtol=1e-10,
              atol=1e-12, max_step=1.0, h0=0.0, max_steps=10_000_000):
    """Integrate from ``x0`` and record the state at each point of ``xout``.

    Returns ``(states, status, nsteps, nrejected, x_reached)``.
    """
    pu, pv = _Prog(prog_u), _Prog(prog_v)
    xo = [float(v) for v in np.asarray(xout, dtype=np.float64)]
    y = [complex(v) for v in np.asarray(y0, dtype=np.complex128)]
    n = len(y)
    if n != (2 if mode == 0 else 5):
        raise ValueError("state length does not match mode")
    lam = float(lam)
    kappa = complex(kappa)
    nout = len(xo)
    out = np.zeros((nout, n), dtype=np.complex128)
    x = float(x0)
    j = steps = rej = 0
    eps = 2.220446049250313e-16

    while j < nout and xo[j] <= x + 10.0 * eps * (abs(x) + 1.0):
        out[j] = y
        j += 1
    h_ctrl = h0 if h0 > 0 else 0.01
    h_ctrl = min(h_ctrl, max_step)
    K = [None] * (NS + 1)
    K[0] = _rhs(mode, pu, pv, lam, kappa, x, y)
    rng = range(n)

    while j < nout:
        if steps >= max_steps:
            return out, 2, steps, rej, x
        target = xo[j]
        rejected = False
        while True:
            h = h_ctrl
            clipped = False
            if x + h >= target:
                h = target - x
                clipped = True
            if h < 10.0 * eps * (abs(x) + 1.0):
                return out, 1, steps, rej, x
            for s in range(1, NS):
                a = _A[s]
                ytmp = [y[i] + h * sum(a[r] * K[r][i] for r in range(s)) for i in rng]
                K[s] = _rhs(mode, pu, pv, lam, kappa, x + _C[s] * h, ytmp)
            ynew = [y[i] + h * sum(_B[s] * K[s][i] for s in range(NS)) for i in rng]
            K[NS] = _rhs(mode, pu, pv, lam, kappa, x + h, ynew)
            e5n = e3n = 0.0
            for i in rng:
                e5c = sum(_E5[s] * K[s][i] for s in range(NS + 1))
                e3c = sum(_E3[s] * K[s][i] for s in range(NS + 1))
                sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
                err5 = abs(e5c) / sc
                err3 = abs(e3c) / sc
                e5n += err5 * err5
                e3n += err3 * err3
            if e5n == 0.0 and e3n == 0.0:
                errn = 0.0
            else:
                errn = abs(h) * e5n / math.sqrt((e5n + 0.01 * e3n) * n)
            if not math.isfinite(errn):
                errn = 1e300
            if errn < 1.0:
                fac = 10.0 if errn == 0.0 else min(10.0, 0.9 * errn ** -0.125)
                if rejected and fac > 1.0:
                    fac = 1.0
                if not clipped:
                    h_ctrl = min(h * fac, max_step)
                break
            h_ctrl = h * max(0.2, 0.9 * errn ** -0.125)
            rejected = True
            rej += 1
        steps += 1
        x = target if clipped else x + h
        y = ynew
        K[0] = K[NS]
        for v in y:
            if not (math.isfinite(v.real) and math.isfinite(v.imag)):
                return out, 3, steps, rej, x
        while j < nout and xo[j] <= x + 10.0 * eps * (abs(x) + 1.0):
            out[j] = y
            j += 1
    return out, 0, steps, rej, x
