"""Truncated integral operators, maximal functions and Lorentz norms.

Functions are finite step functions, so measures, rearrangements and
Lorentz integrals are evaluated in closed form.  Interval sets use exact
rational arithmetic (:class:`fractions.Fraction`) so that dyadic covers can be
checked with zero tolerance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import (ConfigError, DomainError, IterationError, LevelError,
                     PreconditionError)
from .potentials import PotentialSpec, compile_program, eval_program

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


# --- step functions ----------------------------------------------------

@dataclass(frozen=True)
class StepFunction:
    """``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``, zero elsewhere."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values)
        v = v.astype(complex) if np.iscomplexobj(v) else v.astype(float)
        if b.ndim != 1 or v.ndim != 1 or b.size != v.size + 1:
            raise ConfigError("need len(breakpoints) == len(values) + 1")
        if np.any(np.diff(b) <= 0):
            raise ConfigError("breakpoints must be strictly increasing")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(v))):
            raise ConfigError("step function must be finite")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def indicator(cls, intervals) -> "StepFunction":
        """``chi`` of a union of disjoint intervals."""
        iv = sorted((float(a), float(b)) for a, b in intervals)
        bps, vals = [iv[0][0]], []
        for a, b in iv:
            if a > bps[-1]:
                vals.append(0.0)
                bps.append(a)
            vals.append(1.0)
            bps.append(b)
        return cls(np.array(bps), np.array(vals))

    @property
    def lengths(self):
        return np.diff(self.breakpoints)

    @property
    def support_measure(self) -> float:
        return float(np.sum(self.lengths[self.values != 0]))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = np.searchsorted(self.breakpoints, x, side="right") - 1
        ok = (i >= 0) & (i < self.values.size)
        return np.where(ok, self.values[np.clip(i, 0, self.values.size - 1)], 0)

    def lp_norm(self, p: float) -> float:
        a = np.abs(self.values)
        if math.isinf(p):
            return float(a.max(initial=0.0))
        return float(np.sum(a ** p * self.lengths)) ** (1.0 / p)

    def distribution(self, s):
        """``m{|f| > s}``."""
        a = np.abs(self.values)
        s = np.asarray(s, dtype=float)
        return np.sum(np.where(a[None, :] > s.reshape(-1, 1), self.lengths[None, :], 0.0),
                      axis=1).reshape(s.shape)

    def dilate(self, c: float) -> "StepFunction":
        """``x -> f(x / c)``."""
        return StepFunction(self.breakpoints * c, self.values)

    def to_json(self) -> str:
        v = self.values
        vals = [[float(z.real), float(z.imag)] for z in v] if np.iscomplexobj(v) else v.tolist()
        return json.dumps({"breakpoints": self.breakpoints.tolist(), "values": vals})

    @classmethod
    def from_json(cls, s: str) -> "StepFunction":
        d = json.loads(s)
        vals = d["values"]
        if vals and isinstance(vals[0], list):
            vals = [complex(a, b) for a, b in vals]
        return cls(np.array(d["breakpoints"], dtype=float), np.array(vals))


def random_step_function(rng, support: float, n_pieces: int = 16, complex_values=False):
    """Random breakpoints in ``[0, support]`` and values uniform in ``[-1, 1]``."""
    inner = np.sort(rng.uniform(0.0, support, n_pieces - 1))
    bps = np.concatenate(([0.0], inner, [support]))
    keep = np.concatenate(([True], np.diff(bps) > 0))
    bps = bps[keep]
    vals = rng.uniform(-1.0, 1.0, bps.size - 1)
    if complex_values:
        vals = vals + 1j * rng.uniform(-1.0, 1.0, bps.size - 1)
    return StepFunction(bps, vals)


def rearrangement(f: StepFunction) -> StepFunction:
    """Non-increasing rearrangement ``f*(t) = inf{s : m{|f| > s} <= t}`` on ``[0, m(supp f))``."""
    a = np.abs(f.values)
    ln = f.lengths
    keep = a > 0
    a, ln = a[keep], ln[keep]
    if a.size == 0:
        return StepFunction(np.array([0.0, 1.0]), np.array([0.0]))
    order = np.argsort(-a, kind="stable")
    a, ln = a[order], ln[order]
    # merge equal heights
    vals, lens = [a[0]], [ln[0]]
    for v, l in zip(a[1:], ln[1:]):
        if v == vals[-1]:
            lens[-1] += l
        else:
            vals.append(v)
            lens.append(l)
    bps = np.concatenate(([0.0], np.cumsum(lens)))
    return StepFunction(bps, np.array(vals))


@dataclass(frozen=True)
class LorentzNorm:
    p: float
    q: float
    value: float
    divergent: bool = False


def lorentz_norm(f: StepFunction, p: float, q: float) -> LorentzNorm:
    """``||f||*_pq = ((q/p) int_0^inf (t^(1/p) f*(t))^q dt/t)^(1/q)``.

    For a step ``f*`` with heights ``s_i`` on ``(t_{i-1}, t_i)`` this is
    ``(sum s_i^q (t_i^(q/p) - t_{i-1}^(q/p)))^(1/q)``; ``q = inf`` gives
    ``max s_i t_i^(1/p)``.
    """
    if not (1 <= p < math.inf):
        raise PreconditionError("need 1 <= p < inf")
    if not q >= 1:
        raise PreconditionError("need q >= 1")
    fs = rearrangement(f)
    s = fs.values
    t = fs.breakpoints
    if not np.any(s):
        return LorentzNorm(p, q, 0.0)
    if math.isinf(q):
        return LorentzNorm(p, q, float(np.max(s * t[1:] ** (1.0 / p))))
    r = q / p
    top = float(s[0])  # f* is non-increasing; scaling keeps s**q from under/overflowing
    total = float(np.sum((s / top) ** q * (t[1:] ** r - t[:-1] ** r)))
    if not math.isfinite(total):
        return LorentzNorm(p, q, math.inf, True)
    return LorentzNorm(p, q, top * total ** (1.0 / q))


# --- exact interval sets and dyadic partitions --------------------------

def _frac(v) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(v)


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of disjoint open intervals with rational endpoints."""

    intervals: tuple

    def __post_init__(self):
        iv = sorted((_frac(a), _frac(b)) for a, b in self.intervals if _frac(b) > _frac(a))
        merged = []
        for a, b in iv:
            if merged and a <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], b))
            else:
                merged.append((a, b))
        object.__setattr__(self, "intervals", tuple(merged))

    @property
    def measure(self) -> Fraction:
        return sum((b - a for a, b in self.intervals), Fraction(0))

    def intersect(self, lo, hi) -> "IntervalSet":
        lo, hi = _frac(lo), _frac(hi)
        return IntervalSet(tuple((max(a, lo), min(b, hi)) for a, b in self.intervals
                                 if min(b, hi) > max(a, lo)))

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet(self.intervals + other.intervals)

    def minus(self, other: "IntervalSet") -> "IntervalSet":
        out = list(self.intervals)
        for c, d in other.intervals:
            nxt = []
            for a, b in out:
                if d <= a or c >= b:
                    nxt.append((a, b))
                    continue
                if a < c:
                    nxt.append((a, c))
                if d < b:
                    nxt.append((d, b))
            out = nxt
        return IntervalSet(tuple(out))

    def symmetric_difference_measure(self, other: "IntervalSet") -> Fraction:
        return self.minus(other).measure + other.minus(self).measure

    def measure_up_to(self, a) -> Fraction:
        """``m((0, a) cap E)`` (assuming ``E`` lies in ``(0, inf)``)."""
        a = _frac(a)
        return sum((min(b, a) - lo for lo, b in self.intervals if lo < a), Fraction(0))

    def position_of_measure(self, t) -> Fraction:
        """``inf{a : m((0, a) cap E) = t}`` for ``0 <= t <= m(E)``."""
        t = _frac(t)
        acc = Fraction(0)
        if t == 0:
            return self.intervals[0][0] if self.intervals else Fraction(0)
        for a, b in self.intervals:
            if acc + (b - a) >= t:
                return a + (t - acc)
            acc += b - a
        raise DomainError("measure beyond m(E)")


def level_count(E: IntervalSet) -> int:
    """Smallest integer ``n`` with ``m(E) <= 2**n``."""
    m = E.measure
    if m <= 0:
        raise DomainError("E has zero measure")
    n = math.ceil(math.log2(m)) if m.denominator == 1 else math.floor(math.log2(m)) - 1
    while Fraction(2) ** n < m:
        n += 1
    while Fraction(2) ** (n - 1) >= m:
        n -= 1
    return n


@dataclass
class DyadicPartition:
    """Cells ``E_{m,l} = E cap (a_{m,l}, a_{m,l+1})`` with ``m((0,a_{m,l}) cap E) = 2^m l``.

    ``cells`` has ``2**(n-m)`` slots; the missing ones are empty sets.
    """

    E: IntervalSet
    m: int
    n: int
    cuts: list
    cells: list

    @property
    def n_nonempty(self) -> int:
        return sum(1 for c in self.cells if c.measure > 0)


def dyadic_partition(E: IntervalSet, m: int) -> DyadicPartition:
    """Split ``E`` into consecutive pieces of measure ``2**m``.

    Raises
    ------
    LevelError
        ``m >= n`` where ``2**(n-1) < m(E) <= 2**n``.
    """
    n = level_count(E)
    if m >= n:
        raise LevelError(f"level m={m} must be below n={n}")
    step = Fraction(2) ** m
    total = E.measure
    cuts = []
    l = 0
    while step * l <= total:
        cuts.append(E.position_of_measure(step * l))
        l += 1
    if cuts[-1] < E.intervals[-1][1]:
        cuts.append(E.intervals[-1][1])
    cells = [E.intersect(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]
    slots = 2 ** (n - m)
    cells = cells + [IntervalSet(())] * (slots - len(cells))
    return DyadicPartition(E, m, n, cuts, cells)


@dataclass
class Cover:
    cells: list  # (level, l, IntervalSet)
    target: IntervalSet
    residual: Fraction  # measure left uncovered by truncating the expansion


def _binary_digits(s: Fraction, top: int, bottom: int):
    digits = {}
    r = s
    for j in range(top, bottom - 1, -1):
        pj = Fraction(2) ** j
        if r >= pj:
            digits[j] = 1
            r -= pj
    return digits, r


def dyadic_cover_select(E: IntervalSet, N, min_level: int = -60) -> Cover:
    """Disjoint cells of the partitions reconstructing ``E cap (0, N)``.

    With ``s = m(E cap (0, N)) = sum s_m 2^m`` the cell of level ``m`` (where
    ``s_m = 1``) has index ``l = sum_{j>m} s_j 2^(j-m)``.  When ``s = 2^n``
    equals ``m(E)`` the whole set is the single selected cell.  A dyadic
    ``s`` (every float is one) is expanded down to its last digit, so the
    cover is exact; otherwise the expansion stops at ``min_level`` and the
    uncovered measure is returned as ``residual``.
    """
    N = _frac(N)
    if not N > 0:
        raise PreconditionError("N must be positive")
    target = E.intersect(Fraction(0) if not E.intervals else min(Fraction(0), E.intervals[0][0]), N)
    s = target.measure
    if s == 0:
        return Cover([], target, Fraction(0))
    n = level_count(E)
    if s == Fraction(2) ** n:
        return Cover([(n, 0, E)], target, Fraction(0))
    den = s.denominator
    if den & (den - 1) == 0:  # dyadic s: the expansion terminates at 2**-log2(den)
        min_level = min(min_level, -(den.bit_length() - 1))
    digits, resid = _binary_digits(s, n - 1, min_level)
    cells = []
    for m_lvl in sorted(digits, reverse=True):
        l = sum(Fraction(2) ** (j - m_lvl) for j in digits if j > m_lvl)
        l = int(l)
        step = Fraction(2) ** m_lvl
        lo = E.position_of_measure(step * l)
        hi = E.position_of_measure(step * (l + 1))
        cells.append((m_lvl, l, E.intersect(lo, hi)))
    return Cover(cells, target, resid)


def verify_cover(cover: Cover) -> dict:
    """Exact checks: pairwise disjoint, at most one cell per level, union equals the target."""
    levels = [c[0] for c in cover.cells]
    union = IntervalSet(())
    disjoint = True
    for _, _, c in cover.cells:
        if union.measure + c.measure != union.union(c).measure:
            disjoint = False
        union = union.union(c)
    sd = union.symmetric_difference_measure(cover.target)
    return {"disjoint": disjoint, "one_per_level": len(levels) == len(set(levels)),
            "symmetric_difference": sd, "exact": disjoint and sd == 0
            and len(levels) == len(set(levels))}


# --- kernels -----------------------------------------------------------

@dataclass
class KernelSpec:
    """Kernel ``A(k, x)`` of ``(T f)(k) = int_0^N A(k, x) f(x) dx``.

    kinds
        ``fourier``: ``exp(-i k x)``.
        ``free_phase``: ``exp(-i k x + (2i/k) int_0^x V)``.
        ``bloch_kernel``: ``conj(theta)^2 exp((2/w) int_0^x V|theta|^2) / w``
        at energy ``k`` (``U`` periodic background).
        ``tabulated``: ``table = (k_nodes, x_nodes, values)``, bilinear.
    """

    kind: str
    window: tuple = (1.0, 2.0)
    bound: float = 1.0
    V: PotentialSpec | None = None
    U: PotentialSpec | None = None
    period: float | None = None
    table: tuple | None = None
    step: float = 0.25
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("fourier", "free_phase", "bloch_kernel", "tabulated"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if not self.window[0] < self.window[1]:
            raise ConfigError("kernel window must be increasing")
        if self.kind == "free_phase" and self.window[0] * self.window[1] <= 0:
            raise ConfigError("free_phase window must exclude k = 0")
        if self.kind == "bloch_kernel" and self.U is None:
            raise ConfigError("bloch_kernel needs a periodic background U")
        if self.kind == "tabulated" and self.table is None:
            raise ConfigError("tabulated kernel needs table=(k, x, values)")

    def check_k(self, k):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        a, b = self.window
        if np.any(k < a) or np.any(k > b):
            raise DomainError("k outside the kernel window")
        return k

    # phase integral of V for the free_phase kernel
    def _Phi(self, x):
        if self.V is None:
            return np.zeros_like(x)
        return _phi_integral(compile_program(self.V), x)


def _phi_integral(prog, x):
    """``int_0^x V`` at sorted points by 8-point Gauss-Legendre per gap."""
    x = np.asarray(x, dtype=float)
    pts = np.concatenate(([0.0], x))
    out = np.zeros_like(x)
    acc = 0.0
    lo = pts[:-1]
    hi = pts[1:]
    # split gaps into pieces no longer than 0.5
    res = np.zeros(x.size)
    nsub = np.maximum(1, np.ceil(np.abs(hi - lo) / 0.5)).astype(int)
    for i in range(x.size):
        a, b, n = lo[i], hi[i], nsub[i]
        e = np.linspace(a, b, n + 1)
        h = 0.5 * np.diff(e)
        mid = 0.5 * (e[1:] + e[:-1])
        xs = (mid[:, None] + h[:, None] * _GL_X[None, :]).ravel()
        ws = (h[:, None] * _GL_W[None, :]).ravel()
        res[i] = float(ws @ eval_program(prog, xs))
    return np.cumsum(res)


def _sinc_step(phi0, phi1, h):
    """``int`` over a step of length ``h`` of ``exp(i psi)`` with linear ``psi``."""
    d = 0.5 * (phi1 - phi0)
    return h * np.exp(0.5j * (phi0 + phi1)) * np.sinc(d / np.pi)


def _fine_grid(points, step):
    """Sorted ``points`` refined so that no gap exceeds ``step``; returns grid and index map."""
    pts = np.unique(np.asarray(points, dtype=float))
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil((b - a) / step)))
        out.append(np.linspace(a, b, n + 1)[1:])
    g = np.concatenate(out)
    idx = np.searchsorted(g, pts)
    return g, pts, idx


def _bloch_samples(kernel, lam, xs):
    key = ("bloch", float(lam), xs.size, float(xs[-1]))
    if key in kernel._cache:
        return kernel._cache[key]
    from .asymptotics import compute_DL
    from .bloch import bloch_function
    from .potentials import zero
    bd = bloch_function(kernel.U, lam, None, period=kernel.period)
    c = compute_DL(kernel.V or zero(), bd, xs)
    val = np.conj(c.theta) ** 2 * np.exp(2.0 * c.A / c.w) / c.w
    kernel._cache[key] = val
    return val


def cumulative_T(kernel: KernelSpec, f: StepFunction, k_grid, points) -> np.ndarray:
    """``int_0^N A(k, x) f(x) dx`` for every ``k`` and every ``N`` in ``points``.

    Returns an array of shape ``(len(k_grid), len(points))``.  Integration
    nodes always include the breakpoints of ``f``.
    """
    k = kernel.check_k(k_grid)
    pts_req = np.asarray(points, dtype=float)
    if np.any(pts_req < 0):
        raise PreconditionError("truncation points must be >= 0")
    allp = np.unique(np.concatenate(([0.0], pts_req, f.breakpoints[f.breakpoints >= 0])))
    if kernel.kind == "fourier":
        g = allp
    else:
        g, _, _ = _fine_grid(allp, kernel.step)
    h = np.diff(g)
    mid = 0.5 * (g[1:] + g[:-1])
    fv = f(mid)
    if kernel.kind == "fourier":
        ph0 = -np.outer(k, g[:-1])
        ph1 = -np.outer(k, g[1:])
        seg = _sinc_step(ph0, ph1, h[None, :])
    elif kernel.kind == "free_phase":
        Phi = kernel._Phi(g)
        ph = -np.outer(k, g) + (2.0 / k)[:, None] * Phi[None, :]
        seg = _sinc_step(ph[:, :-1], ph[:, 1:], h[None, :])
    elif kernel.kind == "bloch_kernel":
        rows = []
        for lam in k:
            A = _bloch_samples(kernel, lam, g)
            rows.append(0.5 * (A[:-1] + A[1:]) * h)
        seg = np.array(rows)
    else:
        from scipy.interpolate import RegularGridInterpolator
        kn, xn, vals = kernel.table
        vals = np.asarray(vals)
        ri = RegularGridInterpolator((kn, xn), vals.real, bounds_error=False, fill_value=0.0)
        ii = RegularGridInterpolator((kn, xn), vals.imag, bounds_error=False, fill_value=0.0)
        KK, XX = np.meshgrid(k, g, indexing="ij")
        pts2 = np.stack([KK.ravel(), XX.ravel()], axis=1)
        A = (ri(pts2) + 1j * ii(pts2)).reshape(KK.shape)
        seg = 0.5 * (A[:, :-1] + A[:, 1:]) * h[None, :]
    cum = np.concatenate([np.zeros((k.size, 1), complex), np.cumsum(seg * fv[None, :], axis=1)],
                         axis=1)
    return cum[:, np.searchsorted(g, pts_req)]


def apply_T(kernel: KernelSpec, f: StepFunction, k_grid, N: float) -> np.ndarray:
    """``(T_N f)(k) = int_0^N A(k, x) f(x) dx`` on ``k_grid``."""
    return cumulative_T(kernel, f, k_grid, [float(N)])[:, 0]


def maximal_function(kernel: KernelSpec, f: StepFunction, k_grid, N_grid) -> np.ndarray:
    """``Mf(k) = max over N in N_grid (plus the breakpoints of f) of |T_N f(k)|``."""
    Ns = np.unique(np.concatenate((np.asarray(N_grid, dtype=float),
                                   f.breakpoints[f.breakpoints > 0])))
    return np.max(np.abs(cumulative_T(kernel, f, k_grid, Ns)), axis=1)


# --- L2 norm estimation ------------------------------------------------

def _cell_matrix(kernel: KernelSpec, X: float, dx: float, k: np.ndarray) -> np.ndarray:
    """Columns ``int_cell A(k, x) dx / sqrt(dx)`` (Galerkin on x-cells)."""
    nc = max(1, int(math.ceil(X / dx)))
    edges = np.linspace(0.0, X, nc + 1)
    h = np.diff(edges)
    if kernel.kind == "fourier":
        M = _sinc_step(-np.outer(k, edges[:-1]), -np.outer(k, edges[1:]), h[None, :])
    else:
        sub = max(1, int(math.ceil(dx / kernel.step)))
        g = np.linspace(0.0, X, nc * sub + 1)
        hs = np.diff(g)
        if kernel.kind == "free_phase":
            Phi = kernel._Phi(g)
            ph = -np.outer(k, g) + (2.0 / k)[:, None] * Phi[None, :]
            seg = _sinc_step(ph[:, :-1], ph[:, 1:], hs[None, :])
        elif kernel.kind == "bloch_kernel":
            seg = np.array([0.5 * (A[:-1] + A[1:]) * hs
                            for A in (_bloch_samples(kernel, lam, g) for lam in k)])
        else:
            cum = np.stack([cumulative_T(kernel, StepFunction(np.array([0.0, X]), np.array([1.0])),
                                         k, g)], 0)[0]
            seg = np.diff(cum, axis=1)
        M = seg.reshape(k.size, nc, sub).sum(axis=2)
    return M / np.sqrt(h)[None, :]


def _power_norm(M, tol=1e-12, max_iter=64, seed=0):
    """Power method on the Gram matrix, accelerated by repeated squaring.

    ``P <- P @ P`` after ``j`` rounds is ``G**(2**j)`` (normalized), so the
    clustered leading singular values typical of oscillatory kernels are
    separated after logarithmically many rounds.  Returns ``(norm, rounds)``.
    """
    G = M @ M.conj().T if M.shape[0] <= M.shape[1] else M.conj().T @ M
    G = 0.5 * (G + G.conj().T)
    scale = float(np.real(np.trace(G)))
    if scale == 0.0:
        return 0.0, 0
    G = G / scale
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(G.shape[0]) + 1j * rng.standard_normal(G.shape[0])
    P = G.copy()
    prev = -1.0
    for it in range(1, max_iter + 1):
        v = P @ v0
        v /= np.linalg.norm(v)
        lam = float(np.real(np.vdot(v, G @ v)))
        if abs(lam - prev) <= tol * lam:
            return math.sqrt(lam * scale), it
        prev = lam
        P = P @ P
        P /= np.linalg.norm(P)
    raise IterationError(f"power iteration did not settle in {max_iter} rounds")


@dataclass
class NormEstimate:
    value: float
    refined: float
    delta: float
    X: float
    dx: float
    dk: float
    iterations: int


def estimate_l2_norm(kernel: KernelSpec, X: float, dx: float = 0.5, dk: float | None = None,
                     tol: float = 1e-12, max_iter: int = 64) -> NormEstimate:
    """Largest singular value of the discretized ``T: L2(0, X) -> L2(window)``.

    ``x`` is discretized by cell averages (Galerkin, so refining nested
    cells can only increase the estimate) and ``k`` by midpoint samples
    with spacing ``dk`` (default ``pi / (2 X)``, twice the Nyquist density
    for functions band-limited to ``[0, X]``).  The estimate is repeated
    with both resolutions halved and the relative change reported as
    ``delta``.
    """
    if not X > 0:
        raise PreconditionError("X must be positive")
    dk = dk or math.pi / (2.0 * X)
    a, b = kernel.window

    def one(dx_, dk_):
        nk = max(1, int(math.ceil((b - a) / dk_)))
        kk = a + (np.arange(nk) + 0.5) * (b - a) / nk
        M = _cell_matrix(kernel, X, dx_, kk) * math.sqrt((b - a) / nk)
        return _power_norm(M, tol, max_iter)

    v1, it = one(dx, dk)
    v2, _ = one(dx / 2, dk / 2)
    delta = abs(v2 - v1) / v2 if v2 else 0.0
    return NormEstimate(v1, v2, delta, X, dx, dk, it)


# --- symbol classes ----------------------------------------------------

def free_phase_symbol(V: PotentialSpec, x_max: float = 1.0e4, spacing: float = 0.05):
    """``a(k, x) = exp((2i/k) int_0^x V)`` with the integral Hermite-interpolated."""
    from scipy.interpolate import CubicHermiteSpline

    prog = compile_program(V)
    xs = np.arange(0.0, x_max + 2.0 + spacing, spacing)
    Phi = _phi_integral(prog, xs)
    spl = CubicHermiteSpline(xs, Phi, eval_program(prog, xs))

    def a(k, x):
        return np.exp(2j / np.asarray(k) * spl(x))

    return a


@dataclass
class SymbolReport:
    exponents: dict
    bounds: dict
    passed: bool
    resolution_warning: bool
    sup: dict


def check_symbol_class(symbol: Callable, rho: float, sigma: float, k_window=(1.0, 2.0),
                       x_range=(1.0e2, 1.0e4), margin: float = 0.05, n_k: int = 5,
                       n_x: int = 20000, hx: float = 1e-3, hk: float = 1e-4,
                       n_bins: int = 16) -> SymbolReport:
    """Fit ``(1+x)``-power envelopes of ``d_x a``, ``d_k a`` and ``d_x d_k a``.

    Centered finite differences; for each derivative the maximum over the
    ``k`` samples and over each logarithmic ``x`` bin is regressed on
    ``log(1+x)``.  Passes iff the fitted exponents are at most ``-rho``,
    ``sigma`` and ``sigma - rho`` respectively, each plus ``margin``.
    """
    ks = np.linspace(k_window[0], k_window[1], n_k)
    lo, hi = x_range
    x = np.geomspace(max(lo, 1e-9), hi, n_x) if lo > 0 else np.linspace(lo, hi, n_x)
    dx, dk, dxk = [], [], []
    for k in ks:
        dx.append(np.abs(symbol(k, x + hx) - symbol(k, x - hx)) / (2 * hx))
        dk.append(np.abs(symbol(k + hk, x) - symbol(k - hk, x)) / (2 * hk))
        dxk.append(np.abs(symbol(k + hk, x + hx) - symbol(k + hk, x - hx)
                          - symbol(k - hk, x + hx) + symbol(k - hk, x - hx)) / (4 * hx * hk))
    envs = {"x": np.max(dx, axis=0), "k": np.max(dk, axis=0), "xk": np.max(dxk, axis=0)}
    floor = {"x": 1e3 * np.finfo(float).eps / hx, "k": 1e3 * np.finfo(float).eps / hk,
             "xk": 1e3 * np.finfo(float).eps / (hx * hk)}
    bounds = {"x": -rho + margin, "k": sigma + margin, "xk": sigma - rho + margin}
    lx = np.log1p(x)
    edges = np.linspace(lx[0], lx[-1], n_bins + 1)
    exps, sups = {}, {}
    warn = False
    for key, env in envs.items():
        sups[key] = float(env.max())
        bx, by = [], []
        for i in range(n_bins):
            sel = (lx >= edges[i]) & (lx <= edges[i + 1])
            if not np.any(sel):
                continue
            j = np.argmax(np.where(sel, env, -1.0))
            if env[j] > floor[key]:
                bx.append(lx[j])
                by.append(math.log(env[j]))
            elif env[j] > 0:
                warn = True
        exps[key] = float(np.polyfit(bx, by, 1)[0]) if len(bx) >= 3 else float("-inf")
    passed = all(exps[key] <= bounds[key] for key in envs)
    return SymbolReport(exps, bounds, passed, warn, sups)


# --- maximal bound experiment -----------------------------------------

@dataclass
class MaximalReport:
    rows: list  # (support, index, ratio)
    baseline: float
    per_support_max: dict
    trend_slope: float
    max_over_baseline: float
    passed: bool

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["support_n", "ensemble_idx", "ratio"])
            for r in self.rows:
                w.writerow([r[0], r[1], repr(float(r[2]))])


def _lq_norm(y, k, q):
    if math.isinf(q):
        return float(np.max(y))
    return float(np.trapezoid(y ** q, k)) ** (1.0 / q)


def maximal_ratio(kernel: KernelSpec, f: StepFunction, p: float, q: float,
                  k_per_unit: float | None = None, n_per_unit: float | None = None) -> float:
    """``||Mf||_{L^q(window)} / ||f||*_{pq}`` with resolution tied to the support."""
    a, b = kernel.window
    L = float(f.breakpoints[-1])
    kmax = max(abs(a), abs(b))
    dk = 1.0 / (4.0 * max(L, 1.0)) if k_per_unit is None else 1.0 / k_per_unit
    nk = max(64, int(math.ceil((b - a) / dk)) + 1)
    kg = np.linspace(a, b, nk)
    dN = 1.0 / (4.0 * kmax) if n_per_unit is None else 1.0 / n_per_unit
    Ng = np.linspace(0.0, L, max(2, int(math.ceil(L / dN)) + 1))
    Mf = maximal_function(kernel, f, kg, Ng)
    return _lq_norm(Mf, kg, q) / lorentz_norm(f, p, q).value


def maximal_bound_experiment(kernel: KernelSpec, p: float, q: float, ensemble: int = 100,
                             supports: Sequence[float] = tuple(2.0 ** j for j in range(7)),
                             seed: int = 0, n_pieces: int = 16, slack: float = 3.0) -> MaximalReport:
    """Ratios ``||Mf||_q / ||f||*_pq`` over random step functions of growing support.

    Each (support, sample) pair draws from its own spawned seed, so the
    table does not depend on evaluation order.  Passes iff the largest ratio
    is within ``slack`` times the baseline ratio of ``chi(0, 1)``.
    """
    if not q > 2:
        raise PreconditionError("need q > 2")
    if abs(1.0 / p + 1.0 / q - 1.0) > 1e-12:
        raise PreconditionError("need 1/p + 1/q = 1")
    base = maximal_ratio(kernel, StepFunction(np.array([0.0, 1.0]), np.array([1.0])), p, q)
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(supports))
    rows, per = [], {}
    for L, child in zip(supports, children):
        sub = child.spawn(ensemble)
        vals = []
        for i, s in enumerate(sub):
            f = random_step_function(np.random.default_rng(s), float(L), n_pieces)
            r = maximal_ratio(kernel, f, p, q)
            rows.append((float(L), i, r))
            vals.append(r)
        per[float(L)] = float(max(vals))
    Ls = np.array(sorted(per))
    mx = np.array([per[l] for l in Ls])
    slope = float(np.polyfit(np.log(Ls), np.log(mx), 1)[0]) if Ls.size > 1 else 0.0
    ratio = float(mx.max() / base)
    return MaximalReport(rows, base, per, slope, ratio, ratio <= slack)
