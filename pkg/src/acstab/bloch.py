"""Floquet analysis of periodic backgrounds.

Monodromy, discriminant, band edges, quasimomentum, normalized Bloch
functions and the Fourier data of ``sigma(x) = (exp(-i gamma x/T) theta(x))**2``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import _backend
from .errors import BandEdgeError, ConfigError, DomainError, NumericalError
from .ode import IntegratorConfig, TransferMatrix, _check, as_program, transfer_matrix
from .potentials import PotentialSpec, Program, compile_program, constant

_ONE = compile_program(constant(1.0))
_DEFAULT_CFG = IntegratorConfig(rtol=1e-12, atol=1e-14, max_step=0.5)


def resolve_period(U, period=None) -> float:
    """Period of ``U``, read from the PotentialSpec when it can be inferred."""
    if period is not None:
        if not period > 0:
            raise ConfigError("period must be positive")
        return float(period)
    T = U.periodic_period() if isinstance(U, PotentialSpec) else None
    if T is None:
        raise ConfigError("cannot infer the period of U; pass period=")
    return T


def monodromy(U, lam: float, cfg: IntegratorConfig | None = None, period=None) -> TransferMatrix:
    """Transfer matrix of ``-u'' + U u = lam u`` over one period ``[0, T]``."""
    T = resolve_period(U, period)
    return transfer_matrix(None, lam, 0.0, T, cfg or _DEFAULT_CFG, background=U)


def discriminant(U, lam: float, cfg: IntegratorConfig | None = None, period=None) -> float:
    """Trace of the monodromy matrix."""
    return monodromy(U, lam, cfg, period).trace


@dataclass(frozen=True)
class Band:
    """Spectral band ``[a, b]``; ``clipped_*`` marks edges cut by the search range."""

    index: int
    a: float
    b: float
    parity: str
    clipped_lo: bool = False
    clipped_hi: bool = False

    @property
    def width(self):
        return self.b - self.a

    def interior(self, n: int, margin_frac: float = 0.05) -> np.ndarray:
        """``n`` equispaced energies avoiding each edge by ``margin_frac`` of the width."""
        m = margin_frac * self.width
        return np.linspace(self.a + m, self.b - m, n)


def find_bands(U, lam_range, tol: float = 1e-10, cfg: IntegratorConfig | None = None,
               period=None, n_scan: int = 1200, gap_eps: float = 1e-9) -> list:
    """Bands of the periodic operator inside ``lam_range``.

    The discriminant is sampled on ``n_scan`` points; each transition
    between ``|D| <= 2`` and ``|D| > 2`` is refined by Brent's method to
    ``tol``.  Extrema of ``D`` that come close to ``+-2`` between samples are
    refined too, so that narrow gaps are not skipped.  A gap needs
    ``|D| - 2 > gap_eps`` somewhere; touching bands merge.

    Returns
    -------
    list of Band
        Ordered; parity ``"odd"`` if ``D = +2`` at the lower edge.
    """
    lo, hi = map(float, lam_range)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ConfigError("lam_range must be finite and increasing")
    if not tol > 0:
        raise ConfigError("tol must be positive")
    T = resolve_period(U, period)
    cfg = cfg or _DEFAULT_CFG
    Up = as_program(U)
    D = lambda lam: discriminant(Up, lam, cfg, T)  # noqa: E731

    lams = np.linspace(lo, hi, n_scan)
    ds = np.array([D(l) for l in lams])

    # extra samples at interior extrema of D that approach +-2
    extra = []
    for i in range(1, n_scan - 1):
        for s in (1.0, -1.0):
            v = s * ds
            if v[i] >= v[i - 1] and v[i] >= v[i + 1] and 2.0 - 0.05 < v[i] <= 2.0 + gap_eps:
                r = minimize_scalar(lambda l: -s * D(l), bounds=(lams[i - 1], lams[i + 1]),
                                    method="bounded", options={"xatol": min(tol, 1e-10)})
                extra.append((r.x, -r.fun * s))
    if extra:
        allp = sorted(list(zip(lams, ds)) + extra)
        lams = np.array([p[0] for p in allp])
        ds = np.array([p[1] for p in allp])

    inband = np.abs(ds) - 2.0 <= gap_eps
    edges = []  # (lam, kind) kind: +1 band starts, -1 band ends
    for i in range(len(lams) - 1):
        if inband[i] == inband[i + 1]:
            continue
        s = 1.0 if ds[i + (0 if not inband[i] else 1)] > 0 else -1.0
        f = lambda l: D(l) - 2.0 * s  # noqa: E731
        fa, fb = ds[i] - 2 * s, ds[i + 1] - 2 * s
        if fa == 0.0:
            root = lams[i]
        elif fb == 0.0:
            root = lams[i + 1]
        elif fa * fb > 0:
            continue  # numerically touching
        else:
            root = brentq(f, lams[i], lams[i + 1], xtol=tol, rtol=4 * np.finfo(float).eps)
        edges.append((root, 1 if inband[i + 1] else -1))

    bands = []
    start = lo if inband[0] else None
    clipped = inband[0]
    for lam_e, kind in edges:
        if kind == 1:
            start, clipped = lam_e, False
        elif start is not None:
            bands.append((start, lam_e, clipped, False))
            start = None
    if start is not None:
        bands.append((start, hi, clipped, True))
    out = []
    for idx, (a, b, cl, ch) in enumerate(bands):
        if b - a <= 0:
            continue
        par = "odd" if D(a) > 0 else "even"
        out.append(Band(len(out) + 1, float(a), float(b), par, bool(cl), bool(ch)))
    return out


def quasimomentum(U, lam: float, cfg: IntegratorConfig | None = None, period=None,
                  edge_tol: float = 1e-12) -> float:
    """``gamma = arccos(D/2)`` in ``(0, pi)``; raises ``DomainError`` outside bands."""
    d = discriminant(U, lam, cfg, period)
    if abs(d) >= 2.0 - edge_tol:
        raise DomainError(f"lam={lam} is not strictly inside a band (D={d})")
    return math.acos(d / 2.0)


@dataclass
class BlochData:
    """Bloch solution ``theta`` with ``theta(x+T) = exp(i gamma) theta(x)``.

    Attributes
    ----------
    lam, gamma, period : float
    w : complex
        ``theta * conj(theta)' - theta' * conj(theta)`` (purely imaginary).
    init : ndarray
        ``(theta(0), theta'(0))`` after normalization.
    x, theta, dtheta : ndarray
        Samples on the requested grid.
    """

    lam: float
    gamma: float
    period: float
    w: complex
    init: np.ndarray
    x: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    program: Program = field(repr=False, default=None)
    cfg: IntegratorConfig = field(repr=False, default=None)
    free: bool = False

    @property
    def multiplier(self) -> complex:
        return complex(np.exp(1j * self.gamma))

    def evaluate(self, x):
        """``theta`` and ``theta'`` at arbitrary points via Floquet reduction."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        if self.free:
            k = math.sqrt(self.lam)
            th = self.init[0] * np.exp(1j * k * flat)
            return th.reshape(x.shape), (1j * k * th).reshape(x.shape)
        T = self.period
        n = np.floor(flat / T)
        r = flat - n * T
        r = np.where(r >= T, r - T, r)
        order = np.argsort(r, kind="stable")
        st = _propagate_theta(self.program, self.lam, self.init, r[order], self.cfg)
        th = np.empty(flat.size, complex)
        dth = np.empty(flat.size, complex)
        th[order] = st[:, 0]
        dth[order] = st[:, 1]
        ph = np.exp(1j * self.gamma * n)
        return (th * ph).reshape(x.shape), (dth * ph).reshape(x.shape)

    def floquet_residual(self, x=None) -> float:
        """``max |theta(x+T) - exp(i gamma) theta(x)|`` by direct propagation."""
        x = self.x if x is None else np.asarray(x, dtype=float)
        xs = np.concatenate([x, x + self.period])
        st = _propagate_theta(self.program, self.lam, self.init, np.sort(np.unique(xs)), self.cfg)
        grid = np.sort(np.unique(xs))
        idx = {v: i for i, v in enumerate(grid)}
        a = st[[idx[v] for v in x], 0]
        b = st[[idx[v] for v in x + self.period], 0]
        return float(np.max(np.abs(b - self.multiplier * a)))

    def wronskian_along(self, x) -> np.ndarray:
        th, dth = self.evaluate(x)
        return th * np.conj(dth) - dth * np.conj(th)

    def to_files(self, csv_path, json_path):
        with open(json_path, "w") as fh:
            json.dump({"lam": self.lam, "gamma": self.gamma, "period": self.period,
                       "w_re": self.w.real, "w_im": self.w.imag}, fh, sort_keys=True)
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "re_u", "im_u", "re_du", "im_du"])
            for row in zip(self.x, self.theta.real, self.theta.imag, self.dtheta.real, self.dtheta.imag):
                wr.writerow([repr(float(v)) for v in row])


def _propagate_theta(prog, lam, init, xs, cfg, with_norm=False):
    xs = np.asarray(xs, dtype=float)
    y0 = np.array([init[0], init[1], 0, 0, 0], dtype=complex)
    st, status, ns, nr, xr = _backend.propagate(
        1, prog, _ONE, float(lam), 0.0, xs, y0, kappa=0.0, rtol=cfg.rtol, atol=cfg.atol,
        max_step=cfg.max_step, max_steps=cfg.max_steps)
    _check(status, xr, "Bloch propagation")
    return st


def free_basis(lam: float, x_grid=None) -> BlochData:
    """``theta = exp(i sqrt(lam) x)`` (unnormalized), ``w = -2i sqrt(lam)``."""
    if not lam > 0:
        raise DomainError("free basis needs lam > 0")
    k = math.sqrt(lam)
    x = np.asarray([] if x_grid is None else x_grid, dtype=float)
    th = np.exp(1j * k * x)
    return BlochData(float(lam), float("nan"), float("inf"), complex(-2j * k),
                     np.array([1.0, 1j * k]), x, th, 1j * k * th, free=True)


def bloch_function(U, lam: float, x_grid=None, cfg: IntegratorConfig | None = None,
                   period=None, edge_tol: float = 1e-9) -> BlochData:
    """Normalized Bloch solution at an energy strictly inside a band.

    ``theta`` starts from the eigenvector of the monodromy matrix for the
    multiplier ``exp(i gamma)`` with ``gamma in (0, pi)``, is scaled to unit
    ``L2(0, T)`` norm and rotated so that ``theta(0)`` is real and positive
    (when ``theta(0) != 0``).

    Raises
    ------
    BandEdgeError
        ``|D| = 2`` within ``edge_tol``, where the monodromy is defective.
    DomainError
        ``lam`` lies in a gap.
    """
    T = resolve_period(U, period)
    cfg = cfg or _DEFAULT_CFG
    prog = as_program(U)
    M = monodromy(prog, lam, cfg, T).m
    d = M[0, 0] + M[1, 1]
    if abs(abs(d) - 2.0) <= edge_tol:
        raise BandEdgeError(f"lam={lam} at a band edge (D={d})")
    if abs(d) > 2.0:
        raise DomainError(f"lam={lam} lies in a gap (D={d})")
    gamma = math.acos(d / 2.0)
    rho = complex(d / 2.0, math.sqrt(1.0 - d * d / 4.0))
    if abs(M[0, 1]) >= abs(M[1, 0]):
        v = np.array([M[0, 1], rho - M[0, 0]], dtype=complex)
    else:
        v = np.array([rho - M[1, 1], M[1, 0]], dtype=complex)
    v /= np.linalg.norm(v)
    # unit L2(0,T) norm: with V = 1 the third state component integrates |theta|^2
    st = _propagate_theta(prog, lam, v, [T], cfg)
    v = v / math.sqrt(st[0, 2].real)
    if abs(v[0]) > 1e-12:
        v = v * (abs(v[0]) / v[0])
    w = complex(v[0] * np.conj(v[1]) - v[1] * np.conj(v[0]))
    x = np.asarray([] if x_grid is None else x_grid, dtype=float)
    bd = BlochData(float(lam), gamma, T, w, v, x, np.empty(0, complex), np.empty(0, complex),
                   prog, cfg)
    if x.size:
        if np.all(np.diff(x) > 0) and x[0] >= 0:
            st = _propagate_theta(prog, lam, v, x, cfg)
            bd.theta, bd.dtheta = st[:, 0].copy(), st[:, 1].copy()
        else:
            bd.theta, bd.dtheta = bd.evaluate(x)
    return bd


def band_table_csv(bands, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["n", "a_n", "b_n", "parity"])
        for b in bands:
            wr.writerow([b.index, repr(b.a), repr(b.b), b.parity])


@dataclass
class SigmaSeries:
    """Fourier coefficients ``sigma_hat[j]`` for ``j = -J..J``."""

    j: np.ndarray
    coeffs: np.ndarray
    period: float
    l2_mean: float  # ||sigma||^2_{L2(0,T)} / T from the samples

    def reconstruct(self, x):
        x = np.asarray(x, dtype=float)
        ph = np.exp(2j * np.pi * np.outer(x, self.j) / self.period)
        return ph @ self.coeffs

    @property
    def l1(self):
        return float(np.sum(np.abs(self.coeffs)))

    def __getitem__(self, j):
        return self.coeffs[int(j) + (len(self.j) - 1) // 2]


def _sigma_samples(bd: BlochData, n: int):
    T = bd.period
    x = np.arange(n) * (T / n)
    th, dth = bd.evaluate(x)
    ph = np.exp(-1j * bd.gamma * x / T)
    return x, (ph * th) ** 2, 2 * ph * ph * th * (dth - 1j * bd.gamma / T * th)


def sigma_fourier(bd: BlochData, J: int, n_samples: int | None = None) -> SigmaSeries:
    """Coefficients of the ``T``-periodic ``sigma = (exp(-i gamma x/T) theta)**2``."""
    if J < 1:
        raise DomainError("J must be >= 1")
    if bd.free:
        raise DomainError("sigma needs a periodic Bloch function")
    n = n_samples or max(8 * J, 512)
    _, s, _ = _sigma_samples(bd, n)
    c = np.fft.fft(s) / n
    j = np.arange(-J, J + 1)
    return SigmaSeries(j, c[j % n], bd.period, float(np.mean(np.abs(s) ** 2)))


@dataclass
class InteriorConstants:
    omega: float
    eta: float
    sigma: float
    C: float
    lams: np.ndarray


def band_interior_constants(U, band: Band, margin: float, cfg=None, period=None,
                            n_energies: int = 24, n_x: int = 256) -> InteriorConstants:
    """Grid estimates of ``inf |w|``, ``inf |gamma'|``, ``sup |d sigma/dx|``, ``sup ||sigma^2||``.

    Taken over ``[a + margin, b - margin]``; ``gamma'`` by centered
    differences on the energy grid.
    """
    if not 0 < margin < band.width / 2:
        raise DomainError("margin must lie in (0, (b - a)/2)")
    lams = np.linspace(band.a + margin, band.b - margin, n_energies)
    ws, gs, ss, cs = [], [], [], []
    for lam in lams:
        bd = bloch_function(U, lam, None, cfg, period)
        ws.append(abs(bd.w))
        gs.append(bd.gamma)
        x, s, ds = _sigma_samples(bd, n_x)
        ss.append(float(np.max(np.abs(ds))))
        cs.append(math.sqrt(float(np.mean(np.abs(s) ** 4)) * bd.period))
    gp = np.gradient(np.array(gs), lams)
    return InteriorConstants(float(min(ws)), float(np.min(np.abs(gp))), float(max(ss)),
                             float(max(cs)), lams)
