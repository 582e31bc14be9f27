"""Two-stage asymptotic integration of the perturbed equation.

With ``u = a theta + b conj(theta)`` and ``w = W[theta, conj(theta)]`` the
coefficients satisfy ``a' = D a + L b`` with

    D = -V |theta|^2 / w,     L = -V conj(theta)^2 / w,

``D`` purely imaginary.  Removing ``D`` leaves the off-diagonal
``L1 = L exp((2/w) int_0^x V |theta|^2)`` and one Harris-Lutz step with
``q1 = -int_x^inf L1`` gives the stage-2 phase ``int Im(conj(q1) L1)``.

All running integrals (``A = int V|theta|^2``, ``J = int V conj(theta)^2``,
``K = int V conj(theta)^2 exp(2A/w)``) are carried as extra components of
one adaptive integration, so no separate quadrature error enters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid

from . import _backend
from .bloch import BlochData, _ONE
from .errors import AlignmentError, BandEdgeError, DegenerateFitError, PreconditionError
from .ode import IntegratorConfig, _check, as_program
from .potentials import compile_program, eval_program, zero

_ZERO = compile_program(zero())
DEFAULT_SPACING = 0.1
DEFAULT_XMAX = 2.0e4
DEFAULT_WINDOW = (1.0e2, 1.0e4)
_CFG = IntegratorConfig(rtol=1e-11, atol=1e-13, max_step=DEFAULT_SPACING)


@dataclass
class CoefficientFunctions:
    """Samples of ``D``, ``L`` and the running integrals on ``x``."""

    x: np.ndarray
    D: np.ndarray
    L: np.ndarray
    lam: float
    w: complex
    theta: np.ndarray
    dtheta: np.ndarray
    V: np.ndarray
    A: np.ndarray
    J: np.ndarray
    K: np.ndarray


def _csimpson(y, x):
    """Cumulative Simpson integral from ``x[0]``; complex-safe."""
    y = np.asarray(y)
    if np.iscomplexobj(y):
        return (cumulative_simpson(y.real, x=x, initial=0.0)
                + 1j * cumulative_simpson(y.imag, x=x, initial=0.0))
    return cumulative_simpson(y, x=x, initial=0.0)


def _uniform_grid(x_max, spacing):
    n = int(round(x_max / spacing))
    return np.linspace(0.0, n * spacing, n + 1)


def compute_DL(V, bd: BlochData, x_grid=None, X_max: float = DEFAULT_XMAX,
               spacing: float = DEFAULT_SPACING, cfg: IntegratorConfig | None = None,
               w_min: float = 1e-12) -> CoefficientFunctions:
    """Sample the z-system coefficients along ``x_grid``.

    Parameters
    ----------
    V : PotentialSpec or Program
        Perturbation.
    bd : BlochData
        Basis for the unperturbed equation (``bloch.free_basis`` or
        ``bloch.bloch_function``).
    x_grid : array, optional
        Increasing points in ``[0, X]``; defaults to a uniform grid of
        ``spacing`` on ``[0, X_max]``.

    Raises
    ------
    BandEdgeError
        ``|w|`` below ``w_min``.
    """
    if abs(bd.w) < w_min:
        raise BandEdgeError("Wronskian of the basis vanishes")
    x = _uniform_grid(X_max, spacing) if x_grid is None else np.asarray(x_grid, dtype=float)
    if x.ndim != 1 or x[0] < 0 or np.any(np.diff(x) <= 0):
        raise PreconditionError("x_grid must be increasing in [0, inf)")
    cfg = cfg or _CFG
    Vp = as_program(V)
    Up = _ZERO if bd.free else bd.program
    kappa = 2.0 / bd.w
    y0 = np.array([bd.init[0], bd.init[1], 0, 0, 0], dtype=complex)
    st, status, ns, nr, xr = _backend.propagate(
        1, Up, Vp, float(bd.lam), 0.0, x, y0, kappa=kappa, rtol=cfg.rtol, atol=cfg.atol,
        max_step=min(cfg.max_step, float(np.min(np.diff(x))) if x.size > 1 else cfg.max_step),
        max_steps=cfg.max_steps)
    _check(status, xr, "coefficient integration")
    th, dth = st[:, 0], st[:, 1]
    A, J, K = st[:, 2].real, st[:, 3], st[:, 4]
    v = eval_program(Vp, x)
    D = -v * np.abs(th) ** 2 / bd.w
    L = -v * np.conj(th) ** 2 / bd.w
    return CoefficientFunctions(x, D, L, float(bd.lam), complex(bd.w), th, dth, v, A, J, K)


# --- tails -------------------------------------------------------------

def _bump_average(x, F, lo, hi):
    sel = (x > lo) & (x < hi)
    t = (x[sel] - lo) / (hi - lo)
    b = np.exp(-1.0 / (t * (1.0 - t)))
    return np.sum(b * F[sel]) / np.sum(b)


@dataclass
class TailLimit:
    """Estimated limit with the spread between two independent estimates."""

    value: complex
    estimates: tuple
    increments: tuple
    accelerated: bool
    spread: float


def _aitken(e0, e1, e2):
    d1, d2 = e0 - e1, e1 - e2
    floor = 1e-12 * max(abs(e0), 1e-300)
    if abs(d2) > floor and abs(d1) > floor:
        rho = d1 / d2
        if 0 < abs(rho) < 0.9:
            return e0 + d1 * rho / (1 - rho), True
    return e0, False


def tail_limit(x, F, X: float | None = None, levels: int = 4) -> TailLimit:
    """Limit of an oscillatory running integral ``F`` from samples up to ``X``.

    Smooth-bump averages over the dyadic windows ``[X/2, X]``, ``[X/4, X/2]``,
    ... suppress oscillating remainders.  A non-oscillating power-law
    remainder makes successive window estimates contract geometrically; in
    that case (ratio in ``(0, 0.9)``) the sequence is Aitken-extrapolated.
    ``spread`` compares the estimate from the finest three windows with the
    one from the next three (or the two finest raw estimates when no
    extrapolation applies).
    """
    X = x[-1] if X is None else X
    est = [_bump_average(x, F, X / 2 ** (i + 1), X / 2 ** i) for i in range(levels)]
    inc = [est[i] - est[i + 1] for i in range(levels - 1)]
    val, acc = _aitken(*est[:3]) if levels >= 3 else (est[0], False)
    if acc and levels >= 4:
        prev, acc2 = _aitken(*est[1:4])
        spread = abs(val - prev) if acc2 else abs(val - est[0])
    else:
        spread = abs(est[0] - est[1])
    return TailLimit(complex(val), tuple(est), tuple(inc), acc, float(spread))


@dataclass
class QTail:
    """Tail integral ``-int_x^inf L`` (stage ``"q"``) or of ``L1`` (``"q1"``)."""

    stage: str
    x: np.ndarray
    q: np.ndarray
    beta: float
    beta_width: float
    window: tuple
    converged: bool
    limit: TailLimit = None
    method: str = "direct"


def _running_max(x, y, half):
    """``max |y|`` over ``[x - half, x + half]`` on a uniform grid."""
    from scipy.ndimage import maximum_filter1d

    h = x[1] - x[0]
    size = 2 * int(round(half / h)) + 1
    return maximum_filter1d(np.abs(y), size=size, mode="nearest")


def fit_decay_exponent(q, window=DEFAULT_WINDOW, envelope_halfwidth: float | None = None,
                       n_points: int = 64):
    """Least-squares slope of ``log|q|`` against ``log x`` over ``window``.

    Parameters
    ----------
    q : QTail or (x, values)
    window : (x_lo, x_hi)
    envelope_halfwidth : float, optional
        If given (uniform grids only), ``|q|`` is first replaced by its
        running maximum over ``+-envelope_halfwidth``, which removes beating
        between oscillation frequencies.
    n_points : int
        Dense inputs are thinned to this many log-spaced samples.

    Returns
    -------
    (beta, width)
        Slope and twice its standard error.

    Raises
    ------
    DegenerateFitError
        Fewer than 8 samples in the window, or a zero sample.
    """
    x, y = (q.x, q.q) if isinstance(q, QTail) else (np.asarray(q[0], float), np.asarray(q[1]))
    lo, hi = window
    if envelope_halfwidth:
        y = _running_max(x, y, envelope_halfwidth)
    sel = np.nonzero((x >= lo) & (x <= hi))[0]
    if sel.size < 8:
        raise DegenerateFitError("fewer than 8 samples in the fit window")
    if sel.size > n_points:
        targets = np.geomspace(x[sel[0]], x[sel[-1]], n_points)
        sel = np.unique(np.clip(np.searchsorted(x, targets), sel[0], sel[-1]))
    ya = np.abs(y[sel])
    if np.any(ya == 0):
        raise DegenerateFitError("zero sample in the fit window")
    lx, ly = np.log(x[sel]), np.log(ya)
    coef, res, *_ = np.polyfit(lx, ly, 1, full=True)
    n = lx.size
    resid = ly - np.polyval(coef, lx)
    s2 = float(resid @ resid) / max(n - 2, 1)
    se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    return float(coef[0]), 2.0 * se


def _tail_from_running(x, F, dF, w, X_max, method, window, stage, conv_tol, p):
    """``q(x) = (F(inf) - F(x)) / w`` with diagnostics; ``dF`` samples ``F'``."""
    sel = x <= X_max
    xs, Fs = x[sel], F[sel]
    lim = tail_limit(xs, Fs, X_max)
    if method == "direct":
        q = (lim.value - Fs) / w
    elif method == "parts":
        # with G = int_0^x t^p dF:
        # int_x^inf dF = x^-p (G(inf) - G(x)) + p int_x^inf y^(-p-1) (G(y) - G(inf)) dy,
        # the remainder integral truncated at X_max
        G = _csimpson(xs ** p * dF[sel], xs)
        glim = tail_limit(xs, G, X_max)
        xp = np.maximum(xs, xs[1])
        g = xp ** (-p - 1) * (G - glim.value)
        rem = _csimpson(g[::-1], -xs[::-1])[::-1]
        q = (xp ** (-p) * (glim.value - G) + p * rem) / w
        q[0] = (lim.value - Fs[0]) / w
        lim = glim
    else:
        raise PreconditionError(f"unknown tail method {method!r}")
    try:
        beta, width = fit_decay_exponent((xs, q), window, envelope_halfwidth=2 * np.pi)
    except DegenerateFitError:
        beta, width = float("-inf"), 0.0
    env = _running_max(xs, q, 2 * np.pi)
    end = (xs >= window[1] / 2) & (xs <= window[1])
    typical = float(np.median(env[end])) if np.any(end) else float(np.abs(q[-1]))
    scale = abs(w) * (xs[-1] ** p if method == "parts" else 1.0)
    gap = lim.spread / scale
    growing = abs(lim.increments[0]) > 1.05 * abs(lim.increments[1]) \
        and abs(lim.increments[0]) / scale > conv_tol * typical
    converged = bool(gap <= conv_tol * typical or typical == 0.0) and not growing
    if typical == 0.0:
        beta, width = float("-inf"), 0.0
    return QTail(stage, xs, q, beta, width, tuple(window), converged, lim, method)


def q_tail(coeffs: CoefficientFunctions, X_max: float | None = None, method: str = "direct",
           window=DEFAULT_WINDOW, conv_tol: float = 0.05, p: float = 0.25) -> QTail:
    """``q(x) = -int_x^inf L``.

    The infinite tail is obtained from the running integral ``J`` by
    :func:`tail_limit`.  ``method="parts"`` instead works with the
    ``x**p``-weighted running integral and integrates by parts, an
    independent route to the same function.

    ``converged`` is set when the two finest dyadic window estimates of the
    limit agree to ``conv_tol`` times the typical ``|q|`` at the end of the
    fit window, and the increments are not growing.
    """
    X_max = coeffs.x[-1] if X_max is None else X_max
    dJ = coeffs.V * np.conj(coeffs.theta) ** 2
    return _tail_from_running(coeffs.x, coeffs.J, dJ, coeffs.w, X_max, method, window, "q",
                              conv_tol, p)


@dataclass
class Stage2Data:
    x: np.ndarray
    L1: np.ndarray
    q1: QTail
    phase: np.ndarray


def compute_L1_q1(V, bd: BlochData, x_grid=None, X_max: float = DEFAULT_XMAX,
                  coeffs: CoefficientFunctions | None = None, method: str = "direct",
                  window=DEFAULT_WINDOW, conv_tol: float = 0.05) -> Stage2Data:
    """``L1``, ``q1 = -int_x^inf L1`` and the phase ``int_0^x Im(conj(q1) L1)``."""
    c = coeffs or compute_DL(V, bd, x_grid, X_max)
    L1 = c.L * np.exp(2.0 * c.A / c.w)
    dK = c.V * np.conj(c.theta) ** 2 * np.exp(2.0 * c.A / c.w)
    q1 = _tail_from_running(c.x, c.K, dK, c.w, X_max, method, window, "q1", conv_tol, 0.25)
    n = q1.x.size
    integrand = np.imag(np.conj(q1.q) * L1[:n])
    if n >= 3:
        phase = _csimpson(integrand, q1.x)
    else:
        phase = np.zeros(n)
    return Stage2Data(q1.x, L1[:n], q1, phase)


@dataclass
class Prediction:
    """Predicted solution ``phi`` and its derivative on ``x``."""

    x: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    form: str


def predict(form: str, V, bd: BlochData, stage2: Stage2Data | None = None, x_grid=None,
            coeffs: CoefficientFunctions | None = None, X_max: float = DEFAULT_XMAX) -> Prediction:
    """Asymptotic solution.

    ``thm17``: ``phi = theta exp(-(1/w) int_0^x V|theta|^2)``.
    ``thm18``: additionally times ``exp(i int_0^x Im(conj(q1) L1))``.
    ``dphi`` is the exact derivative of ``phi``.
    """
    if form not in ("thm17", "thm18"):
        raise PreconditionError(f"unknown prediction form {form!r}")
    c = coeffs or compute_DL(V, bd, x_grid, X_max)
    x = c.x
    fac = np.exp(-c.A / c.w)
    phi = c.theta * fac
    dphi = (c.dtheta + c.theta * c.D) * fac
    if form == "thm18":
        if stage2 is None:
            stage2 = compute_L1_q1(V, bd, coeffs=c, X_max=X_max)
        n = stage2.x.size
        if n > x.size or not np.array_equal(stage2.x, x[:n]):
            raise AlignmentError("stage-2 data lives on a different grid")
        x = x[:n]
        rot = np.exp(1j * stage2.phase)
        dpdx = np.imag(np.conj(stage2.q1.q) * stage2.L1)
        phi = phi[:n] * rot
        dphi = dphi[:n] * rot + 1j * dpdx * phi
    return Prediction(x, phi, dphi, form)


def residual_integrability(V, bd: BlochData, stage: int, x_grid=None,
                           coeffs: CoefficientFunctions | None = None,
                           qtail: QTail | None = None, stage2: Stage2Data | None = None,
                           X_max: float = DEFAULT_XMAX, plateau_frac: float = 0.1) -> dict:
    """Cumulative size of the terms left after the transformation.

    Stage 1 uses ``int_0^x |q V|``; stage 2 uses ``int_0^x |q1|^2 |L1|``.
    ``plateau`` is reported when the last decade contributes less than
    ``plateau_frac`` of the total.
    """
    if stage not in (1, 2):
        raise PreconditionError("stage must be 1 or 2")
    c = coeffs or compute_DL(V, bd, x_grid, X_max)
    if stage == 1:
        qt = qtail or q_tail(c, X_max)
        n = qt.x.size
        f = np.abs(qt.q * c.V[:n])
    else:
        s2 = stage2 or compute_L1_q1(V, bd, coeffs=c, X_max=X_max)
        n = s2.x.size
        f = np.abs(s2.q1.q) ** 2 * np.abs(s2.L1)
    x = c.x[:n]
    cum = cumulative_trapezoid(f, x=x, initial=0.0)
    total = float(cum[-1])
    X = x[-1]
    last = total - float(np.interp(X / 10, x, cum))
    frac = last / total if total > 0 else 0.0
    reach = float(x[np.searchsorted(cum, 0.99 * total)]) if total > 0 else 0.0
    return {"x": x, "cumulative": cum, "total": total, "last_decade_fraction": frac,
            "plateau": frac < plateau_frac, "x99": reach}


@dataclass
class PipelineRecord:
    lam: float
    beta_q: float
    beta_q_width: float
    converged_q: bool
    beta_q1: float
    beta_q1_width: float
    converged_q1: bool
    extras: dict = field(default_factory=dict)

    def as_dict(self):
        d = {k: getattr(self, k) for k in ("lam", "beta_q", "beta_q_width", "converged_q",
                                           "beta_q1", "beta_q1_width", "converged_q1")}
        d.update(self.extras)
        return d


def run_pipeline(V, bd: BlochData, X_max: float = DEFAULT_XMAX, window=DEFAULT_WINDOW,
                 method: str = "direct") -> tuple:
    """Stage 1 and stage 2 for one energy; returns ``(record, coeffs, qtail, stage2)``."""
    c = compute_DL(V, bd, None, X_max)
    qt = q_tail(c, X_max, method, window)
    s2 = compute_L1_q1(V, bd, coeffs=c, X_max=X_max, method=method, window=window)
    rec = PipelineRecord(bd.lam, qt.beta, qt.beta_width, qt.converged,
                         s2.q1.beta, s2.q1.beta_width, s2.q1.converged)
    return rec, c, qt, s2
