"""Potential descriptions, evaluation and the slow-decay block splitting.

A :class:`PotentialSpec` is a small declarative record.  Before any
integration it is flattened by :func:`compile_program` into flat arrays that
both the compiled and the pure-Python integration cores understand.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalError, PreconditionError, ResolutionError

KINDS = (
    "power_oscillatory",
    "wigner_von_neumann",
    "exponential",
    "periodic_table",
    "random_decaying",
    "tabulated",
    "sum",
)
DECAYING = {"power_oscillatory", "wigner_von_neumann", "exponential", "random_decaying"}

# term codes understood by the integration cores
K_POWER, K_WVN, K_EXP, K_FOURIER, K_RANDOM, K_TABLE_LINEAR, K_TABLE_STEP = range(7)
NPAR = 7


@dataclass(frozen=True)
class PotentialSpec:
    """Declarative description of a real potential on the line.

    Parameters
    ----------
    kind : str
        One of ``KINDS``.
    amplitude : float
        Overall factor ``C``.
    decay_exponent : float
        ``alpha``; power kinds decay like ``(1+|x|)**-alpha`` and the
        exponential kind like ``exp(-alpha |x|)``.
    frequency, phase : float
        Oscillation ``cos(frequency*x + phase)`` (``sin`` for the
        Wigner-von Neumann kind, where ``frequency = 2k``).
    period : float
        Period of ``periodic_table``.
    seed : int
        Seed of ``random_decaying``.
    coefficients : tuple
        ``periodic_table`` Fourier data ``(a0, a1, b1, a2, b2, ...)``.
    n_modes : int
        Number of oscillators in ``random_decaying``.
    xs, vs : tuple
        ``tabulated`` nodes and samples (zero outside the table).
    interpolation : str
        ``"linear"`` or ``"step"`` for ``tabulated``.
    terms : tuple of PotentialSpec
        Summands of ``sum``.
    reflected : bool
        Evaluate at ``-x`` instead of ``x``.
    support : str
        ``"full"``, ``"positive"`` (zero for ``x < 0``) or ``"negative"``
        (zero for ``x > 0``); applied after reflection.
    """

    kind: str
    amplitude: float = 1.0
    decay_exponent: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    period: float | None = None
    seed: int = 0
    coefficients: tuple = ()
    n_modes: int = 16
    xs: tuple = ()
    vs: tuple = ()
    interpolation: str = "linear"
    terms: tuple = ()
    reflected: bool = False
    support: str = "full"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown potential kind {self.kind!r}")
        if self.support not in _HALF:
            raise ConfigError(f"unknown support {self.support!r}")
        if self.decay_exponent < 0:
            raise ConfigError("decay_exponent must be >= 0")
        if self.kind == "periodic_table":
            if self.period is None or not self.period > 0:
                raise ConfigError("periodic_table needs period > 0")
            if len(self.coefficients) % 2 != 1:
                raise ConfigError("Fourier data must be (a0, a1, b1, ...)")
        if self.kind == "tabulated":
            if len(self.xs) != len(self.vs) or len(self.xs) < 1:
                raise ConfigError("tabulated needs matching non-empty xs, vs")
            if np.any(np.diff(self.xs) < 0):
                raise ConfigError("tabulated xs must be sorted")
            if self.interpolation not in ("linear", "step"):
                raise ConfigError(f"unknown interpolation {self.interpolation!r}")
        if self.kind == "sum":
            for t in self.terms:
                if not isinstance(t, PotentialSpec):
                    raise ConfigError("sum terms must be PotentialSpec")

    # --- derived metadata ---------------------------------------------

    @property
    def is_decaying(self) -> bool:
        if self.kind == "sum":
            return bool(self.terms) and all(t.is_decaying for t in self.terms)
        return self.kind in DECAYING and (self.decay_exponent > 0 or self.amplitude == 0)

    @property
    def is_zero(self) -> bool:
        if self.kind == "sum":
            return all(t.is_zero for t in self.terms)
        if self.amplitude == 0:
            return True
        if self.kind == "periodic_table":
            return not any(self.coefficients)
        if self.kind == "tabulated":
            return not any(self.vs)
        return False

    def periodic_period(self) -> float | None:
        """Period if the potential is periodic on the whole line, else None."""
        if self.kind == "periodic_table":
            return float(self.period)
        if self.is_zero:
            return None
        if self.kind == "power_oscillatory" and self.decay_exponent == 0 and self.support == "full":
            if self.frequency == 0:
                return None  # constant; any period works
            return 2 * math.pi / abs(self.frequency)
        if self.kind == "sum":
            periods = [t.periodic_period() for t in self.terms if not t.is_zero]
            consts = [t for t in self.terms if not t.is_zero and t.periodic_period() is None]
            if any(not _is_constant(t) for t in consts):
                return None
            periods = [p for p in periods if p is not None]
            if not periods:
                return None
            base = max(periods)
            for p in periods:
                r = base / p
                if abs(r - round(r)) > 1e-12:
                    return None
            return base
        return None

    def envelope(self, x):
        """Upper bound ``sum |C_i| (1+|x|)**-alpha_i`` (exponential uses ``exp``)."""
        x = np.abs(np.asarray(x, dtype=float))
        if self.kind == "sum":
            return sum((t.envelope(x) for t in self.terms), np.zeros_like(x))
        c = abs(self.amplitude)
        if self.kind in ("power_oscillatory", "wigner_von_neumann", "random_decaying"):
            return c * (1.0 + x) ** (-self.decay_exponent)
        if self.kind == "exponential":
            return c * np.exp(-self.decay_exponent * x)
        if self.kind == "periodic_table":
            co = np.abs(self.coefficients)
            return c * float(co.sum()) + 0 * x
        return c * float(np.max(np.abs(self.vs))) + 0 * x

    # --- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        default = PotentialSpec("sum")
        for name in ("amplitude", "decay_exponent", "frequency", "phase", "period",
                     "seed", "n_modes", "interpolation", "reflected", "support"):
            v = getattr(self, name)
            if v != getattr(default, name):
                d[name] = v
        if self.coefficients:
            d["coefficients"] = list(self.coefficients)
        if self.xs:
            d["xs"] = list(self.xs)
            d["vs"] = list(self.vs)
        if self.terms:
            d["terms"] = [t.to_dict() for t in self.terms]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError("potential must be an object with a 'kind' field")
        d = dict(d)
        kind = d.pop("kind")
        if kind == "zero":
            return zero()
        if kind == "wigner_von_neumann" and "k" in d:
            return wigner_von_neumann(d.pop("c", d.pop("amplitude", 1.0)), d.pop("k"), **d)
        if kind == "periodic_table" and "values" in d:
            return periodic_from_samples(d.pop("values"), d.pop("period"), **d)
        if kind == "tabulated" and "csv" in d:
            return load_tabulated_csv(d.pop("csv"), **d)
        allowed = set(cls.__dataclass_fields__) - {"kind"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown potential fields {sorted(unknown)}")
        for key in ("coefficients", "xs", "vs"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        if "terms" in d:
            d["terms"] = tuple(cls.from_dict(t) for t in d["terms"])
        return cls(kind=kind, **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "PotentialSpec":
        try:
            d = json.loads(s)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad potential JSON: {exc}") from exc
        return cls.from_dict(d)

    def __add__(self, other):
        return sum_of(self, other)

    def reflect(self) -> "PotentialSpec":
        """``x -> V(-x)``."""
        if self.kind == "sum":
            return replace(self, terms=tuple(t.reflect() for t in self.terms))
        flip = {"full": "full", "positive": "negative", "negative": "positive"}
        return replace(self, reflected=not self.reflected, support=flip[self.support])

    def restrict_positive(self) -> "PotentialSpec":
        """Zero the potential for negative argument."""
        if self.kind == "sum":
            return replace(self, terms=tuple(t.restrict_positive() for t in self.terms))
        if self.support == "negative":
            return replace(self, amplitude=0.0)
        return replace(self, support="positive")

    def scaled(self, factor: float) -> "PotentialSpec":
        if self.kind == "sum":
            return replace(self, terms=tuple(t.scaled(factor) for t in self.terms))
        return replace(self, amplitude=self.amplitude * factor)


_HALF = {"full": 0.0, "positive": 1.0, "negative": -1.0}


def _is_constant(s: PotentialSpec) -> bool:
    return (s.kind == "power_oscillatory" and s.decay_exponent == 0
            and s.frequency == 0 and s.support == "full")


# --- constructors ------------------------------------------------------

def zero() -> PotentialSpec:
    return PotentialSpec("sum")


def constant(c: float) -> PotentialSpec:
    return PotentialSpec("power_oscillatory", amplitude=float(c))


def power_oscillatory(C, alpha, omega, phase=0.0, **kw) -> PotentialSpec:
    """``C (1+x)**-alpha cos(omega x + phase)``."""
    return PotentialSpec("power_oscillatory", amplitude=float(C), decay_exponent=float(alpha),
                         frequency=float(omega), phase=float(phase), **kw)


def wigner_von_neumann(c, k, **kw) -> PotentialSpec:
    """``c sin(2 k x) / (1+x)``; resonance at ``lambda = k**2``."""
    return PotentialSpec("wigner_von_neumann", amplitude=float(c), decay_exponent=1.0,
                         frequency=2.0 * float(k), **kw)


def exponential(C, rate, omega=0.0, phase=0.0, **kw) -> PotentialSpec:
    """``C exp(-rate |x|) cos(omega x + phase)``."""
    return PotentialSpec("exponential", amplitude=float(C), decay_exponent=float(rate),
                         frequency=float(omega), phase=float(phase), **kw)


def periodic(coefficients, period, amplitude=1.0, **kw) -> PotentialSpec:
    """Real Fourier series ``a0 + sum a_j cos(2 pi j x/T) + b_j sin(2 pi j x/T)``."""
    return PotentialSpec("periodic_table", amplitude=float(amplitude), period=float(period),
                         coefficients=tuple(float(c) for c in coefficients), **kw)


def periodic_from_samples(values, period, **kw) -> PotentialSpec:
    """Trigonometric interpolant of equispaced samples over one period."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 1:
        raise ConfigError("need at least one sample")
    c = np.fft.rfft(v) / n
    coeffs = [c[0].real]
    for j in range(1, c.size):
        w = 1.0 if (n % 2 == 0 and j == n // 2) else 2.0
        coeffs += [w * c[j].real, -w * c[j].imag]
    return periodic(coeffs, period, **kw)


def random_decaying(C, alpha, seed, n_modes=16, omega_range=(0.5, 3.0), **kw) -> PotentialSpec:
    """Seeded random-phase oscillator sum times ``C (1+x)**-alpha``.

    Mode amplitudes are normalized so that ``sum |amp_j| = 1``; the envelope
    bound is then exactly ``|C| (1+x)**-alpha``.
    """
    return PotentialSpec("random_decaying", amplitude=float(C), decay_exponent=float(alpha),
                         seed=int(seed), n_modes=int(n_modes),
                         coefficients=(float(omega_range[0]), float(omega_range[1])), **kw)


def tabulated(xs, vs, interpolation="linear", **kw) -> PotentialSpec:
    return PotentialSpec("tabulated", xs=tuple(float(x) for x in xs),
                         vs=tuple(float(v) for v in vs), interpolation=interpolation, **kw)


def load_tabulated_csv(path, interpolation="linear", **kw) -> PotentialSpec:
    """Two-column ``x, V`` CSV; a non-numeric first row is treated as header."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if i == 0:
                    continue
                raise ConfigError(f"{path}: bad row {i + 1}: {row!r}")
    if not rows:
        raise ConfigError(f"{path}: no data")
    rows.sort()
    xs, vs = zip(*rows)
    return tabulated(xs, vs, interpolation=interpolation, **kw)


def sum_of(*specs: PotentialSpec) -> PotentialSpec:
    flat = []
    for s in specs:
        flat.extend(s.terms if s.kind == "sum" and s.amplitude == 1.0 else (s,))
    return PotentialSpec("sum", terms=tuple(flat))


def _random_modes(spec: PotentialSpec):
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.coefficients if spec.coefficients else (0.5, 3.0)
    amp = rng.uniform(0.0, 1.0, spec.n_modes)
    amp /= amp.sum()
    om = rng.uniform(lo, hi, spec.n_modes)
    ph = rng.uniform(0.0, 2 * np.pi, spec.n_modes)
    return amp, om, ph


# --- compiled form -----------------------------------------------------

@dataclass(frozen=True)
class Program:
    """Flat representation consumed by the integration cores.

    ``par`` rows are ``(C, alpha, omega, phase, sign, period, positive_only)``;
    ``off`` rows are ``(offset, count)`` into ``data``.
    """

    kinds: np.ndarray
    par: np.ndarray
    off: np.ndarray
    data: np.ndarray

    @property
    def n_terms(self):
        return int(self.kinds.shape[0])

    def __call__(self, x):
        return eval_program(self, x)


def _flatten(spec: PotentialSpec, out: list):
    if spec.kind == "sum":
        for t in spec.terms:
            _flatten(replace(t, amplitude=t.amplitude * spec.amplitude) if spec.amplitude != 1 else t, out)
        return
    if spec.is_zero:
        return
    out.append(spec)


def compile_program(spec: PotentialSpec) -> Program:
    leaves: list = []
    _flatten(spec, leaves)
    kinds, par, off, data = [], [], [], []
    for s in leaves:
        row = [s.amplitude, s.decay_exponent, s.frequency, s.phase,
               -1.0 if s.reflected else 1.0, s.period or 0.0,
               _HALF[s.support]]
        o = len(data)
        if s.kind == "power_oscillatory":
            k, m = K_POWER, 0
        elif s.kind == "wigner_von_neumann":
            k, m = K_WVN, 0
        elif s.kind == "exponential":
            k, m = K_EXP, 0
        elif s.kind == "periodic_table":
            k = K_FOURIER
            data.extend(s.coefficients)
            m = len(s.coefficients)
        elif s.kind == "random_decaying":
            k = K_RANDOM
            for a, w, p in zip(*_random_modes(s)):
                data.extend((a, w, p))
            m = 3 * s.n_modes
        else:
            k = K_TABLE_LINEAR if s.interpolation == "linear" else K_TABLE_STEP
            data.extend(s.xs)
            data.extend(s.vs)
            m = len(s.xs)
        kinds.append(k)
        par.append(row)
        off.append((o, m))
    return Program(
        kinds=np.ascontiguousarray(kinds, dtype=np.int32),
        par=np.ascontiguousarray(np.reshape(par, (-1, NPAR)), dtype=np.float64),
        off=np.ascontiguousarray(np.reshape(off, (-1, 2)), dtype=np.int64),
        data=np.ascontiguousarray(data, dtype=np.float64),
    )


def eval_program(prog: Program, x):
    """Vectorized numpy evaluation, independent of the integration cores."""
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    for t in range(prog.n_terms):
        C, alpha, omega, phase, sign, period, pos = prog.par[t]
        o, m = prog.off[t]
        y = sign * x
        ay = np.abs(y)
        k = prog.kinds[t]
        if k in (K_POWER, K_WVN, K_RANDOM):
            r = 1.0 if alpha == 0 else (1.0 + ay) ** (-alpha)
        if k == K_POWER:
            v = r * np.cos(omega * y + phase)
        elif k == K_WVN:
            v = r * np.sin(omega * y + phase)
        elif k == K_EXP:
            v = np.exp(-alpha * ay) * np.cos(omega * y + phase)
        elif k == K_FOURIER:
            d = prog.data[o:o + m]
            th = 2 * np.pi * y / period
            v = np.full_like(y, d[0])
            for j in range((m - 1) // 2):
                v = v + d[1 + 2 * j] * np.cos((j + 1) * th) + d[2 + 2 * j] * np.sin((j + 1) * th)
        elif k == K_RANDOM:
            d = prog.data[o:o + m].reshape(-1, 3)
            v = np.zeros_like(y)
            for a, w, p in d:
                v = v + a * np.cos(w * y + p)
            v = r * v
        else:
            xs = prog.data[o:o + m]
            vs = prog.data[o + m:o + 2 * m]
            inside = (y >= xs[0]) & (y <= xs[-1])
            if k == K_TABLE_LINEAR:
                v = np.interp(y, xs, vs)
            else:
                idx = np.clip(np.searchsorted(xs, y, side="right") - 1, 0, m - 1)
                v = vs[idx]
            v = np.where(inside, v, 0.0)
        v = C * v
        if pos:
            v = np.where(pos * x < 0, 0.0, v)
        total = total + v
    return total


def eval_potential(spec: PotentialSpec, x, x_range: tuple | None = None):
    """Evaluate ``V(x)``.

    Parameters
    ----------
    spec : PotentialSpec
    x : float or array
    x_range : (lo, hi), optional
        Declared working range; points outside raise ``PreconditionError``.
    """
    xa = np.asarray(x, dtype=float)
    if x_range is not None and (np.any(xa < x_range[0]) or np.any(xa > x_range[1])):
        raise PreconditionError("x outside the declared working range")
    out = eval_program(compile_program(spec), xa)
    return float(out) if out.ndim == 0 else out


# --- block splitting ---------------------------------------------------

def smooth_step(u):
    """C-infinity step: 0 for ``u <= 0``, 1 for ``u >= 1``."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        g0 = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        g1 = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
        return g0 / (g0 + g1)


def cutoff(t, delta):
    """Smooth cutoff: 0 on ``(-delta, delta)``, 1 outside ``(-2 delta, 2 delta)``."""
    return smooth_step((np.abs(t) - delta) / delta)


def block_points(x_max: float, a0: float = 1.0) -> np.ndarray:
    """``a_0 = a0``, ``a_n = a_{n-1} + sqrt(a_{n-1})`` until ``x_max`` is covered."""
    pts = [float(a0)]
    while pts[-1] < x_max:
        pts.append(pts[-1] + math.sqrt(pts[-1]))
    return np.array(pts)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _gl(f, a, b, panels):
    """Composite 20-point Gauss-Legendre over ``panels`` equal pieces of (a, b)."""
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    xs = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return float(np.dot(w, f(xs)))


def _gl_pieces(f, cuts, panels):
    return sum(_gl(f, cuts[i], cuts[i + 1], panels) for i in range(len(cuts) - 1))


@dataclass
class Decomposition:
    """``V = V1 + V2`` with ``V1`` a smooth block-wise plateau.

    Attributes
    ----------
    blocks : ndarray
        ``a_0 < a_1 < ...``.
    constants : ndarray
        Plateau heights ``C_n`` for block ``(a_n, a_{n+1})``.
    delta : float
        Cutoff width parameter.
    spec : PotentialSpec
        The decomposed potential.
    """

    blocks: np.ndarray
    constants: np.ndarray
    delta: float
    spec: PotentialSpec
    envelope: tuple = (1.0, 1.0)
    _prog: Program = field(default=None, repr=False)

    def __post_init__(self):
        if self._prog is None:
            self._prog = compile_program(self.spec)

    def bump(self, x, n):
        """Unit-height plateau of block ``n`` evaluated at ``x``."""
        a, b = self.blocks[n], self.blocks[n + 1]
        x = np.asarray(x, dtype=float)
        inside = (x > a) & (x < b)
        val = cutoff((x - a) / math.sqrt(a), self.delta) * cutoff((x - b) / math.sqrt(b), self.delta)
        return np.where(inside, val, 0.0)

    def V(self, x):
        return eval_program(self._prog, x)

    def V1(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.blocks, x, side="right") - 1
        ok = (idx >= 0) & (idx < len(self.constants))
        idc = np.clip(idx, 0, max(len(self.constants) - 1, 0))
        if len(self.constants) == 0:
            return np.zeros_like(x)
        a = self.blocks[idc]
        b = self.blocks[idc + 1]
        val = cutoff((x - a) / np.sqrt(a), self.delta) * cutoff((x - b) / np.sqrt(b), self.delta)
        inside = ok & (x > a) & (x < b)
        return np.where(inside, self.constants[idc] * val, 0.0)

    def V2(self, x):
        return self.V(x) - self.V1(x)

    def block_cuts(self, n):
        """Block ``n`` split where the cutoff changes regime."""
        a, b = self.blocks[n], self.blocks[n + 1]
        d = self.delta
        sa, sb = math.sqrt(a), math.sqrt(b)
        return [a, a + d * sa, a + 2 * d * sa, b - 2 * d * sb, b - d * sb, b]

    def block_residuals(self, panels=8):
        """``int_{a_n}^{a_{n+1}} (V - V1)`` for every block by Gauss-Legendre."""
        return np.array([
            _gl_pieces(self.V2, self.block_cuts(n), panels) for n in range(len(self.constants))
        ])

    def relative_residuals(self, panels=8):
        """Block residuals divided by ``int |V|`` over the same block."""
        scale = np.array([
            _gl_pieces(lambda x: np.abs(self.V(x)), self.block_cuts(n), panels)
            for n in range(len(self.constants))
        ])
        res = self.block_residuals(panels)
        return np.divide(np.abs(res), scale, out=np.zeros_like(res), where=scale > 0)


def _block_panels(spec: PotentialSpec, length: float) -> int:
    om = _max_frequency(spec)
    return max(2, int(math.ceil(length * max(om, 1.0) / 4.0)))


def _max_frequency(spec: PotentialSpec) -> float:
    if spec.kind == "sum":
        return max([_max_frequency(t) for t in spec.terms] + [0.0])
    if spec.kind == "periodic_table":
        return 2 * math.pi * ((len(spec.coefficients) - 1) // 2) / spec.period
    if spec.kind == "random_decaying":
        return spec.coefficients[1] if spec.coefficients else 3.0
    if spec.kind == "tabulated":
        xs = np.asarray(spec.xs)
        return math.pi / max(float(np.min(np.diff(xs))) if xs.size > 1 else 1.0, 1e-3)
    return abs(spec.frequency)


def decompose_slow_potential(spec: PotentialSpec, envelope: tuple, delta: float = 0.1,
                             x_max: float = 1e4, tol: float = 1e-12,
                             max_refine: int = 8) -> Decomposition:
    """Split ``V`` into a smooth plateau part ``V1`` and a remainder ``V2``.

    Blocks follow ``a_0 = 1``, ``a_n - a_{n-1} = sqrt(a_{n-1})`` and each
    plateau height is chosen so that ``V - V1`` integrates to zero over its
    block.

    Parameters
    ----------
    spec : PotentialSpec
    envelope : (C, alpha)
        Decay envelope of ``V``; ``alpha > 1/2`` is required.
    delta : float
        Cutoff width, in ``(0, 1/4)``.
    x_max : float
        Blocks are built until ``a_n >= x_max``.
    tol : float
        Absolute agreement required between two quadrature refinements.

    Raises
    ------
    PreconditionError
        ``alpha <= 1/2`` or ``delta`` outside ``(0, 1/4)``.
    NumericalError
        Block quadrature failed to settle; ``.index`` is the block.
    """
    C, alpha = envelope
    if not alpha > 0.5:
        raise PreconditionError("decay exponent must exceed 1/2")
    if not 0 < delta < 0.25:
        raise PreconditionError("delta must lie in (0, 1/4)")
    blocks = block_points(x_max)
    prog = compile_program(spec)
    dec = Decomposition(blocks=blocks, constants=np.zeros(len(blocks) - 1), delta=delta,
                        spec=spec, envelope=(C, alpha), _prog=prog)
    if spec.is_zero:
        return dec
    consts = np.empty(len(blocks) - 1)
    vf = lambda x: eval_program(prog, x)  # noqa: E731
    for n in range(len(blocks) - 1):
        cuts = dec.block_cuts(n)
        bf = lambda x, n=n: dec.bump(x, n)  # noqa: E731
        panels = _block_panels(spec, blocks[n + 1] - blocks[n])
        iv_prev = ib_prev = None
        for _ in range(max_refine):
            iv = _gl_pieces(vf, cuts, panels)
            ib = _gl_pieces(bf, cuts, panels)
            if iv_prev is not None and abs(iv - iv_prev) <= tol * max(1.0, abs(iv)) \
                    and abs(ib - ib_prev) <= tol * ib:
                break
            iv_prev, ib_prev = iv, ib
            panels *= 2
        else:
            raise NumericalError(f"block {n} quadrature did not converge", index=n)
        consts[n] = iv / ib
    dec.constants = consts
    return dec


def _envelope_fit(x, y, nbins=16):
    """Slope of log(max |y| per log-bin) against log(x at that max)."""
    x = np.asarray(x)
    y = np.abs(np.asarray(y))
    edges = np.geomspace(x[0], x[-1], nbins + 1)
    lx, ly = [], []
    for i in range(nbins):
        sel = (x >= edges[i]) & (x < edges[i + 1])
        if not np.any(sel):
            continue
        j = np.argmax(np.where(sel, y, -1.0))
        if y[j] > 0:
            lx.append(math.log(x[j]))
            ly.append(math.log(y[j]))
    if len(lx) < 3:
        return float("-inf")
    return float(np.polyfit(lx, ly, 1)[0])


def decomposition_grid(dec: Decomposition, x_lo: float, x_hi: float, per_transition: int = 16):
    """Grid fine enough to resolve the cutoff transitions everywhere."""
    pts = [x_lo]
    while pts[-1] < x_hi:
        pts.append(pts[-1] + dec.delta * math.sqrt(max(pts[-1], 1.0)) / per_transition)
    return np.array(pts)


def verify_decomposition(dec: Decomposition, m_max: int, x_grid, margin: float = 0.05,
                         fit_window: tuple | None = None) -> dict:
    """Fit derivative envelopes of ``V1`` and the tail sizes of ``V2``.

    Parameters
    ----------
    dec : Decomposition
    m_max : int
        Highest derivative order, 0, 1 or 2.
    x_grid : array
        Increasing sample points (may be non-uniform).
    margin : float
        Allowed excess of the fitted exponent over ``-(m+1)/2``.
    fit_window : (lo, hi), optional
        Restrict the envelope regression; defaults to the grid span.

    Returns
    -------
    dict
        ``exponents[m]``, ``bounds[m]``, ``violations``, ``tail`` (per-block
        ``sup |int_x^inf V2|``), ``tail_exponent`` and ``passed``.
    """
    if m_max not in (0, 1, 2):
        raise PreconditionError("m_max must be 0, 1 or 2")
    x = np.asarray(x_grid, dtype=float)
    if x.ndim != 1 or x.size < 8 or np.any(np.diff(x) <= 0):
        raise PreconditionError("x_grid must be increasing with at least 8 points")
    h = np.diff(x)
    need = dec.delta * np.sqrt(np.maximum(x[:-1], 1.0)) / 8.0
    coarse = bool(np.any(h > need))
    if m_max == 2 and coarse:
        raise ResolutionError("grid too coarse to difference the cutoff transitions twice")
    lo, hi = fit_window or (max(x[0], dec.blocks[0]), x[-1])
    sel = (x >= lo) & (x <= hi)
    vals = dec.V1(x)
    exps, bounds, viol = {}, {}, []
    for m in range(m_max + 1):
        if m > 0:
            vals = np.gradient(vals, x)
        bounds[m] = -(m + 1) / 2.0 + margin
        if dec.spec.is_zero or not np.any(vals[sel]):
            exps[m] = float("-inf")
        else:
            exps[m] = _envelope_fit(x[sel], vals[sel])
        if exps[m] > bounds[m]:
            viol.append(m)
    tails = block_tails(dec)
    a = dec.blocks[:-1]
    keep = (a >= lo) & (a <= hi) & (tails > 0)
    if np.count_nonzero(keep) >= 3:
        tail_exp = float(np.polyfit(np.log(a[keep]), np.log(tails[keep]), 1)[0])
    else:
        tail_exp = float("-inf")
    return {
        "exponents": exps,
        "bounds": bounds,
        "violations": viol,
        "resolution_warning": coarse,
        "tail": tails,
        "tail_sup": float(np.max(tails)) if tails.size else 0.0,
        "tail_exponent": tail_exp,
        "passed": not viol and not tail_exp >= 0,
    }


def block_tails(dec: Decomposition, samples_per_unit: float = 32.0) -> np.ndarray:
    """Per block, ``sup_x |int_x^inf V2|`` for ``x`` in the block.

    Block integrals of ``V2`` vanish by construction, so the tail from ``x``
    to infinity reduces to the integral from ``x`` to the block's right end.
    """
    from scipy.integrate import cumulative_simpson

    nb = len(dec.constants)
    out = np.zeros(nb)
    if dec.spec.is_zero:
        return out
    om = max(_max_frequency(dec.spec), 1.0)
    for n in range(nb):
        a, b = dec.blocks[n], dec.blocks[n + 1]
        m = max(65, int((b - a) * samples_per_unit * om) | 1)
        xs = np.linspace(a, b, m)
        c = cumulative_simpson(dec.V2(xs), x=xs, initial=0.0)
        out[n] = float(np.max(np.abs(c[-1] - c)))
    return out
