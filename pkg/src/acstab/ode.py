"""Integration of ``-u'' + (U+V) u = lam u``: trajectories, transfer matrices, growth scans."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _backend
from .errors import ConfigError, NumericalError, PreconditionError, StiffnessError
from .potentials import PotentialSpec, Program, compile_program, zero

_ZERO = compile_program(zero())


class State2(NamedTuple):
    """Value and derivative of a solution at one point."""

    u: complex
    du: complex


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and output sampling for the adaptive integrator.

    ``sampler`` is either an explicit array of output points or ``None``, in
    which case ``spacing`` (or 101 points if that is ``None`` too) is used.
    """

    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = 1.0
    sampler: Sequence[float] | None = None
    spacing: float | None = None
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("rtol and atol must be positive")
        if not self.max_step > 0:
            raise ConfigError("max_step must be positive")

    def grid(self, x0, x1):
        if self.sampler is not None:
            g = np.asarray(self.sampler, dtype=float)
            return g[(g >= x0) & (g <= x1)]
        if self.spacing:
            n = int(np.ceil((x1 - x0) / self.spacing)) + 1
            return np.linspace(x0, x1, max(n, 2))
        return np.linspace(x0, x1, 101)

    def halved(self):
        """Same config with tolerances and step cap halved."""
        return IntegratorConfig(self.rtol / 2, self.atol / 2, self.max_step / 2, self.sampler,
                                self.spacing, self.max_steps)


@dataclass(frozen=True)
class EnergyGrid:
    """Strictly increasing energies with a label naming the set."""

    values: np.ndarray
    label: str = "S"
    window: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or np.any(np.diff(v) <= 0):
            raise ConfigError("energy grid must be strictly increasing")
        if self.window is not None and (np.any(v < self.window[0]) or np.any(v > self.window[1])):
            raise ConfigError("energy outside the declared window")

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)


@dataclass
class Trajectory:
    """Solution samples; ``u`` and ``du`` are complex arrays over ``x``."""

    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    lam: float
    nsteps: int = 0
    nrejected: int = 0

    def state(self, i) -> State2:
        return State2(complex(self.u[i]), complex(self.du[i]))

    @property
    def final(self) -> State2:
        return self.state(-1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "re_u", "im_u", "re_du", "im_du"])
            for row in zip(self.x, self.u.real, self.u.imag, self.du.real, self.du.imag):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, lam=float("nan")):
        a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(a[:, 0], a[:, 1] + 1j * a[:, 2], a[:, 3] + 1j * a[:, 4], lam)


def as_program(W) -> Program:
    if W is None:
        return _ZERO
    if isinstance(W, Program):
        return W
    if isinstance(W, PotentialSpec):
        return compile_program(W)
    raise ConfigError(f"cannot interpret {type(W).__name__} as a potential")


def _check(status, xr, what="integration"):
    if status == 1:
        raise StiffnessError(f"{what}: step size underflow at x={xr:g}", xr)
    if status == 2:
        raise NumericalError(f"{what}: step budget exhausted at x={xr:g}")
    if status == 3:
        raise NumericalError(f"{what}: non-finite state at x={xr:g}")


def integrate_ivp(W, lam: float, x0: float, x1: float, init, cfg: IntegratorConfig | None = None,
                  background=None) -> Trajectory:
    """Solve ``-u'' + (U + W) u = lam u`` from ``x0`` to ``x1``.

    Parameters
    ----------
    W : PotentialSpec or Program or None
        Potential (``None`` for zero).
    lam : float
        Energy.
    x0, x1 : float
        Interval, ``x0 < x1``.
    init : State2 or pair
        ``(u(x0), u'(x0))``, complex allowed.
    cfg : IntegratorConfig
    background : optional
        Second potential ``U`` added to ``W``.

    Returns
    -------
    Trajectory
        Samples on ``cfg.grid(x0, x1)`` (endpoints included).

    Raises
    ------
    StiffnessError
        Step-size underflow, with the last point reached.
    """
    cfg = cfg or IntegratorConfig()
    if not x0 < x1:
        raise PreconditionError("need x0 < x1")
    y0 = np.asarray(tuple(init), dtype=np.complex128)
    if y0.shape != (2,) or not np.all(np.isfinite(y0)):
        raise PreconditionError("init must be two finite numbers")
    xs = cfg.grid(x0, x1)
    xs = np.unique(np.concatenate(([x0], xs, [x1])))
    st, status, ns, nr, xr = _backend.propagate(
        0, as_program(background), as_program(W), float(lam), float(x0), xs, y0,
        rtol=cfg.rtol, atol=cfg.atol, max_step=cfg.max_step, max_steps=cfg.max_steps)
    _check(status, xr)
    return Trajectory(xs, st[:, 0].copy(), st[:, 1].copy(), float(lam), ns, nr)


@dataclass(frozen=True)
class TransferMatrix:
    """Real 2x2 propagator ``(u, u')(x0) -> (u, u')(x1)``."""

    m: np.ndarray
    interval: tuple
    lam: float

    @property
    def m11(self):
        return float(self.m[0, 0])

    @property
    def m12(self):
        return float(self.m[0, 1])

    @property
    def m21(self):
        return float(self.m[1, 0])

    @property
    def m22(self):
        return float(self.m[1, 1])

    @property
    def det(self):
        return float(np.linalg.det(self.m))

    @property
    def trace(self):
        return float(self.m[0, 0] + self.m[1, 1])

    def __matmul__(self, other: "TransferMatrix") -> "TransferMatrix":
        return TransferMatrix(self.m @ other.m, (other.interval[0], self.interval[1]), self.lam)


def transfer_matrix(W, lam: float, x0: float, x1: float, cfg: IntegratorConfig | None = None,
                    background=None) -> TransferMatrix:
    """Columns are the propagated states from ``(1, 0)`` and ``(0, 1)``.

    Both real basis solutions are integrated at once as the real and
    imaginary parts of a single complex solution with initial data ``(1, i)``.
    """
    cfg = cfg or IntegratorConfig()
    if x1 == x0:
        return TransferMatrix(np.eye(2), (x0, x1), float(lam))
    if x1 < x0:
        raise PreconditionError("need x0 <= x1")
    xs = np.array([x1], dtype=float)
    st, status, ns, nr, xr = _backend.propagate(
        0, as_program(background), as_program(W), float(lam), float(x0), xs,
        np.array([1.0, 1j]), rtol=cfg.rtol, atol=cfg.atol, max_step=cfg.max_step,
        max_steps=cfg.max_steps)
    _check(status, xr, "transfer matrix")
    u, du = st[0]
    m = np.array([[u.real, u.imag], [du.real, du.imag]])
    if not np.all(np.isfinite(m)):
        raise NumericalError("non-finite transfer matrix")
    return TransferMatrix(m, (float(x0), float(x1)), float(lam))


def wronskian(a, b) -> complex:
    """``a.u * b.du - a.du * b.u``; works elementwise on arrays too."""
    au, adu = a
    bu, bdu = b
    return au * bdu - adu * bu


@dataclass
class ScanResult:
    """Per-energy growth indicators from :func:`boundedness_scan`."""

    lam: np.ndarray
    g: np.ndarray
    suspicious: np.ndarray
    errors: dict = field(default_factory=dict)
    X: float = 0.0
    threshold: float = 0.0


def growth_indicator(W, lam, X, cfg=None, background=None, window=10.0):
    """``max`` over both real basis solutions of ``max_[0,X] |u| / max_[0,window] |u|``."""
    cfg = cfg or IntegratorConfig(rtol=1e-10, atol=1e-12, spacing=0.1)
    if cfg.sampler is None and cfg.spacing is None:
        cfg = IntegratorConfig(cfg.rtol, cfg.atol, cfg.max_step, None, 0.1, cfg.max_steps)
    tr = integrate_ivp(W, lam, 0.0, X, (1.0, 1j), cfg, background=background)
    near = tr.x <= window
    g = 0.0
    for part in (tr.u.real, tr.u.imag):
        a = np.abs(part)
        g = max(g, float(a.max() / a[near].max()))
    return g


def boundedness_scan(W, grid, X: float, cfg: IntegratorConfig | None = None,
                     background=None, workers: int | None = None) -> ScanResult:
    """Growth indicator ``g(lam)`` for each energy of ``grid``.

    Energies whose integration fails are recorded in ``errors`` (with
    ``g = nan``) and the scan carries on.  ``suspicious`` marks
    ``g > X**0.25``.  Integrations run on a thread pool; the compiled core
    releases the GIL.
    """
    if X < 100:
        raise PreconditionError("X must be at least 100")
    lams = np.asarray(grid.values if isinstance(grid, EnergyGrid) else grid, dtype=float)
    Wp, Up = as_program(W), as_program(background)

    def job(lam):
        try:
            return growth_indicator(Wp, lam, X, cfg, Up), None
        except NumericalError as exc:
            return float("nan"), str(exc)

    if workers == 1 or len(lams) <= 1:
        res = [job(l) for l in lams]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(job, lams))
    g = np.array([r[0] for r in res])
    errs = {float(l): r[1] for l, r in zip(lams, res) if r[1] is not None}
    thr = X ** 0.25
    return ScanResult(lams, g, np.nan_to_num(g, nan=np.inf) > thr, errs, X, thr)
