import csv
import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, strategies as st

from acstab.errors import (ConfigError, DomainError, IterationError, LevelError,
                           PreconditionError)
from acstab.opnorms import (IntervalSet, KernelSpec, StepFunction, _cell_matrix, _power_norm,
                            apply_T, check_symbol_class, cumulative_T, dyadic_cover_select,
                            dyadic_partition, estimate_l2_norm, free_phase_symbol, level_count,
                            lorentz_norm, maximal_bound_experiment, maximal_function,
                            random_step_function, rearrangement, verify_cover)
from acstab.potentials import power_oscillatory, zero

FOURIER = KernelSpec("fourier")


def step_functions(max_pieces=8):
    return st.lists(st.tuples(st.floats(0.01, 3.0), st.floats(-4.0, 4.0)),
                    min_size=1, max_size=max_pieces).map(
        lambda pv: StepFunction(np.concatenate(([0.0], np.cumsum([p for p, _ in pv]))),
                                np.array([v for _, v in pv])))


# --- transforms --------------------------------------------------------

def test_fourier_indicator_closed_form():
    f = StepFunction.indicator([(0.3, 1.1), (2.0, 2.5)])
    k = np.linspace(1.0, 2.0, 41)
    Ns = [0.5, 1.1, 2.2, 3.0]
    got = cumulative_T(FOURIER, f, k, Ns)

    def F(a, b):
        return (np.exp(-1j * k * a) - np.exp(-1j * k * b)) / (1j * k)

    exact = [F(0.3, 0.5), F(0.3, 1.1), F(0.3, 1.1) + F(2.0, 2.2), F(0.3, 1.1) + F(2.0, 2.5)]
    for j, e in enumerate(exact):
        np.testing.assert_allclose(got[:, j], e, atol=1e-14)


def test_zero_function_maps_to_zero():
    f = StepFunction(np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.0]))
    for ker in (FOURIER, KernelSpec("free_phase", V=power_oscillatory(1, 0.6, 1))):
        assert np.all(apply_T(ker, f, [1.0, 1.5], 2.0) == 0)


def test_free_phase_without_potential_is_fourier():
    rng = np.random.default_rng(3)
    f = random_step_function(rng, 6.0, 10)
    k = np.linspace(1.0, 2.0, 17)
    a = cumulative_T(FOURIER, f, k, [1.0, 3.3, 6.0])
    b = cumulative_T(KernelSpec("free_phase", V=zero()), f, k, [1.0, 3.3, 6.0])
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_free_phase_against_quadrature():
    from scipy.integrate import quad

    V = power_oscillatory(1.0, 0.6, 1.0)
    f = StepFunction.indicator([(0.0, 5.0)])
    k = 1.3
    Phi = lambda x: quad(lambda t: (1 + t) ** -0.6 * math.cos(t), 0, x, epsabs=1e-13)[0]
    re = quad(lambda x: math.cos(-k * x + 2 / k * Phi(x)), 0, 5, epsabs=1e-11, limit=200)[0]
    im = quad(lambda x: math.sin(-k * x + 2 / k * Phi(x)), 0, 5, epsabs=1e-11, limit=200)[0]
    errs = [abs(apply_T(KernelSpec("free_phase", V=V, step=h), f, [k], 5.0)[0]
                - complex(re, im)) for h in (0.25, 0.125, 0.0625)]
    assert errs[0] < 1e-2
    # linear phase per step: second order
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_maximal_function_dominates_and_refines():
    rng = np.random.default_rng(7)
    f = random_step_function(rng, 4.0, 8)
    k = np.linspace(1.0, 2.0, 21)
    coarse = maximal_function(FOURIER, f, k, np.linspace(0, 4, 5))
    fine = maximal_function(FOURIER, f, k, np.linspace(0, 4, 81))
    assert np.all(fine >= coarse - 1e-15)
    for N in (0.7, 2.5, 4.0):
        assert np.all(fine >= np.abs(apply_T(FOURIER, f, k, N)) - 1e-12)


def test_kernel_domain_and_config():
    f = StepFunction.indicator([(0.0, 1.0)])
    with pytest.raises(DomainError):
        apply_T(FOURIER, f, [0.5], 1.0)
    with pytest.raises(ConfigError):
        KernelSpec("wavelet")
    with pytest.raises(ConfigError):
        KernelSpec("free_phase", window=(-1.0, 1.0))
    with pytest.raises(ConfigError):
        KernelSpec("bloch_kernel")


# --- rearrangement and Lorentz norms ------------------------------------

def test_rearrangement_example():
    f = StepFunction(np.array([0.0, 1.0, 3.0, 4.0]), np.array([-1.0, 3.0, 1.0]))
    fs = rearrangement(f)
    np.testing.assert_array_equal(fs.breakpoints, [0.0, 2.0, 4.0])
    np.testing.assert_array_equal(fs.values, [3.0, 1.0])


@given(step_functions())
def test_rearrangement_equimeasurable(f):
    fs = rearrangement(f)
    s = np.linspace(0.0, 4.5, 37)
    np.testing.assert_allclose(fs.distribution(s), f.distribution(s), atol=1e-12)
    assert np.all(np.diff(fs.values) <= 0)


def test_lorentz_indicator():
    f = StepFunction.indicator([(1.0, 3.5)])
    for p, q in ((1.5, 3.0), (2.0, 2.0), (4 / 3, 4.0), (3.0, math.inf)):
        assert lorentz_norm(f, p, q).value == pytest.approx(2.5 ** (1 / p), rel=1e-14)


@given(step_functions(), st.floats(1.0, 4.0))
def test_lorentz_equals_lp_when_q_equals_p(f, p):
    assert lorentz_norm(f, p, p).value == pytest.approx(f.lp_norm(p), rel=1e-10, abs=1e-300)


@given(step_functions(), st.floats(1.0, 3.0), st.floats(1.0, 3.0), st.floats(0.0, 5.0))
def test_lorentz_decreases_in_q(f, p, q1, dq):
    a = lorentz_norm(f, p, q1).value
    b = lorentz_norm(f, p, q1 + dq).value
    c = lorentz_norm(f, p, math.inf).value
    assert b <= a * (1 + 1e-10) and c <= b * (1 + 1e-10)


@given(step_functions(), st.floats(0.1, 10.0), st.sampled_from([(1.5, 3.0), (4 / 3, 4.0)]))
def test_lorentz_dilation(f, c, pq):
    p, q = pq
    assert lorentz_norm(f.dilate(c), p, q).value == pytest.approx(
        c ** (1 / p) * lorentz_norm(f, p, q).value, rel=1e-10)


def test_lorentz_preconditions():
    f = StepFunction.indicator([(0.0, 1.0)])
    with pytest.raises(PreconditionError):
        lorentz_norm(f, 0.5, 2.0)
    with pytest.raises(PreconditionError):
        lorentz_norm(f, 2.0, 0.5)


@given(step_functions())
def test_step_function_json_roundtrip(f):
    g = StepFunction.from_json(f.to_json())
    np.testing.assert_array_equal(g.breakpoints, f.breakpoints)
    np.testing.assert_array_equal(g.values, f.values)


def test_step_function_validation():
    with pytest.raises(ConfigError):
        StepFunction(np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ConfigError):
        StepFunction(np.array([1.0, 0.0]), np.array([1.0]))


# --- dyadic partitions and covers ----------------------------------------

E_EX = IntervalSet(((0, 3), (4, 5)))


def test_level_count():
    assert level_count(E_EX) == 2
    assert level_count(IntervalSet(((0, Fr(5, 2)),))) == 2
    assert level_count(IntervalSet(((0, Fr(1, 4)),))) == -2
    with pytest.raises(DomainError):
        level_count(IntervalSet(()))


def test_dyadic_partition_example():
    part = dyadic_partition(E_EX, 0)
    assert [c.intervals for c in part.cells] == [((0, 1),), ((1, 2),), ((2, 3),), ((4, 5),)]
    part = dyadic_partition(E_EX, 1)
    assert [c.intervals for c in part.cells] == [((0, 2),), ((2, 3), (4, 5))]
    part = dyadic_partition(IntervalSet(((0, Fr(5, 2)),)), 0)
    assert len(part.cells) == 4 and part.n_nonempty == 3
    assert part.cells[2].measure == Fr(1, 2)
    with pytest.raises(LevelError):
        dyadic_partition(E_EX, 2)


def test_cover_example():
    cov = dyadic_cover_select(E_EX, Fr(9, 2))
    assert [(m, l) for m, l, _ in cov.cells] == [(1, 0), (0, 2), (-1, 6)]
    assert cov.cells[2][2].intervals == ((4, Fr(9, 2)),)
    rep = verify_cover(cov)
    assert rep["exact"] and rep["symmetric_difference"] == 0
    whole = dyadic_cover_select(E_EX, 10)
    assert len(whole.cells) == 1 and whole.cells[0][2] == E_EX
    assert dyadic_cover_select(E_EX, Fr(1, 2)).cells[0][:2] == (-1, 0)


def test_random_covers_exact():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 6))
        ends = np.sort(rng.choice(np.arange(1, 400), 2 * n, replace=False))
        E = IntervalSet(tuple((Fr(int(a), 16), Fr(int(b), 16)) for a, b in ends.reshape(-1, 2)))
        N = Fr(int(rng.integers(1, 420)), 16)
        cov = dyadic_cover_select(E, N)
        rep = verify_cover(cov)
        assert rep["exact"], (E, N)
        assert cov.residual == 0


def test_cell_counts_per_level():
    E = IntervalSet(((0, 7), (8, Fr(17, 2))))
    n = level_count(E)
    for m in range(-3, n):
        part = dyadic_partition(E, m)
        assert len(part.cells) == 2 ** (n - m)
        full = [c for c in part.cells if c.measure == Fr(2) ** m]
        assert len(full) == int(E.measure / Fr(2) ** m)
        assert sum((c.measure for c in part.cells), Fr(0)) == E.measure


# --- L2 norms --------------------------------------------------------------

def test_power_norm_matches_svd():
    M = _cell_matrix(FOURIER, 40.0, 0.5, np.linspace(1.0, 2.0, 60))
    val, _ = _power_norm(M)
    assert val == pytest.approx(np.linalg.svd(M, compute_uv=False)[0], rel=1e-9)
    with pytest.raises(IterationError):
        _power_norm(np.eye(5) + 1e-3 * np.diag(np.arange(5)), tol=0.0, max_iter=1)


def test_fourier_norm_bounded_and_refines():
    est = estimate_l2_norm(FOURIER, 100.0)
    assert 0 < est.value <= math.sqrt(2 * math.pi)
    assert est.refined >= est.value * (1 - 1e-9)
    assert est.delta < 0.02


def test_zero_kernel_norm():
    ker = KernelSpec("tabulated", table=(np.array([1.0, 2.0]), np.array([0.0, 100.0]),
                                         np.zeros((2, 2))))
    assert estimate_l2_norm(ker, 20.0).value == 0.0


def test_norm_preconditions():
    with pytest.raises(PreconditionError):
        estimate_l2_norm(FOURIER, 0.0)


# --- symbol classes ------------------------------------------------------

def test_symbol_constant_passes():
    rep = check_symbol_class(lambda k, x: np.ones_like(x, dtype=complex), 0.5, 0.0, n_x=2000)
    assert rep.passed
    assert rep.sup["x"] == 0.0


def test_symbol_oscillating_fails_decay():
    rep = check_symbol_class(lambda k, x: np.exp(1j * k * x), 0.5, 0.0, n_x=2000)
    assert not rep.passed
    assert rep.exponents["x"] == pytest.approx(0.0, abs=0.05)


def test_free_phase_symbol_class():
    a = free_phase_symbol(power_oscillatory(1.0, 0.55, 1.0), x_max=1e4)
    rep = check_symbol_class(a, 0.55, 0.0)
    assert rep.passed
    assert rep.exponents["x"] == pytest.approx(-0.55, abs=0.05)


# --- maximal experiment ------------------------------------------------------

def test_maximal_experiment_small(tmp_path):
    rep = maximal_bound_experiment(FOURIER, 1.5, 3.0, ensemble=3, supports=(1.0, 2.0, 4.0))
    assert len(rep.rows) == 9
    assert rep.passed and rep.max_over_baseline <= 3.0
    path = tmp_path / "m.csv"
    rep.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["support_n", "ensemble_idx", "ratio"] and len(rows) == 10
    again = maximal_bound_experiment(FOURIER, 1.5, 3.0, ensemble=3, supports=(1.0, 2.0, 4.0))
    assert again.rows == rep.rows


def test_maximal_experiment_preconditions():
    with pytest.raises(PreconditionError):
        maximal_bound_experiment(FOURIER, 2.0, 2.0, ensemble=1)
    with pytest.raises(PreconditionError):
        maximal_bound_experiment(FOURIER, 1.5, 4.0, ensemble=1)


def test_cover_non_dyadic_measure_reports_residual():
    E = IntervalSet(((0, 1),))
    cov = dyadic_cover_select(E, Fr(1, 3))
    assert 0 < cov.residual < Fr(1, 2 ** 59)
    assert not verify_cover(cov)["exact"]
    deep = dyadic_cover_select(IntervalSet(((0, 3),)), Fr(1, 2 ** 80))
    assert verify_cover(deep)["exact"] and deep.cells[0][0] == -80
