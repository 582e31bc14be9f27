import math

import numpy as np
import pytest

from acstab.bloch import (Band, band_interior_constants, band_table_csv, bloch_function,
                          discriminant, find_bands, free_basis, monodromy, quasimomentum,
                          sigma_fourier)
from acstab.errors import BandEdgeError, ConfigError, DomainError
from acstab.ode import IntegratorConfig
from acstab.potentials import constant, periodic, power_oscillatory

U2 = periodic([0.0, 2.0, 0.0], 2 * math.pi)
FREE_PI = periodic([0.0], math.pi)

# Dense RK4 discriminant scan at step 1e-4 (tests/oracles/band_scan.py), U = 2 cos x.
ORACLE_EDGES = [-1.070129700268, -1.064795724289, 0.579502042821, 0.686720259718,
                1.707268709395, 2.315361540571, 2.667756770227, 4.113008838956,
                4.162454677008, 6.332636923443, 6.335938690203, 9.057370535428,
                9.057470387374]
# Numerov with 4e5 steps (tests/oracles/numerov.py); uncertainty about 4e-7.
ORACLE_D0 = -52.08508129313275
ORACLE_D_BAND1_MID = -0.011057276608864339
BAND1_MID = -1.0674627


@pytest.fixture(scope="module")
def bands():
    return find_bands(U2, (-2.0, 10.0))


def test_free_monodromy_and_discriminant():
    m = monodromy(FREE_PI, 4.0)
    assert m.trace == pytest.approx(2.0, abs=1e-8)
    assert m.det == pytest.approx(1.0, abs=1e-8)
    lams = np.linspace(0.05, 10, 100)
    d = np.array([discriminant(FREE_PI, l) for l in lams])
    np.testing.assert_allclose(d, 2 * np.cos(np.sqrt(lams) * np.pi), atol=1e-8)


def test_constant_background_is_energy_shift():
    c = 0.7
    a = monodromy(periodic([c], math.pi), 3.0)
    b = monodromy(FREE_PI, 3.0 - c)
    np.testing.assert_allclose(a.m, b.m, atol=1e-9)


def test_monodromy_det_and_numerov_discriminant():
    assert monodromy(U2, 1.0).det == pytest.approx(1.0, abs=1e-8)
    assert discriminant(U2, 0.0) == pytest.approx(ORACLE_D0, rel=1e-6)


def test_period_required():
    with pytest.raises(ConfigError):
        monodromy(power_oscillatory(1, 0.5, 1), 1.0)


def test_free_single_band():
    bs = find_bands(FREE_PI, (-1.0, 10.0))
    assert len(bs) == 1
    assert bs[0].a == pytest.approx(0.0, abs=1e-8)
    assert bs[0].b == 10.0 and bs[0].clipped_hi


def test_bands_match_dense_scan(bands):
    assert len(bands) >= 3
    edges = []
    for b in bands:
        edges.append(b.a)
        if not b.clipped_hi:
            edges.append(b.b)
    np.testing.assert_allclose(edges, ORACLE_EDGES, atol=1e-4)
    for lo, hi in zip(bands[:-1], bands[1:]):
        assert hi.a - lo.b > 0
    assert [b.parity for b in bands] == ["odd", "even"] * 3 + ["odd"]


def test_band_edges_are_edges(bands):
    for b in bands[:3]:
        for e in (b.a, b.b):
            assert abs(abs(discriminant(U2, e)) - 2) < 1e-6


def test_edges_stable_under_tolerance_halving(bands):
    cfg = IntegratorConfig(rtol=0.5e-12, atol=0.5e-14, max_step=0.25)
    half = find_bands(U2, (-2.0, 10.0), tol=0.5e-10, cfg=cfg)
    for a, b in zip(bands, half):
        assert abs(a.a - b.a) < 1e-6 and abs(a.b - b.b) < 1e-6


def test_quasimomentum_free_and_monotone(bands):
    assert quasimomentum(FREE_PI, 0.25) == pytest.approx(0.5 * math.pi, abs=1e-8)
    for b in bands[:3]:
        g = np.array([quasimomentum(U2, l) for l in b.interior(50, 0.01)])
        d = np.diff(g)
        assert np.all(d > 0) if b.parity == "odd" else np.all(d < 0)
    with pytest.raises(DomainError):
        quasimomentum(U2, 0.0)


def test_quasimomentum_against_oracle():
    g = quasimomentum(U2, BAND1_MID)
    assert g == pytest.approx(math.acos(ORACLE_D_BAND1_MID / 2), abs=1e-6)


def test_free_bloch_function():
    bd = bloch_function(FREE_PI, 0.25, np.linspace(0, 10, 11))
    k = 0.5
    # L2(0, pi) normalized plane wave
    np.testing.assert_allclose(np.abs(bd.theta), 1 / math.sqrt(math.pi), rtol=1e-8)
    assert abs(bd.w.real) < 1e-8
    assert abs(bd.w) == pytest.approx(2 * k / math.pi, rel=1e-8)
    fb = free_basis(1.0)
    assert fb.w == -2j


@pytest.mark.parametrize("lam", [BAND1_MID, 2.0, 3.3])
def test_bloch_invariants(lam):
    bd = bloch_function(U2, lam, np.linspace(0, 4 * math.pi, 81))
    assert bd.floquet_residual() < 1e-6
    assert abs(bd.w.real) < 1e-8 * abs(bd.w)
    w = bd.wronskian_along(np.linspace(0, 30, 10))
    np.testing.assert_allclose(w, bd.w, rtol=1e-8, atol=1e-12)
    x = np.linspace(0, 2 * math.pi, 2001)
    th, _ = bd.evaluate(x)
    from scipy.integrate import simpson

    assert simpson(np.abs(th) ** 2, x=x) == pytest.approx(1.0, abs=1e-8)
    # multiplier phase matches arccos(D/2)
    assert bd.gamma == pytest.approx(quasimomentum(U2, lam), abs=1e-6)


def test_w_imaginary_random_interior(bands):
    rng = np.random.default_rng(5)
    for _ in range(20):
        b = bands[rng.integers(0, 5)]
        lam = rng.uniform(b.a + 0.05 * b.width, b.b - 0.05 * b.width)
        bd = bloch_function(U2, lam)
        assert abs(bd.w.real) < 1e-8 * abs(bd.w)


def test_edge_degeneracy(bands):
    with pytest.raises(BandEdgeError):
        bloch_function(U2, bands[0].a)


def test_sigma_fourier_properties(bands):
    bd = bloch_function(U2, np.mean([bands[0].a, bands[0].b]))
    s32, s64 = sigma_fourier(bd, 32), sigma_fourier(bd, 64)
    assert s64.l1 - s32.l1 < 1e-4
    assert np.sum(np.abs(s64.coeffs) ** 2) == pytest.approx(s64.l2_mean, rel=1e-6)
    x = np.linspace(0, 2 * math.pi, 17)
    th, _ = bd.evaluate(x)
    sig = (np.exp(-1j * bd.gamma * x / bd.period) * th) ** 2
    np.testing.assert_allclose(s64.reconstruct(x), sig, atol=1e-8)
    with pytest.raises(DomainError):
        sigma_fourier(bd, 0)


def test_sigma_free_is_constant():
    bd = bloch_function(FREE_PI, 0.3)
    s = sigma_fourier(bd, 8)
    others = np.delete(s.coeffs, 8)
    assert np.max(np.abs(others)) < 1e-8
    assert abs(s[0]) == pytest.approx(1 / math.pi, rel=1e-8)


def test_interior_constants(bands):
    b1 = bands[0]
    c10 = band_interior_constants(U2, b1, 0.1 * b1.width, n_energies=8)
    assert c10.omega > 0 and c10.eta > 0 and math.isfinite(c10.sigma) and c10.C > 0
    c05 = band_interior_constants(U2, b1, 0.05 * b1.width, n_energies=8)
    assert c05.omega <= c10.omega * (1 + 1e-9)
    with pytest.raises(DomainError):
        band_interior_constants(U2, b1, b1.width)


def test_free_interior_omega():
    # first free band for T = pi is (0, 1); inner half is [0.25, 0.75]
    band = Band(1, 0.0, 1.0, "odd")
    c = band_interior_constants(FREE_PI, band, 0.25, n_energies=6)
    # |w| of the L2(0, pi)-normalized plane wave is 2 sqrt(lam) / pi
    assert c.omega == pytest.approx(2 * math.sqrt(0.25) / math.pi, rel=1e-8)


def test_band_table_csv(tmp_path, bands):
    p = tmp_path / "b.csv"
    band_table_csv(bands, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "n,a_n,b_n,parity" and len(lines) == len(bands) + 1
