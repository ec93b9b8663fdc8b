import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmeta.exceptions import ConfigError, NumericalError
from qmeta.model import CavityParams, SystemConfig, bright_mode_frequencies, build_hamiltonian
from qmeta.response import (ProbeGrid, ComplexSpectrum, photon_green_full,
                            photon_green_selfenergy, transmission, transmission_spectrum)
from qmeta.experiments import spectrum_peaks

from conftest import NU_C, random_system


def test_bare_cavity_pole():
    cfg = SystemConfig(CavityParams(NU_C, 30.0))
    assert photon_green_full(cfg, NU_C) == pytest.approx(-1j / 30.0, rel=1e-14)
    assert photon_green_selfenergy(cfg, NU_C) == pytest.approx(-1j / 30.0, rel=1e-14)


def test_two_by_two_inversion():
    cfg = SystemConfig.uniform(CavityParams(NU_C, 30.0), 1, gamma=1.0, g=42.0)
    # [[i30, -42], [-42, i1]]⁻¹ element (0,0) = i1 / (i30·i1 − 42²)
    expected = 1j / (1j * 30 * 1j - 42.0 ** 2)
    assert photon_green_full(cfg, NU_C) == pytest.approx(expected, rel=1e-13)
    # κ adds to the qubit term: |G| = 1/(30 + 1764); the self-energy dominates
    assert abs(expected) == pytest.approx(1 / 1794.0, rel=1e-12)
    assert abs(expected) == pytest.approx(1 / 1764.0, rel=0.02)


def test_selfenergy_direct_substitution():
    cfg = SystemConfig.uniform(CavityParams(NU_C, 30.0), 17, gamma=1.0, g=42.0)
    expected = -1j / (30 + 17 * 1764 / 1.0)
    assert photon_green_selfenergy(cfg, NU_C) == pytest.approx(expected, rel=1e-13)


def test_random_25_qubit_cross_oracle(rng):
    cfg = random_system(rng, 25)
    for w in np.linspace(NU_C - 300, NU_C + 300, 7):
        a, b = photon_green_full(cfg, w), photon_green_selfenergy(cfg, w)
        assert abs(a - b) <= 1e-10 * abs(a)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 50))
def test_oracle_equivalence_property(seed, n):
    r = np.random.default_rng(seed)
    cfg = random_system(r, n, signed=True)
    w = NU_C + r.uniform(-400, 400)
    a, b = photon_green_full(cfg, w), photon_green_selfenergy(cfg, w)
    assert abs(a - b) <= 1e-10 * abs(a)


def test_singular_resolvent_rejected():
    cfg = SystemConfig.uniform(CavityParams(NU_C, 0.0), 1, gamma=0.0)
    lo, _ = bright_mode_frequencies(cfg)
    with pytest.raises(NumericalError, match="ill-conditioned"):
        photon_green_full(cfg, lo)
    with pytest.raises(NumericalError):
        photon_green_selfenergy(cfg, NU_C - 42.0)


def test_transmission_scaling():
    cfg = SystemConfig(CavityParams(NU_C, 30.0, 0.0, 0.0))
    assert transmission(cfg, NU_C) == 0
    cfg = SystemConfig(CavityParams(NU_C, 30.0, 30.0, 30.0))
    assert transmission(cfg, NU_C) == pytest.approx(-1j, rel=1e-14)
    assert transmission(cfg, NU_C, method="full") == pytest.approx(-1j, rel=1e-14)
    with pytest.raises(ConfigError):
        transmission(cfg, NU_C, method="guess")


def test_realization_transmission_regression():
    from qmeta.disorder import DisorderSpec, draw_realization
    real = draw_realization(DisorderSpec(NU_C, 120.0, master_seed=7), 17, 0)
    cfg = SystemConfig.from_arrays(CavityParams(NU_C, 30.0, 30.0, 30.0), real.epsilons, 1.0, 42.0)
    a = transmission(cfg, NU_C)
    b = 30.0 * photon_green_full(cfg, NU_C)
    assert abs(a - b) <= 1e-10 * abs(b)
    again = draw_realization(DisorderSpec(NU_C, 120.0, master_seed=7), 17, 0)
    assert transmission(cfg.with_epsilons(again.epsilons), NU_C) == a


def test_probe_grid_validation():
    with pytest.raises(ConfigError):
        ProbeGrid([])
    with pytest.raises(ConfigError):
        ProbeGrid([1.0, 1.0, 2.0])
    with pytest.raises(ConfigError):
        ProbeGrid([1.0, math.nan])
    g = ProbeGrid.centered(100.0, 10.0, 5)
    np.testing.assert_array_equal(g.frequencies, [90, 95, 100, 105, 110])
    assert g.step == 5.0 and len(g) == 5


def test_spectrum_contract(cavity):
    grid = ProbeGrid.centered(NU_C, 200.0, 401)
    spec = transmission_spectrum(SystemConfig(cavity), grid, realization_id=3)
    assert isinstance(spec, ComplexSpectrum) and spec.realization_id == 3
    with pytest.raises(ConfigError):
        ComplexSpectrum(grid, np.zeros(3))


def test_bare_cavity_lorentzian(cavity):
    grid = ProbeGrid.centered(NU_C, 200.0, 4001)
    mag = transmission_spectrum(SystemConfig(cavity), grid).magnitude
    f = grid.frequencies
    np.testing.assert_allclose(mag, 30.0 / np.hypot(f - NU_C, 30.0), rtol=1e-13)
    half = f[mag >= mag.max() / math.sqrt(2)]
    assert 0.5 * (half[-1] - half[0]) == pytest.approx(30.0, abs=grid.step)


def test_uniform_n4_peaks_at_bright_modes(cavity):
    cfg = SystemConfig.uniform(cavity, 4)
    grid = ProbeGrid.centered(NU_C, 300.0, 6001)
    mag = transmission_spectrum(cfg, grid).magnitude
    f = grid.frequencies
    lo, hi = bright_mode_frequencies(cfg)
    left, right = f[f < NU_C], f[f > NU_C]
    # peaks of the Lorentzian pair are pulled inwards by their overlap; the
    # pull is far below the half-width (κ+Γ)/2
    assert abs(left[np.argmax(mag[f < NU_C])] - lo) < 0.5
    assert abs(right[np.argmax(mag[f > NU_C])] - hi) < 0.5


def test_pole_structure_small_damping():
    r = np.random.default_rng(5)
    eta = 0.01
    eps = NU_C + r.uniform(-60, 60, 8)
    cfg = SystemConfig.from_arrays(CavityParams(NU_C, eta, eta, eta), eps, eta, 42.0)
    w, v = np.linalg.eigh(build_hamiltonian(cfg).hamiltonian())
    visible = w[np.abs(v[0]) > 1e-3]
    grid = ProbeGrid.linspace(NU_C - 200, NU_C + 200, 400001)
    peaks, _ = spectrum_peaks(cfg, grid)
    assert peaks.size >= 1
    for p in peaks:
        assert np.min(np.abs(visible - p)) <= 3 * eta


def test_symmetric_disorder_zero_real_part():
    offs = np.array([3.0, 11.0, 27.5, 40.0])
    eps = np.concatenate((NU_C + offs, NU_C - offs))
    cfg = SystemConfig.from_arrays(CavityParams(NU_C, 30.0, 30.0, 30.0), eps, 1.0, 42.0)
    assert abs(transmission(cfg, NU_C).real) < 1e-10


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-500, 500))
def test_causality_sign(seed, dw):
    cfg = random_system(np.random.default_rng(seed), 12, signed=True)
    assert photon_green_selfenergy(cfg, NU_C + dw).imag < 0
