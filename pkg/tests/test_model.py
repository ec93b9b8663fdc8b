import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmeta.exceptions import ConfigError
from qmeta.model import (CavityParams, QubitParams, SystemConfig, bright_mode_frequencies,
                         build_hamiltonian, rabi_splitting, to_mhz)

from conftest import NU_C, random_system


def naive_single_excitation(nu_c, eps, g):
    """Project the Tavis-Cummings Hamiltonian onto one excitation by brute force.

    Basis states are |photon count, qubit bits⟩ of the full product space
    (photon number truncated at 1); the Hamiltonian is assembled from
    ladder operators and then restricted to the states with one quantum.
    """
    n = len(eps)
    a = np.array([[0.0, 1.0], [0.0, 0.0]])           # photon lowering, truncated at 1
    sm = np.array([[0.0, 1.0], [0.0, 0.0]])          # |0⟩⟨1| for a qubit
    eye = np.eye(2)

    def op(single, site):
        mats = [eye] * (n + 1)
        mats[site] = single
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    A = op(a, 0)
    H = nu_c * A.T @ A
    for j in range(n):
        S = op(sm, j + 1)
        H += eps[j] * S.T @ S + g[j] * (A.T @ S + S.T @ A)
    # number of quanta per basis state
    dim = 2 ** (n + 1)
    bits = [[(k >> (n - s)) & 1 for s in range(n + 1)] for k in range(dim)]
    one = [k for k in range(dim) if sum(bits[k]) == 1]
    # order: photon first, then qubit 1..N
    order = sorted(one, key=lambda k: bits[k].index(1))
    return H[np.ix_(order, order)]


def test_to_mhz_units():
    assert to_mhz("5.755 GHz") == pytest.approx(5755.0)
    assert to_mhz("30 MHz") == 30.0
    assert to_mhz(42) == 42.0
    assert to_mhz("1500 kHz") == pytest.approx(1.5)
    with pytest.raises(ConfigError):
        to_mhz("3 parsecs")
    with pytest.raises(ConfigError):
        to_mhz(True)


def test_param_invariants():
    with pytest.raises(ConfigError):
        CavityParams(0.0, 1.0)
    with pytest.raises(ConfigError):
        CavityParams(5000.0, -1.0)
    with pytest.raises(ConfigError):
        QubitParams(-1.0, 1.0, 42.0)
    with pytest.raises(ConfigError):
        QubitParams(5000.0, -0.1, 42.0)
    with pytest.raises(ConfigError):
        QubitParams(5000.0, 1.0, math.nan)
    QubitParams(5000.0, 0.0, -42.0)                  # signed coupling allowed


def test_bare_cavity_is_one_by_one(cavity):
    op = build_hamiltonian(SystemConfig(cavity))
    assert op.dimension == 1
    np.testing.assert_array_equal(op.hamiltonian(), [[NU_C]])
    np.testing.assert_array_equal(op.damping, [30.0])


def test_single_resonant_qubit(cavity):
    h = build_hamiltonian(SystemConfig.uniform(cavity, 1)).hamiltonian()
    np.testing.assert_array_equal(h, [[NU_C, 42.0], [42.0, NU_C]])


def test_structure_matches_naive_projection(cavity):
    # the full product space is 2^(N+1); keep N small for the brute force and
    # check the N=25 arrow structure separately
    rng = np.random.default_rng(3)
    eps = NU_C + rng.uniform(-50, 50, 6)
    g = rng.uniform(10, 50, 6)
    cfg = SystemConfig.from_arrays(cavity, eps, 1.0, g)
    np.testing.assert_allclose(build_hamiltonian(cfg).hamiltonian(),
                               naive_single_excitation(NU_C, eps, g), rtol=0, atol=1e-12)


def test_n25_only_arrow_offdiagonals(cavity):
    h = build_hamiltonian(SystemConfig.uniform(cavity, 25)).hamiltonian()
    off = h - np.diag(np.diag(h))
    off[0, :] = 0
    off[:, 0] = 0
    assert not off.any()
    np.testing.assert_array_equal(h[0, 1:], 42.0)
    np.testing.assert_array_equal(h[1:, 0], 42.0)


def test_rejects_non_finite(cavity):
    cfg = SystemConfig(cavity, (QubitParams(5000.0, 1.0, 42.0),))
    object.__setattr__(cfg.qubits[0], "g", math.inf)
    with pytest.raises(ConfigError):
        build_hamiltonian(cfg)


def test_resolvent_and_damping(cavity):
    cfg = SystemConfig.uniform(cavity, 3, gamma=2.0)
    op = build_hamiltonian(cfg)
    a = op.resolvent_matrix(5800.0)
    expected = 5800.0 * np.eye(4) + 1j * op.damping_matrix() - op.hamiltonian()
    np.testing.assert_allclose(a, expected, rtol=0, atol=1e-9)


def test_bright_modes_single_qubit(cavity):
    lo, hi = bright_mode_frequencies(SystemConfig.uniform(cavity, 1))
    assert (lo, hi) == (NU_C - 42.0, NU_C + 42.0)


def test_gap_scaling_n4(cavity):
    lo, hi = bright_mode_frequencies(SystemConfig.uniform(cavity, 4))
    assert hi - lo == pytest.approx(168.0, rel=1e-12)


def test_bright_modes_detuned_match_eigenvalues(cavity):
    cfg = SystemConfig.uniform(cavity, 23, epsilon=NU_C - 10.0)
    w = np.linalg.eigvalsh(build_hamiltonian(cfg).hamiltonian())
    lo, hi = bright_mode_frequencies(cfg)
    assert lo == pytest.approx(w[0], rel=1e-9)
    assert hi == pytest.approx(w[-1], rel=1e-9)


def test_bright_modes_need_degenerate_qubits(cavity):
    cfg = SystemConfig.from_arrays(cavity, [NU_C, NU_C + 1e-6], 1.0, 42.0)
    with pytest.raises(ConfigError, match="analytic formula requires degenerate qubits"):
        bright_mode_frequencies(cfg)
    with pytest.raises(ConfigError):
        bright_mode_frequencies(SystemConfig(cavity))


def test_rabi_splitting_values(cavity):
    assert rabi_splitting(SystemConfig.uniform(cavity, 1)) == pytest.approx(42.0)
    assert rabi_splitting(SystemConfig.uniform(cavity, 16)) == pytest.approx(168.0)


def test_rabi_splitting_small_detuning(cavity):
    cfg = SystemConfig.uniform(cavity, 9, epsilon=NU_C + 5.0)
    dev = abs(rabi_splitting(cfg) - 42.0 * 3) / (42.0 * 3)
    assert dev < 1 / 9


@given(st.integers(1, 40))
def test_sqrt_n_scaling_exact(n):
    cav = CavityParams(NU_C, 30.0)
    ratio = rabi_splitting(SystemConfig.uniform(cav, n)) / rabi_splitting(SystemConfig.uniform(cav, 1))
    assert ratio == pytest.approx(math.sqrt(n), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.floats(1.0, 80.0))
def test_uniform_spectrum_dark_and_bright(n, g):
    cav = CavityParams(NU_C, 30.0)
    cfg = SystemConfig.uniform(cav, n, g=g)
    w = np.linalg.eigvalsh(build_hamiltonian(cfg).hamiltonian())
    expected = np.sort(np.concatenate(([NU_C - g * math.sqrt(n), NU_C + g * math.sqrt(n)],
                                       np.full(n - 1, NU_C))))
    np.testing.assert_allclose(w, expected, rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 30))
def test_hamiltonian_real_symmetric(seed, n):
    cfg = random_system(np.random.default_rng(seed), n, signed=True)
    h = build_hamiltonian(cfg).hamiltonian()
    assert h.dtype == float
    np.testing.assert_array_equal(h, h.T)
    assert np.all(np.isreal(np.linalg.eigvals(h)))


def test_with_epsilons_and_dissipation(cavity):
    cfg = SystemConfig.uniform(cavity, 3)
    moved = cfg.with_epsilons([5700.0, 5750.0, 5800.0])
    np.testing.assert_array_equal(moved.epsilons, [5700.0, 5750.0, 5800.0])
    np.testing.assert_array_equal(moved.couplings, cfg.couplings)
    with pytest.raises(ConfigError):
        cfg.with_epsilons([1.0])
    closed = SystemConfig.uniform(CavityParams(NU_C, 0.0), 2, gamma=0.0)
    assert not closed.is_dissipative()
    assert cfg.is_dissipative()
