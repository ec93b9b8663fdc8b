"""Photon Green function and microwave transmission S21.

Two independent routes give the photonic propagator: a dense linear solve of
the dissipative resolvent (the verification path) and the self-energy closed
form (the default path for spectra, O(N) per frequency).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import as_float_vector
from .exceptions import ConfigError, NumericalError
from .model import SystemConfig, build_hamiltonian

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class ProbeGrid:
    frequencies: np.ndarray

    def __post_init__(self):
        f = as_float_vector("frequencies", self.frequencies, allow_empty=False)
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise ConfigError("probe frequencies must be strictly increasing")
        f.setflags(write=False)
        object.__setattr__(self, "frequencies", f)

    @classmethod
    def linspace(cls, start, stop, points):
        return cls(np.linspace(start, stop, int(points)))

    @classmethod
    def centered(cls, center, half_span, points):
        return cls.linspace(center - half_span, center + half_span, points)

    @property
    def step(self) -> float:
        f = self.frequencies
        return float(np.max(np.diff(f))) if f.size > 1 else 0.0

    def __len__(self):
        return self.frequencies.size


@dataclass(frozen=True)
class ComplexSpectrum:
    grid: ProbeGrid
    s21: np.ndarray
    realization_id: Optional[int] = None

    def __post_init__(self):
        s = np.asarray(self.s21, dtype=complex)
        if s.shape != self.grid.frequencies.shape:
            raise ConfigError("spectrum length does not match its grid")
        if not np.all(np.isfinite(s)):
            raise NumericalError("non-finite transmission in spectrum")
        s.setflags(write=False)
        object.__setattr__(self, "s21", s)

    @property
    def frequencies(self):
        return self.grid.frequencies

    @property
    def magnitude(self):
        return np.abs(self.s21)


def photon_green_full(config: SystemConfig, omega: float) -> complex:
    """[(ωI + iD − H)⁻¹]₀₀ from a linear solve against the photon basis vector."""
    op = build_hamiltonian(config)
    a = op.resolvent_matrix(float(omega))
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise NumericalError(
            f"resolvent at omega={omega} MHz is singular or ill-conditioned "
            f"(condition estimate {cond:.3g} > {CONDITION_LIMIT:.0e}); "
            "add damping or move the probe off the spectrum")
    rhs = np.zeros(op.dimension, dtype=complex)
    rhs[0] = 1.0
    x = np.linalg.solve(a, rhs)
    return complex(x[0])


def _self_energy_denominator(nu_c, kappa, eps, gam, g, omega):
    """G_ph⁻¹(ω) − Σ_j g_j²/(ω + iΓ_j − ε_j), broadcast over ``omega``."""
    omega = np.asarray(omega, dtype=float)
    w = omega[..., None]
    qubit = (w - eps) + 1j * gam
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = np.sum(g ** 2 / qubit, axis=-1)
    return (omega - nu_c) + 1j * kappa - sigma


def _green_from_denominator(den, omega):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 1.0 / den
    if not np.all(np.isfinite(out)):
        bad = np.atleast_1d(np.asarray(omega))[~np.isfinite(np.atleast_1d(out))]
        raise NumericalError(
            f"photon propagator is singular at omega={bad[:3].tolist()} MHz")
    return out


def photon_green_selfenergy(config: SystemConfig, omega: float) -> complex:
    """1 / (G_ph⁻¹(ω) − Σ_j g_j²/(ω + iΓ_j − ε_j)) with G_ph(ω) = (ω + iκ − ν_c)⁻¹."""
    cav = config.cavity
    den = _self_energy_denominator(
        cav.nu_c, cav.kappa, config.epsilons, config.gammas, config.couplings, omega)
    return complex(_green_from_denominator(den, omega))


def transmission_prefactor(config: SystemConfig) -> float:
    return float(np.sqrt(config.cavity.gamma_in * config.cavity.gamma_out))


def transmission(config: SystemConfig, omega: float, method: str = "selfenergy") -> complex:
    """S21(ω) = √(γ_in γ_out) · G_ph(ω)."""
    pre = transmission_prefactor(config)
    if pre == 0.0:
        return 0j
    if method == "selfenergy":
        green = photon_green_selfenergy(config, omega)
    elif method == "full":
        green = photon_green_full(config, omega)
    else:
        raise ConfigError(f"unknown method {method!r}; use 'selfenergy' or 'full'")
    return pre * green


def transmission_spectrum(config: SystemConfig, grid: ProbeGrid,
                          realization_id: Optional[int] = None) -> ComplexSpectrum:
    """Evaluate S21 pointwise over ``grid`` (vectorized self-energy path)."""
    if not isinstance(grid, ProbeGrid):
        grid = ProbeGrid(grid)
    cav = config.cavity
    pre = transmission_prefactor(config)
    f = grid.frequencies
    if pre == 0.0:
        return ComplexSpectrum(grid, np.zeros(f.shape, dtype=complex), realization_id)
    den = _self_energy_denominator(
        cav.nu_c, cav.kappa, config.epsilons, config.gammas, config.couplings, f)
    return ComplexSpectrum(grid, pre * _green_from_denominator(den, f), realization_id)
