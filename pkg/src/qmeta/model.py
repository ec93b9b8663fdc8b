"""Single-excitation Tavis-Cummings model.

All frequencies and rates are linear frequencies in MHz. GHz values are
accepted at the boundary through :func:`to_mhz`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import (
    DEGENERACY_TOL,
    check_finite,
    check_positive,
    is_degenerate,
)
from .exceptions import ConfigError

_UNIT_SCALE = {"hz": 1e-6, "khz": 1e-3, "mhz": 1.0, "ghz": 1e3}
_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([a-zA-Z]*)\s*$")


def to_mhz(value) -> float:
    """Convert a number (already MHz) or a string such as ``"5.755 GHz"`` to MHz."""
    if isinstance(value, str):
        m = _QUANTITY.match(value)
        if not m:
            raise ConfigError(f"cannot parse frequency {value!r}")
        unit = (m.group(2) or "MHz").lower()
        if unit not in _UNIT_SCALE:
            raise ConfigError(f"unknown frequency unit {m.group(2)!r} in {value!r}")
        return float(m.group(1)) * _UNIT_SCALE[unit]
    if isinstance(value, bool):
        raise ConfigError(f"expected a frequency, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class CavityParams:
    """Common cavity: frequency ``nu_c``, internal loss ``kappa`` and the
    radiation rates into the input and output lines."""

    nu_c: float
    kappa: float
    gamma_in: float = 0.0
    gamma_out: float = 0.0

    def __post_init__(self):
        check_positive("nu_c", self.nu_c)
        for name in ("kappa", "gamma_in", "gamma_out"):
            check_positive(name, getattr(self, name), strict=False)


@dataclass(frozen=True)
class QubitParams:
    epsilon: float
    gamma: float
    g: float

    def __post_init__(self):
        check_positive("epsilon", self.epsilon)
        check_positive("gamma", self.gamma, strict=False)
        check_finite("g", self.g)


@dataclass(frozen=True)
class SystemConfig:
    cavity: CavityParams
    qubits: tuple[QubitParams, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(self.qubits))

    @classmethod
    def uniform(cls, cavity, n_qubits, epsilon=None, gamma=1.0, g=42.0):
        """``n_qubits`` identical qubits, resonant with the cavity by default."""
        eps = cavity.nu_c if epsilon is None else epsilon
        return cls(cavity, tuple(QubitParams(eps, gamma, g) for _ in range(n_qubits)))

    @classmethod
    def from_arrays(cls, cavity, epsilons, gammas, couplings):
        epsilons, gammas, couplings = np.broadcast_arrays(
            np.atleast_1d(np.asarray(epsilons, float)),
            np.atleast_1d(np.asarray(gammas, float)),
            np.atleast_1d(np.asarray(couplings, float)),
        )
        return cls(
            cavity,
            tuple(QubitParams(float(e), float(gm), float(gg))
                  for e, gm, gg in zip(epsilons, gammas, couplings)),
        )

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([q.epsilon for q in self.qubits], dtype=float)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([q.gamma for q in self.qubits], dtype=float)

    @property
    def couplings(self) -> np.ndarray:
        return np.array([q.g for q in self.qubits], dtype=float)

    def with_epsilons(self, epsilons) -> "SystemConfig":
        """Copy with the qubit frequencies replaced, keeping Γ_j and g_j."""
        epsilons = np.asarray(epsilons, dtype=float)
        if epsilons.shape != (self.n_qubits,):
            raise ConfigError(
                f"expected {self.n_qubits} frequencies, got shape {epsilons.shape}")
        return replace(self, qubits=tuple(
            replace(q, epsilon=float(e)) for q, e in zip(self.qubits, epsilons)))

    def is_dissipative(self) -> bool:
        return self.cavity.kappa > 0 or (
            self.n_qubits > 0 and bool(np.all(self.gammas > 0)))


@dataclass(frozen=True)
class SingleExcitationOperator:
    """Arrow-shaped Hamiltonian in the basis {photon, qubit 1, ..., qubit N}
    together with the damping diagonal diag[κ, Γ_1, ..., Γ_N]."""

    diagonal: np.ndarray
    damping: np.ndarray
    coupling_row: np.ndarray = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.diagonal.size

    def hamiltonian(self) -> np.ndarray:
        h = np.diag(self.diagonal.astype(float))
        h[0, 1:] = self.coupling_row
        h[1:, 0] = self.coupling_row
        return h

    def damping_matrix(self) -> np.ndarray:
        return np.diag(self.damping)

    def resolvent_matrix(self, omega: float) -> np.ndarray:
        """ωI + iD − H, with the diagonal differences formed before complexification."""
        a = -self.hamiltonian().astype(complex)
        a[np.diag_indices(self.dimension)] = (omega - self.diagonal) + 1j * self.damping
        return a

    def eigh(self):
        return np.linalg.eigh(self.hamiltonian())


def build_hamiltonian(config: SystemConfig) -> SingleExcitationOperator:
    """Project the Tavis-Cummings Hamiltonian onto the single-excitation sector.

    Element [0, 0] is ν_c, [j, j] is ε_j and [0, j] = [j, 0] = g_j; every other
    element vanishes.
    """
    cav = config.cavity
    eps, gam, g = config.epsilons, config.gammas, config.couplings
    for name, arr in (("epsilon", eps), ("gamma", gam), ("g", g)):
        check_finite(name, arr)
    check_finite("nu_c", cav.nu_c)
    check_finite("kappa", cav.kappa)
    diagonal = np.concatenate(([cav.nu_c], eps))
    damping = np.concatenate(([cav.kappa], gam))
    return SingleExcitationOperator(diagonal, damping, g.copy())


def bright_mode_frequencies(config: SystemConfig) -> tuple[float, float]:
    """Frequencies (ν−, ν+) of the two bright collective modes.

    Only defined when every qubit has the same frequency; the effective
    coupling is the Euclidean norm of the coupling vector.
    """
    if config.n_qubits < 1:
        raise ConfigError("bright modes need at least one qubit")
    eps = config.epsilons
    if not is_degenerate(eps, DEGENERACY_TOL):
        raise ConfigError("analytic formula requires degenerate qubits")
    nu_c = config.cavity.nu_c
    e = float(eps[0])
    g2 = float(np.sum(config.couplings ** 2))
    root = np.sqrt((nu_c - e) ** 2 + 4.0 * g2)
    mid = 0.5 * (nu_c + e)
    return mid - 0.5 * root, mid + 0.5 * root


def rabi_splitting(config: SystemConfig) -> float:
    """Half the bright-mode gap, i.e. g·√N on resonance."""
    lo, hi = bright_mode_frequencies(config)
    return 0.5 * (hi - lo)
