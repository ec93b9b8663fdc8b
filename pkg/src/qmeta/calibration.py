"""Device model for flux-tunable transmons: flux dependence, coil crosstalk,
dressing by individual readout resonators, and parameter fitting.

Frequencies and Josephson/charging energies are in MHz; fluxes are the
dimensionless phase φ = 2πΦ/Φ₀; coil matrices map volts to φ. Couplings
scale as g = k·√ε, so k is in MHz^(1/2).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_finite, check_positive
from .estimators import JACOBIAN_STEP, MAX_ITERATIONS, ResidualStats, residual_stats
from .exceptions import ConfigError, NumericalError

ROUNDTRIP_TOL = 1e-9


@dataclass(frozen=True)
class TransmonSpec:
    ej1: float
    ej2: float
    ec: float

    def __post_init__(self):
        for name in ("ej1", "ej2", "ec"):
            check_positive(name, getattr(self, name))
        if (self.ej1 + self.ej2) / self.ec < 10:
            warnings.warn("E_J/E_C below 10: outside the transmon regime", stacklevel=3)

    @property
    def max_frequency(self) -> float:
        return bare_frequency(self, 0.0)

    @property
    def min_frequency(self) -> float:
        return bare_frequency(self, math.pi / 2)


@dataclass(frozen=True)
class FluxMap:
    """φ = L·V + φ⁰ with L of shape (qubits, coils)."""

    inductance: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.inductance, dtype=float))
        phi0 = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        check_finite("inductance", L)
        check_finite("offsets", phi0)
        if phi0.shape != (L.shape[0],):
            raise ConfigError(f"offsets shape {phi0.shape} does not match {L.shape[0]} qubits")
        object.__setattr__(self, "inductance", L)
        object.__setattr__(self, "offsets", phi0)

    @property
    def n_qubits(self) -> int:
        return self.inductance.shape[0]

    @property
    def n_coils(self) -> int:
        return self.inductance.shape[1]

    def fluxes(self, voltages) -> np.ndarray:
        v = np.asarray(voltages, dtype=float)
        return v @ self.inductance.T + self.offsets


@dataclass(frozen=True)
class ReadoutSpec:
    nu_ind: float
    k_ind: float
    k_common: float

    def __post_init__(self):
        check_positive("nu_ind", self.nu_ind)
        check_finite("k_ind", self.k_ind)
        check_finite("k_common", self.k_common)


class DressedPair(NamedTuple):
    lower: float
    upper: float
    qubit_branch: str  # "lower" or "upper": the branch with the larger qubit weight

    @property
    def qubit(self) -> float:
        return self.lower if self.qubit_branch == "lower" else self.upper


def bare_frequency(spec: TransmonSpec, phi):
    """ε(φ) = √(8E_C)·((E_J1+E_J2)²cos²φ + (E_J1−E_J2)²sin²φ)^(1/4) − E_C."""
    s, d = spec.ej1 + spec.ej2, spec.ej1 - spec.ej2
    phi = np.asarray(phi, dtype=float)
    inner = s * s * np.cos(phi) ** 2 + d * d * np.sin(phi) ** 2
    out = math.sqrt(8 * spec.ec) * inner ** 0.25 - spec.ec
    return float(out) if out.ndim == 0 else out


def flux_from_frequency(spec: TransmonSpec, epsilon_target, branch: str = "first_quadrant"):
    """Invert :func:`bare_frequency` on the monotone branch φ ∈ [0, π/2]."""
    if branch.lower().replace("-", "_") not in ("first_quadrant", "firstquadrant"):
        raise ConfigError(f"unsupported flux branch {branch!r}")
    eps = np.asarray(epsilon_target, dtype=float)
    lo, hi = spec.min_frequency, spec.max_frequency
    tol = 1e-9 * max(1.0, hi)
    if np.any(eps < lo - tol) or np.any(eps > hi + tol) or not np.all(np.isfinite(eps)):
        raise ConfigError(
            f"target frequency {eps.tolist()} MHz outside the attainable band [{lo:.6f}, {hi:.6f}] MHz")
    s2 = (spec.ej1 + spec.ej2) ** 2
    d2 = (spec.ej1 - spec.ej2) ** 2
    q = ((eps + spec.ec) ** 2 / (8 * spec.ec)) ** 2
    # cos²φ ∝ q − d², sin²φ ∝ s² − q; arctan2 stays accurate at both band edges
    phi = np.arctan2(np.sqrt(np.clip(s2 - q, 0, None)), np.sqrt(np.clip(q - d2, 0, None)))
    return float(phi) if phi.ndim == 0 else phi


def _coupling_sq(k, epsilon):
    return k * k * epsilon


def dressed_from_bare(epsilon: float, nu_ind: float, k_ind: float) -> DressedPair:
    """Eigenfrequencies of a qubit coupled (g = k_ind·√ε) to its readout resonator."""
    check_positive("epsilon", epsilon)
    check_positive("nu_ind", nu_ind)
    g2 = _coupling_sq(k_ind, epsilon)
    root = math.sqrt((epsilon - nu_ind) ** 2 + 4 * g2)
    mid = 0.5 * (epsilon + nu_ind)
    lower, upper = mid - 0.5 * root, mid + 0.5 * root
    # qubit weight is larger on the branch nearer ε; ties go to the lower branch
    branch = "lower" if abs(lower - epsilon) <= abs(upper - epsilon) else "upper"
    return DressedPair(lower, upper, branch)


def bare_from_dressed(epsilon_c: float, nu_ind: float, k_ind: float) -> float:
    """Bare qubit frequency whose dressed image contains ``epsilon_c``.

    From (ε_c − ε)(ε_c − ν) = k²ε the solution is unique:
    ε = ε_c(ν − ε_c)/(ν − ε_c − k²); it is physical only outside the gap.
    """
    check_positive("epsilon_c", epsilon_c)
    check_positive("nu_ind", nu_ind)
    k2 = k_ind * k_ind
    if k2 == 0:
        return float(epsilon_c)
    den = nu_ind - epsilon_c - k2
    eps = epsilon_c * (nu_ind - epsilon_c) / den if den != 0 else math.inf
    if not math.isfinite(eps) or eps <= 0:
        raise NumericalError(
            f"dressed frequency {epsilon_c} MHz lies in the forbidden gap "
            f"[{nu_ind - k2}, {nu_ind}] MHz; no bare frequency maps onto it")
    return float(eps)


def voltages_from_fluxes(flux_map: FluxMap, target_phis):
    """Least-squares coil voltages for target fluxes.

    Returns ``(voltages, residual_norm)``; the residual is zero (to rounding)
    whenever the system is solvable.
    """
    phi = np.asarray(target_phis, dtype=float)
    if phi.shape != (flux_map.n_qubits,):
        raise ConfigError(f"expected {flux_map.n_qubits} target fluxes, got shape {phi.shape}")
    rhs = phi - flux_map.offsets
    v, *_ = np.linalg.lstsq(flux_map.inductance, rhs, rcond=None)
    resid = float(np.linalg.norm(flux_map.inductance @ v - rhs))
    return v, resid


@dataclass(frozen=True)
class ExtendedModes:
    frequencies: np.ndarray       # ascending eigenfrequencies (MHz)
    labels: tuple                 # dominant basis element of each mode
    assignment: np.ndarray        # mode index carrying each qubit
    participation: np.ndarray     # squared eigenvector weights, basis × mode

    def qubit_frequencies(self) -> np.ndarray:
        return self.frequencies[self.assignment]


def _extended_matrix(eps, nu_ind, k_ind, k_common, nu_c):
    """Batched (…, 2N+1)² RWA matrices in the basis [cavity, qubits, readouts]."""
    eps = np.asarray(eps, dtype=float)
    n = eps.shape[-1]
    dim = 2 * n + 1
    h = np.zeros(eps.shape[:-1] + (dim, dim))
    root = np.sqrt(np.clip(eps, 0, None))
    q = np.arange(1, n + 1)
    r = q + n
    h[..., 0, 0] = nu_c
    h[..., q, q] = eps
    h[..., r, r] = nu_ind
    gc = k_common * root
    gi = k_ind * root
    h[..., 0, q] = gc
    h[..., q, 0] = gc
    h[..., q, r] = gi
    h[..., r, q] = gi
    return h


def _mode_labels(weights, n):
    names = ["cavity"] + [f"qubit{j}" for j in range(n)] + [f"readout{j}" for j in range(n)]
    return tuple(names[i] for i in np.argmax(weights, axis=0))


def extended_eigenfrequencies(epsilons, readouts: Sequence[ReadoutSpec], nu_c: float) -> ExtendedModes:
    """Eigenmodes of cavity + qubits + individual readout resonators (RWA).

    Each qubit is assigned the mode with the largest squared weight on it; on
    exact ties the lowest mode index wins.
    """
    eps = np.asarray(epsilons, dtype=float)
    if len(readouts) != eps.size:
        raise ConfigError("one ReadoutSpec per qubit is required")
    check_positive("epsilons", eps)
    check_positive("nu_c", nu_c)
    nu_ind = np.array([r.nu_ind for r in readouts], dtype=float)
    k_ind = np.array([r.k_ind for r in readouts], dtype=float)
    k_com = np.array([r.k_common for r in readouts], dtype=float)
    h = _extended_matrix(eps, nu_ind, k_ind, k_com, nu_c)
    vals, vecs = np.linalg.eigh(h)
    weights = vecs ** 2
    n = eps.size
    assignment = np.argmax(weights[1:n + 1, :], axis=1)
    return ExtendedModes(vals, _mode_labels(weights, n), assignment, weights)


# -- device model and fitting -------------------------------------------------

@dataclass(frozen=True)
class DeviceModel:
    transmons: tuple
    flux_map: FluxMap
    readouts: tuple
    nu_c: float

    def __post_init__(self):
        object.__setattr__(self, "transmons", tuple(self.transmons))
        object.__setattr__(self, "readouts", tuple(self.readouts))
        n = len(self.transmons)
        if len(self.readouts) != n or self.flux_map.n_qubits != n:
            raise ConfigError("transmons, readouts and flux map disagree on the qubit count")

    @property
    def n_qubits(self) -> int:
        return len(self.transmons)

    def bare_frequencies(self, voltages) -> np.ndarray:
        phi = self.flux_map.fluxes(voltages)
        ej1 = np.array([t.ej1 for t in self.transmons])
        ej2 = np.array([t.ej2 for t in self.transmons])
        ec = np.array([t.ec for t in self.transmons])
        s, d = ej1 + ej2, ej1 - ej2
        inner = s * s * np.cos(phi) ** 2 + d * d * np.sin(phi) ** 2
        return np.sqrt(8 * ec) * inner ** 0.25 - ec

    def predict(self, voltages, qubit_ids) -> np.ndarray:
        """Dressed frequency of the mode assigned to each observed qubit."""
        v = np.atleast_2d(np.asarray(voltages, dtype=float))
        ids = np.atleast_1d(np.asarray(qubit_ids, dtype=int))
        eps = self.bare_frequencies(v)
        if np.any(eps <= 0) or not np.all(np.isfinite(eps)):
            raise NumericalError("model produced non-positive qubit frequencies")
        nu_ind = np.array([r.nu_ind for r in self.readouts])
        k_ind = np.array([r.k_ind for r in self.readouts])
        k_com = np.array([r.k_common for r in self.readouts])
        vals, vecs = np.linalg.eigh(_extended_matrix(eps, nu_ind, k_ind, k_com, self.nu_c))
        rows = np.arange(v.shape[0])
        w = vecs[rows, ids + 1, :] ** 2          # weight of the observed qubit in every mode
        mode = np.argmax(w, axis=1)
        return vals[rows, mode]

    def voltages_for(self, dressed_targets):
        """Coil voltages setting each qubit's dressed (qubit–readout) frequency.

        Each target is converted to a bare frequency with the two-mode model,
        then to a flux, then the linear coil system is solved.
        """
        targets = np.asarray(dressed_targets, dtype=float)
        if targets.shape != (self.n_qubits,):
            raise ConfigError(f"expected {self.n_qubits} targets")
        bare = [bare_from_dressed(t, r.nu_ind, r.k_ind) for t, r in zip(targets, self.readouts)]
        phis = np.array([flux_from_frequency(tr, e) for tr, e in zip(self.transmons, bare)])
        return voltages_from_fluxes(self.flux_map, phis)


FITTABLE = ("ej1", "ej2", "ec", "inductance", "offsets", "k_ind", "k_common", "nu_ind", "nu_c")
DEFAULT_FREE = ("ej1", "ej2", "inductance", "offsets")


def _pack(model: DeviceModel, free):
    parts, lower = [], []
    for name in free:
        if name in ("ej1", "ej2", "ec"):
            vals = [getattr(t, name) for t in model.transmons]
            lo = [1e-6] * len(vals)
        elif name in ("k_ind", "k_common", "nu_ind"):
            vals = [getattr(r, name) for r in model.readouts]
            lo = [1e-6 if name == "nu_ind" else -np.inf] * len(vals)
        elif name == "inductance":
            vals = model.flux_map.inductance.ravel().tolist()
            lo = [-np.inf] * len(vals)
        elif name == "offsets":
            vals = model.flux_map.offsets.tolist()
            lo = [-np.inf] * len(vals)
        elif name == "nu_c":
            vals, lo = [model.nu_c], [1e-6]
        else:
            raise ConfigError(f"unknown device parameter {name!r}; choose from {FITTABLE}")
        parts.extend(vals)
        lower.extend(lo)
    return np.asarray(parts, dtype=float), np.asarray(lower, dtype=float)


def _unpack(model: DeviceModel, free, p):
    n = model.n_qubits
    i = 0
    trans = [dict(ej1=t.ej1, ej2=t.ej2, ec=t.ec) for t in model.transmons]
    reads = [dict(nu_ind=r.nu_ind, k_ind=r.k_ind, k_common=r.k_common) for r in model.readouts]
    L, phi0, nu_c = model.flux_map.inductance, model.flux_map.offsets, model.nu_c
    for name in free:
        if name in ("ej1", "ej2", "ec"):
            for j in range(n):
                trans[j][name] = p[i + j]
            i += n
        elif name in ("k_ind", "k_common", "nu_ind"):
            for j in range(n):
                reads[j][name] = p[i + j]
            i += n
        elif name == "inductance":
            L = p[i:i + L.size].reshape(L.shape)
            i += L.size
        elif name == "offsets":
            phi0 = p[i:i + n]
            i += n
        elif name == "nu_c":
            nu_c = p[i]
            i += 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return DeviceModel(tuple(TransmonSpec(**t) for t in trans), FluxMap(L, phi0),
                           tuple(ReadoutSpec(**r) for r in reads), float(nu_c))


@dataclass(frozen=True)
class CalibrationResult:
    model: DeviceModel
    residuals: ResidualStats
    n_observations: int
    n_dropped: int
    converged: bool
    message: str = ""
    mask: Optional[np.ndarray] = field(default=None, repr=False)


def _fit_once(initial, free, v, ids, y):
    p0, lower = _pack(initial, free)
    scale = np.where(np.abs(p0) > 0, np.abs(p0), 1.0)

    def resid(p):
        try:
            return _unpack(initial, free, p * scale).predict(v, ids) - y
        except (ConfigError, NumericalError):
            return np.full(y.shape, 1e6)

    res = optimize.least_squares(
        resid, p0 / scale, jac="3-point", diff_step=JACOBIAN_STEP, method="trf",
        bounds=(lower / scale, np.inf), max_nfev=MAX_ITERATIONS, x_scale="jac")
    return _unpack(initial, free, res.x * scale), res


def fit_device_parameters(observations, initial: DeviceModel, free=DEFAULT_FREE,
                          drop_outliers: bool = True) -> CalibrationResult:
    """Least-squares device fit to ``(voltage vector, qubit id, dressed frequency)`` rows.

    The prediction chain is voltages → fluxes → bare ε → extended eigenmodes →
    mode assigned to the observed qubit. With ``drop_outliers`` points whose
    residual exceeds three standard deviations are removed once and the fit is
    repeated from the first solution.
    """
    obs = list(observations)
    if not obs:
        raise ConfigError("no observations to fit")
    v = np.array([np.asarray(o[0], dtype=float) for o in obs])
    ids = np.array([int(o[1]) for o in obs])
    y = np.array([float(o[2]) for o in obs])
    if v.ndim != 2 or v.shape[1] != initial.flux_map.n_coils:
        raise ConfigError(f"voltage vectors must have {initial.flux_map.n_coils} entries")
    if ids.min() < 0 or ids.max() >= initial.n_qubits:
        raise ConfigError("qubit id out of range")
    free = tuple(free)
    model, res = _fit_once(initial, free, v, ids, y)
    mask = np.ones(y.size, dtype=bool)
    if drop_outliers and y.size > 2:
        r = model.predict(v, ids) - y
        sd = r.std(ddof=1)
        # residuals at rounding level carry no outliers
        if sd > 1e-9 * float(np.max(np.abs(y))):
            mask = np.abs(r) <= 3 * sd
        if not mask.all():
            model, res = _fit_once(model, free, v[mask], ids[mask], y[mask])
    pred = model.predict(v[mask], ids[mask])
    stats = residual_stats(y[mask], pred)
    converged = res.status > 0
    if not converged:
        raise NumericalError(
            f"device fit did not converge in {MAX_ITERATIONS} evaluations "
            f"(residual std {stats.std:.3f} MHz)",
            best=CalibrationResult(model, stats, y.size, int((~mask).sum()), False,
                                   res.message, mask))
    return CalibrationResult(model, stats, y.size, int((~mask).sum()), True, res.message, mask)


class DeviceCalibrator(RegressorMixin, BaseEstimator):
    """scikit-learn wrapper: ``X`` rows are ``[qubit_id, V_1, ..., V_K]``, ``y`` the
    observed dressed frequencies."""

    def __init__(self, initial_model=None, free=DEFAULT_FREE, drop_outliers=True):
        self.initial_model = initial_model
        self.free = free
        self.drop_outliers = drop_outliers

    def fit(self, X, y):
        if self.initial_model is None:
            raise ConfigError("DeviceCalibrator needs an initial_model")
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        obs = [(row[1:], int(row[0]), f) for row, f in zip(X, y)]
        self.result_ = fit_device_parameters(obs, self.initial_model, self.free,
                                             self.drop_outliers)
        self.model_ = self.result_.model
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        return self.model_.predict(X[:, 1:], X[:, 0].astype(int))


def synthetic_observations(model: DeviceModel, voltages, noise_std: float = 0.0,
                           rng: Optional[np.random.Generator] = None):
    """Observation rows for every qubit at every voltage vector, with Gaussian noise."""
    v = np.atleast_2d(np.asarray(voltages, dtype=float))
    n = model.n_qubits
    vv = np.repeat(v, n, axis=0)
    ids = np.tile(np.arange(n), v.shape[0])
    f = model.predict(vv, ids)
    if noise_std > 0:
        rng = rng if rng is not None else np.random.default_rng()
        f = f + rng.normal(0.0, noise_std, size=f.size)
    return [(vv[i], int(ids[i]), float(f[i])) for i in range(f.size)]


def coil_sweep(n_coils: int, v_min: float, v_max: float, points: int) -> np.ndarray:
    """One coil swept at a time, all others at zero."""
    vs = np.linspace(v_min, v_max, points)
    rows = []
    for c in range(n_coils):
        block = np.zeros((points, n_coils))
        block[:, c] = vs
        rows.append(block)
    return np.vstack(rows)


def perturbed(model: DeviceModel, free, rel: float, rng: np.random.Generator) -> DeviceModel:
    """Copy of ``model`` with the ``free`` parameters scaled by 1 + N(0, rel²)."""
    p, _ = _pack(model, free)
    return _unpack(model, tuple(free), p * (1 + rel * rng.standard_normal(p.size)))
