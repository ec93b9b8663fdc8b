"""Diagonal disorder, seeded Monte-Carlo ensembles and large-N oracles.

Realizations are drawn from independent streams: the seed of realization
``index`` is hashed from ``(master_seed, n_qubits, index)`` and feeds a Philox
counter-based generator, so any realization can be regenerated alone and the
ensemble does not depend on the order or number of workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import integrate, special

from ._validation import check_int, check_positive
from .exceptions import ConfigError, NumericalError
from .model import SystemConfig


@dataclass(frozen=True)
class Flat:
    """Uniform density of width Δ around the mean."""

    name = "flat"


@dataclass(frozen=True)
class FlatPlusGaussianJitter:
    """Uniform density convolved with an independent Gaussian setting error."""

    sigma: float
    name = "flat+gauss"

    def __post_init__(self):
        check_positive("sigma", self.sigma, strict=False)


Shape = Union[Flat, FlatPlusGaussianJitter]


def parse_shape(name: str, sigma: float = 0.0) -> Shape:
    key = name.lower().replace("_", "+").replace("-", "+")
    if key == "flat":
        return Flat()
    if key in ("flat+gauss", "flat+gaussian", "flatplusgaussianjitter", "jitter"):
        return FlatPlusGaussianJitter(float(sigma))
    raise ConfigError(f"unknown disorder shape {name!r}; expected 'flat' or 'flat+gauss'")


@dataclass(frozen=True)
class DisorderSpec:
    mean: float
    spread_delta: float
    shape: Shape = field(default_factory=Flat)
    master_seed: int = 0

    def __post_init__(self):
        check_positive("mean", self.mean)
        check_positive("spread_delta", self.spread_delta)
        if not isinstance(self.shape, (Flat, FlatPlusGaussianJitter)):
            raise ConfigError(f"unsupported disorder shape {self.shape!r}")
        seed = check_int("master_seed", self.master_seed, minimum=0)
        if seed >= 2 ** 64:
            raise ConfigError("master_seed must fit in 64 bits")

    @property
    def sigma(self) -> float:
        return getattr(self.shape, "sigma", 0.0)


@dataclass(frozen=True)
class Realization:
    epsilons: np.ndarray
    realization_index: int
    derived_seed: int


@dataclass(frozen=True)
class EnsembleStats:
    n_qubits: int
    spread_delta: float
    n_realizations: int
    mean_s21: complex
    var_s21: float
    std_error_mean: float
    std_error_var: float

    @property
    def n_over_delta(self) -> float:
        return self.n_qubits / self.spread_delta


def derive_seed(master_seed: int, *keys: int) -> int:
    """64-bit seed for the stream labelled by ``keys`` under ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _draw_offsets(rng, spec, n_qubits):
    half = 0.5 * spec.spread_delta
    offsets = rng.uniform(-half, half, size=n_qubits)
    if spec.sigma > 0:
        offsets = offsets + rng.normal(0.0, spec.sigma, size=n_qubits)
    return offsets


def draw_realization(spec: DisorderSpec, n_qubits: int, index: int) -> Realization:
    n_qubits = check_int("n_qubits", n_qubits, minimum=1)
    index = check_int("index", index, minimum=0)
    seed = derive_seed(spec.master_seed, n_qubits, index)
    eps = spec.mean + _draw_offsets(_generator(seed), spec, n_qubits)
    eps.setflags(write=False)
    return Realization(eps, index, seed)


# -- Monte-Carlo ensemble -----------------------------------------------------

def _template_arrays(template: SystemConfig, n_qubits: int):
    if template.n_qubits == n_qubits:
        return template.gammas, template.couplings
    if template.n_qubits == 0:
        raise ConfigError("config template needs at least one qubit to copy Γ and g from")
    q = template.qubits[0]
    return np.full(n_qubits, q.gamma), np.full(n_qubits, q.g)


def _ensemble_chunk(template, spec, n_qubits, indices, omega, background_c1, noise_var):
    cav = template.cavity
    gam, g = _template_arrays(template, n_qubits)
    g2 = g ** 2
    pre = math.sqrt(cav.gamma_in * cav.gamma_out)
    out = np.empty(len(indices), dtype=complex)
    for row, index in enumerate(indices):
        rng = _generator(derive_seed(spec.master_seed, n_qubits, index))
        eps = spec.mean + _draw_offsets(rng, spec, n_qubits)
        den = complex(omega - cav.nu_c, cav.kappa)
        # fixed left-to-right accumulation keeps results bitwise stable
        for j in range(n_qubits):
            q = complex(omega - eps[j], gam[j])
            if q == 0:
                raise NumericalError(
                    f"realization {index}: qubit {j} sits exactly at omega={omega} MHz "
                    "with zero damping")
            den -= g2[j] / q
        if den == 0 or not math.isfinite(abs(den)):
            raise NumericalError(
                f"realization {index}: photon propagator is singular at omega={omega} MHz")
        s = pre / den
        if noise_var > 0:
            z = rng.normal(0.0, math.sqrt(0.5 * noise_var), size=2)
            s += complex(z[0], z[1])
        out[row] = s + background_c1
    return out


def ensemble_transmissions(config_template: SystemConfig, spec: DisorderSpec, n_qubits: int,
                           n_realizations: int, *, omega: Optional[float] = None,
                           threads: int = 1, background_c1: complex = 0j,
                           noise_var: float = 0.0) -> np.ndarray:
    """S21 at ``omega`` (default ν_c) for realizations 0..M−1, in index order.

    ``background_c1`` adds a constant complex offset and ``noise_var`` adds
    circular complex Gaussian noise of that variance to every realization.
    """
    n_qubits = check_int("n_qubits", n_qubits, minimum=1)
    n_realizations = check_int("n_realizations", n_realizations, minimum=1)
    threads = check_int("threads", threads, minimum=1)
    check_positive("noise_var", noise_var, strict=False)
    omega = config_template.cavity.nu_c if omega is None else float(omega)
    indices = np.arange(n_realizations)
    args = (config_template, spec, n_qubits)
    kw = dict(omega=omega, background_c1=complex(background_c1), noise_var=float(noise_var))
    if threads == 1 or n_realizations < 2 * threads:
        return _ensemble_chunk(*args, indices, **kw)
    chunks = np.array_split(indices, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: _ensemble_chunk(*args, c, **kw), chunks))
    return np.concatenate(parts)


def jackknife_mean_var(samples):
    """Mean, population variance and their leave-one-out jackknife standard errors."""
    s = np.asarray(samples, dtype=complex)
    m = s.size
    if m < 2:
        raise ConfigError("variance needs at least two realizations")
    mean = s.mean()
    d = s - mean
    a2 = np.abs(d) ** 2
    var = float(a2.mean())
    # leave-one-out replicates in closed form (O(M))
    loo_mean = (m * mean - s) / (m - 1)
    loo_var = (a2.sum() - a2) / (m - 1) - np.abs(d / (m - 1)) ** 2
    jk = (m - 1) / m
    se_mean = math.sqrt(jk * float(np.sum(np.abs(loo_mean - loo_mean.mean()) ** 2)))
    se_var = math.sqrt(jk * float(np.sum((loo_var - loo_var.mean()) ** 2)))
    return complex(mean), var, se_mean, se_var


def ensemble_average(config_template: SystemConfig, spec: DisorderSpec, n_qubits: int,
                     n_realizations: int, **kwargs) -> EnsembleStats:
    """Monte-Carlo ⟨S21⟩ and ⟨|ΔS21|²⟩ (1/M normalization) over disorder realizations.

    Keyword arguments are forwarded to :func:`ensemble_transmissions`.
    """
    if check_int("n_realizations", n_realizations) < 2:
        raise ConfigError("n_realizations must be >= 2 for a variance")
    s = ensemble_transmissions(config_template, spec, n_qubits, n_realizations, **kwargs)
    mean, var, se_m, se_v = jackknife_mean_var(s)
    return EnsembleStats(int(n_qubits), float(spec.spread_delta), int(n_realizations),
                         mean, var, se_m, se_v)


# -- closed-form oracles ------------------------------------------------------

def mean_s21_analytic(g, kappa, gamma_in, gamma_out, n_qubits, delta) -> complex:
    """Self-averaged ⟨S21⟩ at ω = ν_c in the infinite-band approximation."""
    check_positive("delta", delta)
    return math.sqrt(gamma_in * gamma_out) * (-1j) / (kappa + math.pi * g ** 2 * n_qubits / delta)


def var_s21_analytic(g, kappa, gamma_in, gamma_out, gamma_q, n_qubits, delta) -> float:
    """Leading-order ⟨|ΔS21|²⟩ as written in the closed-form fluctuation result.

    Only the real (odd) part of the self-energy is treated as random here.
    """
    check_positive("delta", delta)
    if gamma_q <= 0:
        raise ConfigError("fluctuation formula diverges for qubit relaxation gamma_q <= 0")
    x = kappa + math.pi * g ** 2 * n_qubits / delta
    return gamma_in * gamma_out * math.pi * n_qubits * g ** 4 / (2 * gamma_q * delta * x ** 4)


def relative_fluctuation_analytic(g, kappa, gamma_q, n_qubits, delta) -> float:
    """√⟨|ΔS21|²⟩ / |⟨S21⟩| from the two closed forms above."""
    x = kappa + math.pi * g ** 2 * n_qubits / delta
    return g ** 2 / x * math.sqrt(math.pi * n_qubits / (2 * gamma_q * delta))


def crossover_n0(delta, gamma_q) -> float:
    """Qubit number Δ/(2πΓ) separating mesoscopic and self-averaging regimes."""
    check_positive("delta", delta)
    check_positive("gamma_q", gamma_q)
    return delta / (2 * math.pi * gamma_q)


def infinite_band_integral(delta, gamma_q) -> float:
    """π/(ΔΓ): the flat-density integral of 1/(ε²+Γ²) taken over the whole line."""
    return math.pi / (delta * gamma_q)


def _jitter_density(eps, delta, sigma):
    half = 0.5 * delta
    return (special.ndtr((eps + half) / sigma) - special.ndtr((eps - half) / sigma)) / delta


def _density_quad(fn, delta, gamma_q, shape, what):
    sigma = getattr(shape, "sigma", 0.0)
    half = 0.5 * delta
    if sigma == 0:
        lo, hi = -half, half
        dens = lambda e: 1.0 / delta  # noqa: E731
    else:
        lo, hi = -half - 12 * sigma, half + 12 * sigma
        dens = lambda e: _jitter_density(e, delta, sigma)  # noqa: E731
    cand = [-half, -gamma_q, 0.0, gamma_q, half]
    for k in (-8, -4, -2, 2, 4, 8):
        cand += [-half + k * sigma, half + k * sigma]
    pts = sorted({p for p in cand if lo < p < hi})
    val, err = integrate.quad(lambda e: dens(e) * fn(e), lo, hi, points=pts,
                              epsabs=0.0, epsrel=1e-11, limit=400)
    if not math.isfinite(val) or (val != 0 and err > 1e-8 * abs(val)):
        raise NumericalError(
            f"quadrature of {what} did not converge: achieved relative error {err / abs(val):.2e}")
    return val


def self_energy_integral(delta, gamma_q, shape: Shape = Flat()) -> float:
    """∫ p(ε) dε / (ε² + Γ²) for the given disorder density (MHz⁻²·MHz = MHz⁻¹ per Γ)."""
    check_positive("delta", delta)
    check_positive("gamma_q", gamma_q)
    if isinstance(shape, Flat) or shape.sigma == 0:
        return 2.0 / (delta * gamma_q) * math.atan(delta / (2 * gamma_q))
    return _density_quad(lambda e: 1.0 / (e * e + gamma_q ** 2), delta, gamma_q, shape,
                         "self-energy integral")


def odd_part_second_moment(delta, gamma_q, shape: Shape = Flat()) -> float:
    """∫ p(ε) ε² / (ε² + Γ²)² dε, the per-qubit variance of the odd self-energy part."""
    check_positive("delta", delta)
    check_positive("gamma_q", gamma_q)
    if isinstance(shape, Flat) or shape.sigma == 0:
        h = 0.5 * delta
        return (math.atan(h / gamma_q) / gamma_q - h / (h * h + gamma_q ** 2)) / delta
    return _density_quad(lambda e: e * e / (e * e + gamma_q ** 2) ** 2, delta, gamma_q, shape,
                         "odd-part moment")


def mean_s21_finite_band(g, kappa, gamma_in, gamma_out, gamma_q, n_qubits, delta,
                         shape: Shape = Flat()) -> complex:
    """⟨S21⟩ closed form with π/Δ replaced by Γ·∫p(ε)dε/(ε²+Γ²)."""
    integral = self_energy_integral(delta, gamma_q, shape)
    return math.sqrt(gamma_in * gamma_out) * (-1j) / (kappa + g ** 2 * gamma_q * n_qubits * integral)


def var_s21_first_order(g, kappa, gamma_in, gamma_out, gamma_q, n_qubits, delta,
                        shape: Shape = Flat()) -> float:
    """First-order ⟨|ΔS21|²⟩ keeping fluctuations of both self-energy parts.

    The random self-energy term per qubit is g²/(Γ + iδε); its variance is
    g⁴(I − Γ²I²) with I the self-energy integral.
    """
    check_positive("gamma_q", gamma_q)
    integral = self_energy_integral(delta, gamma_q, shape)
    x = kappa + g ** 2 * gamma_q * n_qubits * integral
    per_qubit = integral - (gamma_q * integral) ** 2
    return gamma_in * gamma_out * n_qubits * g ** 4 * per_qubit / x ** 4


def _laplace_char(t, g, gamma_q, delta):
    """E[exp(−t g²/(Γ + iδε))] for flat δε, vectorized over t."""
    half = 0.5 * delta
    inner = np.geomspace(1e-4 * min(gamma_q, half), half, 160)
    edges = np.concatenate((-inner[::-1], [0.0], inner))
    x, w = np.polynomial.legendre.leggauss(24)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    z = g ** 2 / (gamma_q + 1j * nodes)
    t = np.atleast_1d(t)[:, None]
    return (np.exp(-t * z) @ weights) / delta


def mean_s21_exact(g, kappa, gamma_in, gamma_out, gamma_q, n_qubits, delta) -> complex:
    """Exact finite-N ⟨S21⟩ at ω = ν_c for flat disorder.

    With W = κ + Σ_j g²/(Γ + iδε_j) (Re W > 0) one has S21 = −i√(γ_in γ_out)/W and
    1/W = ∫₀^∞ e^{−tW} dt, so ⟨1/W⟩ = ∫₀^∞ e^{−tκ} φ(t)^N dt with φ the
    single-qubit characteristic function. Both integrals are done by quadrature.
    """
    check_positive("delta", delta)
    check_positive("gamma_q", gamma_q)
    n_qubits = check_int("n_qubits", n_qubits, minimum=0)
    scale = kappa + g ** 2 * gamma_q * n_qubits * self_energy_integral(delta, gamma_q)

    def f(u, part):
        t = u / scale
        val = np.exp(-t * kappa) * _laplace_char(t, g, gamma_q, delta)[0] ** n_qubits
        return val.real if part == 0 else val.imag

    re, _ = integrate.quad(f, 0, np.inf, args=(0,), limit=400, epsrel=1e-10)
    im, _ = integrate.quad(f, 0, np.inf, args=(1,), limit=400, epsrel=1e-10)
    inv_w = complex(re, im) / scale
    return math.sqrt(gamma_in * gamma_out) * (-1j) * inv_w
