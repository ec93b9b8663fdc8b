"""Scaling-law fits, background correction and residual diagnostics.

The fitting routines are scikit-learn style regressors (``fit``/``predict``,
``get_params``) so they can be cloned, grid-searched or dropped into pipelines.
The function API (:func:`fit_power_law`, :func:`fit_meso_scaling`, ...) wraps them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_float_vector, check_positive, check_same_length
from .disorder import DisorderSpec, EnsembleStats, self_energy_integral
from .exceptions import ConfigError, NumericalError

MAX_ITERATIONS = 500
JACOBIAN_STEP = 1e-6


@dataclass(frozen=True)
class PowerLawFit:
    amplitude: float
    exponent: float
    amplitude_stderr: float
    exponent_stderr: float
    residual_norm: float


@dataclass(frozen=True)
class MesoFitReport:
    gamma_exp: float
    beta_exp: float
    delta_exp: float
    c1: complex
    c2: float
    a: complex
    b: float
    stderrs: dict = field(default_factory=dict)
    residual_norm: float = 0.0


@dataclass(frozen=True)
class ResidualStats:
    mean: float
    std: float
    counts: np.ndarray
    bin_edges: np.ndarray

    @property
    def histogram(self):
        return self.counts, self.bin_edges


def _nq_delta(X):
    X = check_array(X, ensure_2d=True, dtype=float)
    if X.shape[1] != 2:
        raise ConfigError("X must have two columns: qubit number N and spread Δ")
    if np.any(X[:, 1] <= 0):
        raise ConfigError("spreads Δ must be positive")
    return X[:, 0], X[:, 1]


def _solve(residuals, p0, bounds=(-np.inf, np.inf), what="fit"):
    res = optimize.least_squares(
        residuals, p0, jac="3-point", diff_step=JACOBIAN_STEP, method="trf",
        bounds=bounds, x_scale="jac", max_nfev=MAX_ITERATIONS,
        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if res.status == 0:
        raise NumericalError(
            f"{what} did not converge in {MAX_ITERATIONS} iterations "
            f"(best cost {res.cost:.3e} at {res.x.tolist()})", best=res)
    return res


def _covariance(res):
    m, p = res.fun.size, res.x.size
    dof = max(m - p, 1)
    s2 = 2.0 * res.cost / dof
    jtj = res.jac.T @ res.jac
    try:
        return np.linalg.inv(jtj) * s2
    except np.linalg.LinAlgError:
        return np.linalg.pinv(jtj) * s2


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """y = amplitude · N^exponent by ordinary least squares in log-log space."""

    def fit(self, X, y):
        n = as_float_vector("N", np.ravel(np.asarray(X, dtype=float)))
        y = as_float_vector("y", y)
        check_same_length(N=n, y=y)
        if n.size < 3:
            raise ConfigError("power-law fit needs at least 3 points")
        if np.any(y <= 0):
            raise ConfigError("power-law fit needs strictly positive y")
        if np.any(n < 1):
            raise ConfigError("power-law fit needs N >= 1")
        A = np.column_stack([np.ones_like(n), np.log(n)])
        ly = np.log(y)
        coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
        resid = ly - A @ coef
        rss = float(resid @ resid)
        cov = np.linalg.inv(A.T @ A) * (rss / (n.size - 2))
        self.intercept_, self.exponent_ = float(coef[0]), float(coef[1])
        self.amplitude_ = math.exp(self.intercept_)
        self.exponent_stderr_ = math.sqrt(max(cov[1, 1], 0.0))
        self.amplitude_stderr_ = self.amplitude_ * math.sqrt(max(cov[0, 0], 0.0))
        self.residual_norm_ = math.sqrt(rss)
        return self

    def predict(self, X):
        check_is_fitted(self, "exponent_")
        n = np.ravel(np.asarray(X, dtype=float))
        return self.amplitude_ * n ** self.exponent_

    def to_result(self) -> PowerLawFit:
        check_is_fitted(self, "exponent_")
        return PowerLawFit(self.amplitude_, self.exponent_, self.amplitude_stderr_,
                           self.exponent_stderr_, self.residual_norm_)


class MeanTransmissionRegressor(RegressorMixin, BaseEstimator):
    """⟨S21⟩ = a·e^{iθ}/(κ + πg²N/Δ)^γ + c1, fitted to complex cell means.

    ``X`` holds (N, Δ) rows; ``y`` is complex. Residuals are the stacked real and
    imaginary parts, so the background c1 is recovered with its phase. With
    ``fit_background=False`` c1 is held at zero.
    """

    def __init__(self, g=42.0, kappa=30.0, gamma_init=1.0, fit_background=True):
        self.g = g
        self.kappa = kappa
        self.gamma_init = gamma_init
        self.fit_background = fit_background

    def _x(self, X):
        n, d = _nq_delta(X)
        return self.kappa + math.pi * self.g ** 2 * n / d

    def _model(self, p, x):
        log_a, theta, gam, c1r, c1i = p if len(p) == 5 else (*p, 0.0, 0.0)
        return np.exp(log_a + 1j * theta) * x ** (-gam) + complex(c1r, c1i)

    def fit(self, X, y, sample_weight=None):
        x = self._x(X)
        y = np.asarray(y, dtype=complex).ravel()
        if y.size != x.size:
            raise ConfigError("X and y lengths differ")
        w = np.ones_like(x) if sample_weight is None else np.sqrt(np.asarray(sample_weight, float))
        scale = float(np.max(np.abs(y - y.mean()))) or 1.0
        lo, hi = int(np.argmin(x)), int(np.argmax(x))
        g0 = float(self.gamma_init)
        du = x[lo] ** -g0 - x[hi] ** -g0
        step = y[lo] - y[hi]
        a0 = abs(step) / du if du > 0 and step != 0 else scale * x[lo] ** g0
        theta0 = float(np.angle(step)) if step != 0 else -math.pi / 2
        c10 = y[hi] - a0 * np.exp(1j * theta0) * x[hi] ** -g0
        p0 = np.array([math.log(a0), theta0, g0, c10.real, c10.imag])
        if not self.fit_background:
            p0 = p0[:3]

        def resid(p):
            r = (self._model(p, x) - y) * w / scale
            return np.concatenate([r.real, r.imag])

        res = _solve(resid, p0, what="mean-transmission fit")
        cov = _covariance(res)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
        if not self.fit_background:
            se = np.concatenate([se, [0.0, 0.0]])
        log_a, theta, gam, c1r, c1i = res.x if res.x.size == 5 else (*res.x, 0.0, 0.0)
        self.a_ = complex(np.exp(log_a + 1j * theta))
        self.gamma_exp_ = float(gam)
        self.c1_ = complex(c1r, c1i)
        self.stderrs_ = {"a": abs(self.a_) * se[0], "theta": se[1], "gamma": se[2],
                         "c1": math.hypot(se[3], se[4])}
        self.residual_norm_ = float(np.linalg.norm(res.fun) * scale)
        self.optimizer_result_ = res
        return self

    def predict(self, X):
        check_is_fitted(self, "gamma_exp_")
        return self.a_ * self._x(X) ** (-self.gamma_exp_) + self.c1_


class FluctuationRegressor(RegressorMixin, BaseEstimator):
    """⟨|ΔS21|²⟩ = b·(N/Δ)^β/(κ + πg²N/Δ)^δ + c2 with c2 ≥ 0 (or c2 = 0 when
    ``fit_background`` is off)."""

    def __init__(self, g=42.0, kappa=30.0, beta_init=1.0, delta_init=4.0, fit_background=True):
        self.g = g
        self.kappa = kappa
        self.beta_init = beta_init
        self.delta_init = delta_init
        self.fit_background = fit_background

    def _terms(self, X):
        n, d = _nq_delta(X)
        r = n / d
        return r, self.kappa + math.pi * self.g ** 2 * r

    @staticmethod
    def _model(p, r, x):
        log_b, beta, delta, c2 = p if len(p) == 4 else (*p, 0.0)
        return np.exp(log_b + beta * np.log(r) - delta * np.log(x)) + c2

    def fit(self, X, y, sample_weight=None):
        r, x = self._terms(X)
        y = as_float_vector("y", np.ravel(y))
        check_same_length(X=r, y=y)
        w = np.ones_like(y) if sample_weight is None else np.sqrt(np.asarray(sample_weight, float))
        scale = float(np.max(np.abs(y))) or 1.0
        b0, d0 = float(self.beta_init), float(self.delta_init)
        c20 = 0.5 * float(np.min(y)) if np.min(y) > 0 and self.fit_background else 0.0
        lo, hi = int(np.argmin(r)), int(np.argmax(r))
        shape = np.exp(b0 * np.log(r) - d0 * np.log(x))
        amp = [(y[i] - c20) / shape[i] for i in (lo, hi) if y[i] > c20]
        log_b0 = float(np.mean(np.log(amp))) if amp else math.log(scale / shape.max())
        p0 = np.array([log_b0, b0, d0, c20])

        def resid(p):
            return (self._model(p, r, x) - y) * w / scale

        if self.fit_background:
            bounds = ([-np.inf, -np.inf, -np.inf, 0.0], [np.inf] * 4)
        else:
            p0, bounds = p0[:3], (-np.inf, np.inf)
        res = _solve(resid, p0, bounds=bounds, what="fluctuation fit")
        cov = _covariance(res)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
        if not self.fit_background:
            se = np.concatenate([se, [0.0]])
        log_b, beta, delta, c2 = res.x if res.x.size == 4 else (*res.x, 0.0)
        self.b_ = float(np.exp(log_b))
        self.beta_exp_, self.delta_exp_, self.c2_ = float(beta), float(delta), float(c2)
        self.stderrs_ = {"b": self.b_ * se[0], "beta": se[1], "delta": se[2], "c2": se[3]}
        self.residual_norm_ = float(np.linalg.norm(res.fun) * scale)
        self.optimizer_result_ = res
        return self

    def predict(self, X):
        check_is_fitted(self, "delta_exp_")
        r, x = self._terms(X)
        return self._model([math.log(self.b_), self.beta_exp_, self.delta_exp_, self.c2_], r, x)


def fit_power_law(points) -> PowerLawFit:
    """Fit y = amplitude·N^exponent to ``(N, y)`` pairs."""
    pts = list(points)
    if len(pts) < 3:
        raise ConfigError("power-law fit needs at least 3 points")
    n, y = zip(*pts)
    return PowerLawRegressor().fit(np.asarray(n, float), np.asarray(y, float)).to_result()


def _stats_arrays(stats: Sequence[EnsembleStats]):
    X = np.array([[s.n_qubits, s.spread_delta] for s in stats], dtype=float)
    mean = np.array([s.mean_s21 for s in stats], dtype=complex)
    var = np.array([s.var_s21 for s in stats], dtype=float)
    se_m = np.array([s.std_error_mean for s in stats], dtype=float)
    se_v = np.array([s.std_error_var for s in stats], dtype=float)
    return X, mean, var, se_m, se_v


def _inverse_variance(se):
    se = np.asarray(se, float)
    floor = np.median(se[se > 0]) * 1e-3 if np.any(se > 0) else 1.0
    return 1.0 / np.maximum(se, floor) ** 2


def fit_meso_scaling(stats: Sequence[EnsembleStats], *, g: float, kappa: float,
                     weighted: bool = False, fit_background: bool = True) -> MesoFitReport:
    """Fit the mean-transmission and fluctuation scaling forms across (N, Δ) cells.

    The two fits are independent; one (c1, c2) pair is shared by all Δ curves.
    With ``weighted=True`` residuals carry inverse-variance weights from the
    cells' jackknife standard errors. ``fit_background=False`` pins c1 = c2 = 0,
    for data that were already corrected with :func:`subtract_background`.
    """
    stats = list(stats)
    if len(stats) < 6:
        raise ConfigError(f"meso fit needs at least 6 (N, Δ) cells, got {len(stats)}")
    X, mean, var, se_m, se_v = _stats_arrays(stats)
    ratio = X[:, 0] / X[:, 1]
    if ratio.min() <= 0 or ratio.max() / ratio.min() < 10:
        raise ConfigError("meso fit needs N/Δ cells spanning at least one decade")
    w_m = _inverse_variance(se_m) if weighted else None
    w_v = _inverse_variance(se_v) if weighted else None
    mt = MeanTransmissionRegressor(g=g, kappa=kappa, fit_background=fit_background).fit(
        X, mean, sample_weight=w_m)
    fl = FluctuationRegressor(g=g, kappa=kappa, fit_background=fit_background).fit(
        X, var, sample_weight=w_v)
    stderrs = {"gamma": mt.stderrs_["gamma"], "a": mt.stderrs_["a"], "c1": mt.stderrs_["c1"],
               "beta": fl.stderrs_["beta"], "delta": fl.stderrs_["delta"],
               "b": fl.stderrs_["b"], "c2": fl.stderrs_["c2"]}
    return MesoFitReport(
        gamma_exp=mt.gamma_exp_, beta_exp=fl.beta_exp_, delta_exp=fl.delta_exp_,
        c1=mt.c1_, c2=fl.c2_, a=mt.a_, b=fl.b_, stderrs=stderrs,
        residual_norm=math.hypot(mt.residual_norm_, fl.residual_norm_))


def subtract_background(stats: Sequence[EnsembleStats], c1: complex = 0j,
                        c2: float = 0.0) -> list[EnsembleStats]:
    """Remove one constant background pair from every cell; variances are clamped at 0."""
    return [replace(s, mean_s21=complex(s.mean_s21) - complex(c1),
                    var_s21=max(float(s.var_s21) - float(c2), 0.0)) for s in stats]


def effective_delta(spec: DisorderSpec, gamma_q: float) -> float:
    """Flat width whose infinite-band integral π/(ΔΓ) equals the actual self-energy integral."""
    check_positive("gamma_q", gamma_q)
    integral = self_energy_integral(spec.spread_delta, gamma_q, spec.shape)
    if integral <= 0:
        raise NumericalError(f"self-energy integral must be positive, got {integral}")
    return math.pi / (gamma_q * integral)


def residual_stats(measured, predicted, bin_width: float = 5.0) -> ResidualStats:
    """Mean, sample standard deviation and a zero-centred histogram of residuals."""
    m = as_float_vector("measured", measured)
    p = as_float_vector("predicted", predicted)
    if m.size != p.size:
        raise ConfigError(f"length mismatch: {m.size} measured vs {p.size} predicted")
    if m.size < 2:
        raise ConfigError("residual statistics need at least two points")
    r = m - p
    half = 0.5 * bin_width
    k = max(1, int(math.ceil((float(np.max(np.abs(r))) - half) / bin_width)) + 1)
    edges = (np.arange(-k, k + 2) - 0.5) * bin_width
    counts, _ = np.histogram(r, bins=edges)
    return ResidualStats(float(r.mean()), float(r.std(ddof=1)), counts, edges)
