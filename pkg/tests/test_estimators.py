import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from qmeta.disorder import (DisorderSpec, EnsembleStats, Flat, FlatPlusGaussianJitter,
                            mean_s21_analytic, var_s21_analytic)
from qmeta.estimators import (FluctuationRegressor, MeanTransmissionRegressor,
                              PowerLawRegressor, effective_delta, fit_meso_scaling,
                              fit_power_law, residual_stats, subtract_background)
from qmeta.exceptions import ConfigError
from qmeta.experiments import collapse_r2

from conftest import NU_C

G, KAPPA, GAMMA = 42.0, 30.0, 1.0
NS = range(3, 18, 2)
DELTAS = (20.0, 50.0, 120.0)


def synthetic_cells(c1=0j, c2=0.0, noise=0.0, rng=None):
    cells = []
    for d in DELTAS:
        for n in NS:
            m = mean_s21_analytic(G, KAPPA, 30.0, 30.0, n, d) + c1
            v = var_s21_analytic(G, KAPPA, 30.0, 30.0, GAMMA, n, d) + c2
            se_m, se_v = 1e-3 * abs(m), 1e-3 * v
            if noise:
                m = m * (1 + noise * rng.normal()) + 0j
                v = v * (1 + noise * rng.normal())
            cells.append(EnsembleStats(n, d, 1000, m, v, se_m, se_v))
    return cells


# -- power law ---------------------------------------------------------------------

def test_power_law_noiseless():
    fit = fit_power_law([(n, 42.0 * math.sqrt(n)) for n in range(3, 24)])
    assert fit.exponent == pytest.approx(0.5, abs=1e-12)
    assert fit.amplitude == pytest.approx(42.0, rel=1e-12)
    assert fit.exponent_stderr < 1e-10 and fit.amplitude_stderr < 1e-8


def test_power_law_with_noise(rng):
    n = np.arange(3, 24)
    y = 42.0 * np.sqrt(n) * (1 + 0.01 * rng.normal(size=n.size))
    fit = fit_power_law(zip(n, y))
    assert abs(fit.exponent - 0.5) <= 3 * fit.exponent_stderr
    assert fit.exponent_stderr > 0


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-2, 2), st.floats(1e-3, 1e3))
def test_power_law_scale_equivariance(a, alpha, c):
    n = np.arange(1, 12, dtype=float)
    y = a * n ** alpha * (1 + 0.1 * np.sin(n))
    f1 = fit_power_law(zip(n, y))
    f2 = fit_power_law(zip(n, c * y))
    assert f2.exponent == pytest.approx(f1.exponent, abs=1e-9)
    assert f2.amplitude == pytest.approx(c * f1.amplitude, rel=1e-9)


def test_power_law_preconditions():
    with pytest.raises(ConfigError, match="at least 3"):
        fit_power_law([(1, 1.0), (2, 2.0)])
    with pytest.raises(ConfigError, match="positive"):
        fit_power_law([(1, 1.0), (2, 0.0), (3, 2.0)])
    with pytest.raises(ConfigError, match="N >= 1"):
        fit_power_law([(0, 1.0), (2, 1.0), (3, 2.0)])


def test_power_law_regressor_is_sklearn():
    r = PowerLawRegressor()
    assert clone(r).get_params() == {}
    n = np.arange(2, 10, dtype=float)
    r.fit(n.reshape(-1, 1), 3 * n ** 0.7)
    np.testing.assert_allclose(r.predict(n), 3 * n ** 0.7, rtol=1e-12)
    assert r.score(n.reshape(-1, 1), 3 * n ** 0.7) == pytest.approx(1.0)


# -- meso fits -------------------------------------------------------------------------

def test_meso_noiseless_round_trip():
    rep = fit_meso_scaling(synthetic_cells(), g=G, kappa=KAPPA)
    assert rep.gamma_exp == pytest.approx(1.0, rel=1e-6)
    assert rep.beta_exp == pytest.approx(1.0, rel=1e-6)
    assert rep.delta_exp == pytest.approx(4.0, rel=1e-6)
    assert abs(rep.c1) < 1e-9 and rep.c2 < 1e-12
    assert rep.a == pytest.approx(-30j, rel=1e-6)


def test_meso_recovers_background():
    c1, c2 = 0.002 + 0.001j, 3e-6
    rep = fit_meso_scaling(synthetic_cells(c1, c2), g=G, kappa=KAPPA)
    assert rep.c1 == pytest.approx(c1, abs=1e-9)
    assert rep.c2 == pytest.approx(c2, rel=1e-4)
    assert rep.gamma_exp == pytest.approx(1.0, rel=1e-6)
    assert rep.delta_exp == pytest.approx(4.0, rel=1e-4)


def test_meso_weighted_noisy(rng):
    rep = fit_meso_scaling(synthetic_cells(noise=1e-3, rng=rng), g=G, kappa=KAPPA, weighted=True)
    assert abs(rep.gamma_exp - 1) < 0.05
    assert abs(rep.beta_exp - 1) < 0.1
    assert abs(rep.delta_exp - 4) < 0.2
    assert all(v >= 0 for v in rep.stderrs.values())


def test_meso_preconditions():
    cells = synthetic_cells()
    with pytest.raises(ConfigError, match="at least 6"):
        fit_meso_scaling(cells[:3], g=G, kappa=KAPPA)
    narrow = [c for c in cells if c.spread_delta == 50.0][:6]
    with pytest.raises(ConfigError, match="decade"):
        fit_meso_scaling(narrow, g=G, kappa=KAPPA)


def test_meso_regressors_clone():
    for est in (MeanTransmissionRegressor(g=1.0, kappa=2.0), FluctuationRegressor(delta_init=3.0)):
        c = clone(est)
        assert c.get_params() == est.get_params()


# -- background -----------------------------------------------------------------------

def test_subtract_background_identity_and_clamp():
    cells = synthetic_cells()
    assert subtract_background(cells) == cells
    out = subtract_background(cells, c2=1.0)
    assert all(c.var_s21 == 0.0 for c in out)
    shifted = subtract_background(cells, c1=0.5 + 0.5j)
    assert shifted[0].mean_s21 == cells[0].mean_s21 - (0.5 + 0.5j)


def test_background_collapse():
    c1 = 0.003 - 0.004j
    raw = synthetic_cells(c1)
    assert collapse_r2(raw) < 0.99
    assert collapse_r2(subtract_background(raw, c1)) > 0.999


def test_subtraction_improves_background_free_fit():
    c1, c2 = 0.0003 - 0.0004j, 2e-6
    raw = synthetic_cells(c1, c2)
    before = fit_meso_scaling(raw, g=G, kappa=KAPPA, fit_background=False)
    after = fit_meso_scaling(subtract_background(raw, c1, c2), g=G, kappa=KAPPA,
                             fit_background=False)
    assert abs(after.gamma_exp - 1) < abs(before.gamma_exp - 1)
    assert abs(after.delta_exp - 4) < abs(before.delta_exp - 4)


# -- effective Δ and residuals -----------------------------------------------------------

def test_effective_delta_values():
    # π/0.147113 = 21.3550, so 21.356 only holds to about 1e-3
    assert effective_delta(DisorderSpec(NU_C, 20.0), 1.0) == pytest.approx(21.356, abs=2e-3)
    assert effective_delta(DisorderSpec(NU_C, 20.0), 1.0) == pytest.approx(math.pi / 0.147113,
                                                                          rel=1e-5)
    d = effective_delta(DisorderSpec(NU_C, 400.0), 1.0)
    assert abs(d / 400.0 - 1) < 0.01
    assert effective_delta(DisorderSpec(NU_C, 20.0, FlatPlusGaussianJitter(20.0)), 1.0) > 20.0
    with pytest.raises(ConfigError):
        effective_delta(DisorderSpec(NU_C, 20.0), 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 500.0), st.floats(0.01, 20.0), st.floats(1.01, 3.0))
def test_effective_delta_monotone_in_gamma(delta, gamma, factor):
    spec = DisorderSpec(NU_C, delta, Flat())
    assert effective_delta(spec, gamma * factor) > effective_delta(spec, gamma)


def test_residual_stats(rng):
    x = rng.normal(size=50)
    s = residual_stats(x, x)
    assert s.std == 0.0 and s.mean == 0.0
    r = rng.normal(0, 20, size=10 ** 4)
    s = residual_stats(r, np.zeros_like(r))
    assert s.std == pytest.approx(20, abs=0.6)
    counts, edges = s.histogram
    assert counts.sum() == r.size
    np.testing.assert_allclose(np.diff(edges), 5.0)
    assert np.any(np.isclose(edges, -2.5)) and np.any(np.isclose(edges, 2.5))
    with pytest.raises(ConfigError):
        residual_stats([1.0, 2.0], [1.0])
    with pytest.raises(ConfigError):
        residual_stats([1.0], [1.0])
