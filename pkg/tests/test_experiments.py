import math

import numpy as np
import pytest
from scipy.signal import find_peaks

from qmeta.config import default_config
from qmeta.exceptions import ConfigError
from qmeta.experiments import (dark_line_slopes, interior_peaks, run_experiment,
                               run_center_sweep, run_meso_fluctuations, run_rabi_scaling,
                               run_realization_spectra, track_dark_lines, write_results,
                               _disordered_system, center_sweep_realization)
from qmeta.io import load_table


def test_rabi_single_n_skips_fit():
    t = run_rabi_scaling(default_config("rabi-scaling", n_range=[1]))
    assert len(t) == 1
    assert t.metadata["fits"] == [] and "skipped" in t.metadata["notice"]


def test_rabi_spectral_tracks_analytic():
    cfg = default_config("rabi-scaling", n_range=[3, 6, 12], qubits={"remove_parked": True})
    t = run_rabi_scaling(cfg)
    np.testing.assert_allclose(t.column("splitting_spectral"), t.column("splitting_analytic"),
                               rtol=0.02)
    fit = t.metadata["fits"][0]
    assert fit["exponent"] == pytest.approx(0.5, abs=0.01)


def test_rabi_parked_qubits_stay_out_of_the_way():
    parked = run_rabi_scaling(default_config("rabi-scaling", n_range=[4]))
    removed = run_rabi_scaling(default_config("rabi-scaling", n_range=[4],
                                              qubits={"remove_parked": True}))
    a, b = parked.column("splitting_spectral")[0], removed.column("splitting_spectral")[0]
    assert a == pytest.approx(b, rel=0.03)


def test_rabi_coarse_grid_names_resolution():
    with pytest.raises(ConfigError, match="step of at most"):
        run_rabi_scaling(default_config("rabi-scaling", n_range=[3], grid={"points": 41}))


def test_spectra_zero_spread_identical():
    cfg = default_config("spectra", delta_range=[1e-9], grid={"points": 801},
                         spectra={"realizations": 3})
    tabs = run_realization_spectra(cfg)
    assert len(tabs) == 3
    cols = [t.column("s21_abs") for t in tabs]
    np.testing.assert_allclose(cols[1], cols[0], rtol=1e-9)
    np.testing.assert_allclose(cols[2], cols[0], rtol=1e-9)


def test_spectra_distinct_realizations_and_peaks():
    cfg = default_config("spectra", delta_range=[120.0], grid={"points": 2001})
    tabs = run_realization_spectra(cfg)
    eps = [tuple(t.metadata["epsilons"]) for t in tabs]
    assert len(set(eps)) == 3
    for t in tabs:
        eig = np.array(t.metadata["eigenvalues"])
        system = _disordered_system(cfg, np.array(t.metadata["epsilons"]))
        peaks = interior_peaks(system, cfg.grid, min(t.metadata["epsilons"]),
                               max(t.metadata["epsilons"]))
        assert len(peaks) > 0
        tol = max(1.0, cfg.grid.step)
        assert all(np.min(np.abs(eig - p)) <= tol for p in peaks)


def test_spectra_noise_knob_is_seeded():
    cfg = default_config("spectra", delta_range=[50.0], grid={"points": 801},
                         spectra={"realizations": 1, "noise_std": 1e-3})
    a, b = run_realization_spectra(cfg)[0], run_realization_spectra(cfg)[0]
    assert a.rows == b.rows
    clean = run_realization_spectra(cfg.replace(spectra={**cfg.canonical["spectra"],
                                                         "noise_std": 0.0}))[0]
    d = a.column("s21_re") - clean.column("s21_re")
    assert d.std() == pytest.approx(1e-3 / math.sqrt(2), rel=0.15)


def test_spectra_grid_must_cover_band():
    with pytest.raises(ConfigError, match="cover"):
        run_realization_spectra(default_config("spectra", grid={"half_span": 50.0}))


def test_meso_small_run():
    cfg = default_config("meso", n_range=[3, 17], delta_range=[20.0, 120.0], n_realizations=200)
    t = run_meso_fluctuations(cfg)
    assert len(t) == 4
    assert "fit_skipped" in t.metadata
    flags = dict(zip(zip(t.column("n_qubits"), t.column("delta")), t.column("thermodynamic")))
    assert flags[(17, 20.0)] == 1 and flags[(3, 120.0)] == 0
    assert np.all(t.column("se_mean") > 0)


def test_meso_fit_and_collapse():
    cfg = default_config("meso", n_range=[3, 6, 10, 17], delta_range=[20.0, 60.0, 120.0],
                         n_realizations=300)
    t = run_meso_fluctuations(cfg)
    fit = t.metadata["fit"]
    assert abs(fit["gamma_exp"] - 1) < 0.2
    assert t.metadata["collapse_r2"] > 0.99


def test_center_sweep_zero_width():
    cfg = default_config("center-sweep", center_sweep={"delta": 1e-9, "offset_points": 5},
                         grid={"points": 1201})
    real = center_sweep_realization(cfg)
    system = _disordered_system(cfg, real.epsilons)
    assert track_dark_lines(system, [-10.0, 0.0, 10.0]) == []
    t = run_center_sweep(cfg)
    assert t.metadata["dark_line_slopes"] == []
    # each spectrum shows only the two bright polaritons
    off = t.column("center_offset")
    for o in np.unique(off):
        mag = t.column("s21_abs")[off == o]
        assert len(find_peaks(mag, prominence=1e-3 * mag.max())[0]) == 2


def test_center_sweep_slopes():
    cfg = default_config("center-sweep", center_sweep={"offset_points": 11},
                         grid={"points": 801})
    slopes = run_center_sweep(cfg).metadata["dark_line_slopes"]
    assert slopes
    assert all(abs(s - 1) <= 0.02 for _, s in slopes)


def test_dark_line_slope_filter():
    lines = [(0, np.arange(10.0), np.arange(10.0) + 5), (1, np.arange(2.0), np.arange(2.0))]
    assert dark_line_slopes(lines, n_offsets=10) == [(0, pytest.approx(1.0))]


def test_calibration_run_and_write(tmp_path):
    cfg = default_config("calibrate", calibration={"points": 20})
    tables = run_experiment(cfg)
    assert list(tables) == ["calibrate"]
    t = tables["calibrate"]
    assert t.metadata["converged"] and t.metadata["source"] == "synthetic"
    assert len(t) == 3 * 3 * 20
    paths = write_results(cfg, tables, tmp_path)
    assert (tmp_path / "config.yaml").exists()
    back = load_table(paths[0])
    assert back.rows == t.rows


def test_spectra_stems():
    cfg = default_config("spectra", delta_range=[20.0, 120.0], grid={"points": 2001},
                         spectra={"realizations": 2})
    assert sorted(run_experiment(cfg)) == ["spectrum_delta120_r0", "spectrum_delta120_r1",
                                           "spectrum_delta20_r0", "spectrum_delta20_r1"]
