"""Orchestration of the simulated experiments.

Each runner takes an :class:`~qmeta.config.ExperimentConfig` and returns
:class:`~qmeta.io.ResultTable` objects. Random streams are derived from the
master seed with fixed per-experiment tags, so every table depends only on the
canonical config and never on the thread count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import optimize, signal

from ._version import __version__
from .calibration import (DeviceModel, FluxMap, ReadoutSpec, TransmonSpec, coil_sweep,
                          fit_device_parameters, perturbed, synthetic_observations)
from .config import ExperimentConfig
from .disorder import (DisorderSpec, EnsembleStats, _generator, crossover_n0, derive_seed,
                       draw_realization, ensemble_average, mean_s21_analytic,
                       mean_s21_finite_band, var_s21_analytic, var_s21_first_order)
from .estimators import (fit_meso_scaling, fit_power_law, residual_stats,
                         subtract_background)
from .exceptions import ConfigError, DataIOError, NumericalError
from .io import ResultTable, read_observations, save_table
from .model import CavityParams, SystemConfig, build_hamiltonian, rabi_splitting
from .response import ProbeGrid, _self_energy_denominator, transmission_spectrum

TAG_RABI, TAG_SPECTRA, TAG_MESO, TAG_CENTER, TAG_CALIBRATION = 1, 2, 3, 4, 5


def _delta_key(delta: float) -> int:
    """Stream key of a spread: Δ in Hz, so equal spreads share streams across runs."""
    return int(round(float(delta) * 1e6))


def _ordered_map(fn, items, threads):
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def base_metadata(config: ExperimentConfig, **extra) -> dict:
    meta = {
        "experiment": config.experiment,
        "config_hash": config.hash,
        "seed": config.master_seed,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(extra)
    return meta


# -- spectral peak helpers -----------------------------------------------------

def _abs_s21(system: SystemConfig, f):
    cav = system.cavity
    den = _self_energy_denominator(cav.nu_c, cav.kappa, system.epsilons, system.gammas,
                                   system.couplings, f)
    return math.sqrt(cav.gamma_in * cav.gamma_out) / np.abs(den)


def refine_peak(system: SystemConfig, lo: float, hi: float) -> float:
    """Location of the |S21| maximum inside ``[lo, hi]`` (bounded scalar search)."""
    if system.cavity.gamma_in * system.cavity.gamma_out == 0:
        raise ConfigError("peak search needs nonzero gamma_in and gamma_out")
    res = optimize.minimize_scalar(lambda x: -float(_abs_s21(system, x)), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-9})
    return float(res.x)


def spectrum_peaks(system: SystemConfig, grid: ProbeGrid, refine: bool = True):
    """Local maxima of |S21| on ``grid``, optionally refined between neighbours.

    Returns ``(frequencies, heights)`` sorted by frequency.
    """
    f = grid.frequencies
    mag = _abs_s21(system, f)
    idx, _ = signal.find_peaks(mag)
    if not refine:
        return f[idx], mag[idx]
    freqs = np.array([refine_peak(system, f[i - 1], f[i + 1]) for i in idx])
    return freqs, _abs_s21(system, freqs) if freqs.size else np.array([])


def interior_peaks(system: SystemConfig, grid: ProbeGrid, lo: float, hi: float):
    """Refined |S21| maxima with frequencies inside ``[lo, hi]``."""
    freqs, _ = spectrum_peaks(system, grid)
    return freqs[(freqs >= lo) & (freqs <= hi)]


def bright_peak_splitting(system: SystemConfig, grid: ProbeGrid):
    """Half the distance between the two strongest |S21| maxima.

    Raises ConfigError when the grid cannot resolve them.
    """
    cav = system.cavity
    gam = float(np.mean(system.gammas)) if system.n_qubits else 0.0
    width = 0.5 * (cav.kappa + gam)
    need = max(width / 4, 1e-3)
    if grid.step > need:
        raise ConfigError(f"probe grid step {grid.step:.3g} MHz cannot resolve the bright "
                          f"peaks; use a step of at most {need:.3g} MHz")
    f = grid.frequencies
    mag = _abs_s21(system, f)
    idx, _ = signal.find_peaks(mag)
    if idx.size < 2:
        raise ConfigError(
            f"found {idx.size} spectral maxima; widen the grid beyond "
            f"[{f[0]:.1f}, {f[-1]:.1f}] MHz or refine it below {need:.3g} MHz")
    top = np.sort(idx[np.argsort(mag[idx])[-2:]])
    lo, hi = (refine_peak(system, f[i - 1], f[i + 1]) for i in top)
    return 0.5 * (hi - lo), lo, hi


# -- rabi-scaling --------------------------------------------------------------

def rabi_system(config: ExperimentConfig, n: int, trial: int = 0) -> SystemConfig:
    """Device with ``n`` qubits tuned to ν_c (with setting jitter) and the rest parked."""
    q = config.options["qubits"]
    cav = config.system.cavity
    jitter = config.options["rabi"]["jitter"]
    eps = np.full(n, cav.nu_c)
    if jitter > 0:
        rng = _generator(derive_seed(config.master_seed, TAG_RABI, trial, n))
        eps = eps + rng.normal(0.0, jitter, size=n)
    if not q["remove_parked"]:
        eps = np.concatenate([eps, np.full(q["n_total"] - n, cav.nu_c + q["park_offset"])])
    return SystemConfig.from_arrays(cav, eps, q["gamma"], q["g"])


def run_rabi_scaling(config: ExperimentConfig) -> ResultTable:
    """Bright-mode splitting versus N from simulated spectra, with power-law fits."""
    q = config.options["qubits"]
    trials = config.options["rabi"]["trials"]
    cav = config.system.cavity
    grid = config.grid
    work = [(t, n) for t in range(trials) for n in config.n_range]

    def one(item):
        t, n = item
        half, lo, hi = bright_peak_splitting(rabi_system(config, n, t), grid)
        ideal = SystemConfig.uniform(cav, n, gamma=q["gamma"], g=q["g"])
        return [t, n, half, rabi_splitting(ideal), lo, hi]

    rows = _ordered_map(one, work, config.threads)
    fits, notice = [], None
    if len(config.n_range) >= 3:
        for t in range(trials):
            pts = [(r[1], r[2]) for r in rows if r[0] == t]
            fit = fit_power_law(pts)
            fits.append({"trial": t, "amplitude": fit.amplitude, "exponent": fit.exponent,
                         "amplitude_stderr": fit.amplitude_stderr,
                         "exponent_stderr": fit.exponent_stderr,
                         "residual_norm": fit.residual_norm})
    else:
        notice = "power-law fit skipped: needs at least 3 qubit numbers"
    meta = base_metadata(config, fits=fits, g=q["g"], jitter=config.options["rabi"]["jitter"],
                         remove_parked=q["remove_parked"])
    if notice:
        meta["notice"] = notice
    cols = [("trial", "int"), ("n_qubits", "int"), ("splitting_spectral", "float"),
            ("splitting_analytic", "float"), ("lower_peak", "float"), ("upper_peak", "float")]
    return ResultTable(cols, rows, meta)


# -- realization spectra -------------------------------------------------------

def _cell_spec(config: ExperimentConfig, tag: int, delta: float) -> DisorderSpec:
    d = config.disorder
    return DisorderSpec(d.mean, float(delta), d.shape,
                        derive_seed(config.master_seed, tag, _delta_key(delta)))


def _disordered_system(config: ExperimentConfig, eps) -> SystemConfig:
    q = config.options["qubits"]
    return SystemConfig.from_arrays(config.system.cavity, eps, q["gamma"], q["g"])


def run_realization_spectra(config: ExperimentConfig) -> list[ResultTable]:
    """|S21| spectra of individual disorder realizations, one table per (Δ, realization)."""
    sp = config.options["spectra"]
    n = sp["n_qubits"]
    grid = config.grid
    g = config.options["qubits"]["g"]
    need = max(max(config.delta_range), 4 * abs(g) * math.sqrt(n))
    f = grid.frequencies
    if f[0] > config.disorder.mean - need or f[-1] < config.disorder.mean + need:
        raise ConfigError(f"probe grid must cover the ensemble mean ± {need:.1f} MHz")
    work = [(d, r) for d in config.delta_range for r in range(sp["realizations"])]

    def one(item):
        delta, r = item
        spec = _cell_spec(config, TAG_SPECTRA, delta)
        real = draw_realization(spec, n, r)
        system = _disordered_system(config, real.epsilons)
        s21 = transmission_spectrum(system, grid, realization_id=r).s21
        if sp["noise_std"] > 0:
            rng = _generator(derive_seed(spec.master_seed, n, r, 1))
            z = rng.normal(0.0, sp["noise_std"] / math.sqrt(2), size=(2, s21.size))
            s21 = s21 + z[0] + 1j * z[1]
        eig = np.linalg.eigvalsh(build_hamiltonian(system).hamiltonian())
        rows = [[fp, s.real, s.imag, abs(s)] for fp, s in zip(f, s21)]
        meta = base_metadata(config, delta=delta, realization=r, n_qubits=n,
                             derived_seed=real.derived_seed,
                             epsilons=real.epsilons.tolist(), eigenvalues=eig.tolist())
        cols = [("f_p", "float"), ("s21_re", "float"), ("s21_im", "float"),
                ("s21_abs", "float")]
        return ResultTable(cols, rows, meta)

    return _ordered_map(one, work, config.threads)


# -- mesoscopic fluctuations ---------------------------------------------------

MESO_COLUMNS = [
    ("n_qubits", "int"), ("delta", "float"), ("n_over_delta", "float"),
    ("n_realizations", "int"), ("mean_re", "float"), ("mean_im", "float"),
    ("var", "float"), ("se_mean", "float"), ("se_var", "float"),
    ("mean_closed_im", "float"), ("mean_finite_band_im", "float"),
    ("var_closed", "float"), ("var_first_order", "float"), ("thermodynamic", "int"),
    ("mean_corrected_re", "float"), ("mean_corrected_im", "float"),
    ("var_corrected", "float"),
]


def meso_cells(config: ExperimentConfig) -> list[EnsembleStats]:
    """Monte-Carlo statistics of S21(ν_c) for every (Δ, N) cell, Δ-major order."""
    q = config.options["qubits"]
    m = config.options["meso"]
    if q["gamma"] <= 0:
        raise ConfigError("mesoscopic runs need qubit relaxation gamma > 0")
    template = SystemConfig.uniform(config.system.cavity, 1, gamma=q["gamma"], g=q["g"])
    out = []
    for delta in config.delta_range:
        spec = _cell_spec(config, TAG_MESO, delta)
        for n in config.n_range:
            out.append(ensemble_average(
                template, spec, n, config.n_realizations, threads=config.threads,
                background_c1=complex(*m["background_c1"]), noise_var=m["noise_var"]))
    return out


def collapse_r2(stats) -> float:
    """R² of a straight-line fit of |1/⟨S21⟩| against N/Δ."""
    x = np.array([s.n_over_delta for s in stats])
    y = np.array([abs(1.0 / s.mean_s21) for s in stats])
    coef = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - np.polyval(coef, x)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def report_dict(report) -> dict:
    return {"gamma_exp": report.gamma_exp, "beta_exp": report.beta_exp,
            "delta_exp": report.delta_exp, "c1": [report.c1.real, report.c1.imag],
            "c2": report.c2, "a": [report.a.real, report.a.imag], "b": report.b,
            "stderrs": dict(report.stderrs), "residual_norm": report.residual_norm}


def meso_table(config_like: dict, stats, corrected, fit_meta) -> ResultTable:
    g, kappa, gq = config_like["g"], config_like["kappa"], config_like["gamma"]
    gin, gout = config_like["gamma_in"], config_like["gamma_out"]
    shape = config_like["shape"]
    n0 = crossover_n0(1.0, gq)            # N/Δ threshold 1/(2πΓ)
    rows = []
    for s, c in zip(stats, corrected):
        n, d = s.n_qubits, s.spread_delta
        rows.append([
            n, d, n / d, s.n_realizations, s.mean_s21.real, s.mean_s21.imag, s.var_s21,
            s.std_error_mean, s.std_error_var,
            mean_s21_analytic(g, kappa, gin, gout, n, d).imag,
            mean_s21_finite_band(g, kappa, gin, gout, gq, n, d, shape).imag,
            var_s21_analytic(g, kappa, gin, gout, gq, n, d),
            var_s21_first_order(g, kappa, gin, gout, gq, n, d, shape),
            int(n / d > n0), c.mean_s21.real, c.mean_s21.imag, c.var_s21])
    return ResultTable(MESO_COLUMNS, rows, fit_meta)


def fit_meso_stats(stats, g, kappa, weighted):
    """Fit, subtract the fitted background and measure the collapse; never raises
    for unmet fit preconditions (they are reported instead)."""
    try:
        report = fit_meso_scaling(stats, g=g, kappa=kappa, weighted=weighted)
    except ConfigError as exc:
        return None, list(stats), {"fit_skipped": str(exc)}
    corrected = subtract_background(stats, report.c1, report.c2)
    return report, corrected, {"fit": report_dict(report),
                               "collapse_r2": collapse_r2(corrected)}


def run_meso_fluctuations(config: ExperimentConfig) -> ResultTable:
    """Ensemble statistics per (N, Δ) cell, closed-form columns and the scaling fit."""
    q = config.options["qubits"]
    m = config.options["meso"]
    cav = config.system.cavity
    stats = meso_cells(config)
    if m["fit"]:
        _, corrected, fit_meta = fit_meso_stats(stats, q["g"], cav.kappa, m["weighted"])
    else:
        corrected, fit_meta = stats, {"fit_skipped": "disabled by meso.fit"}
    params = {"g": q["g"], "kappa": cav.kappa, "gamma": q["gamma"],
              "gamma_in": cav.gamma_in, "gamma_out": cav.gamma_out,
              "shape": config.disorder.shape}
    meta = base_metadata(config, g=q["g"], kappa=cav.kappa, gamma_q=q["gamma"],
                         gamma_in=cav.gamma_in, gamma_out=cav.gamma_out,
                         weighted=m["weighted"], shape=config.disorder.shape.name,
                         sigma=config.disorder.sigma, **fit_meta)
    return meso_table(params, stats, corrected, meta)


def stats_from_table(table: ResultTable) -> list[EnsembleStats]:
    cols = {n: table.column(n) for n in ("n_qubits", "delta", "n_realizations", "mean_re",
                                         "mean_im", "var", "se_mean", "se_var")}
    return [EnsembleStats(int(cols["n_qubits"][i]), float(cols["delta"][i]),
                          int(cols["n_realizations"][i]),
                          complex(cols["mean_re"][i], cols["mean_im"][i]),
                          float(cols["var"][i]), float(cols["se_mean"][i]),
                          float(cols["se_var"][i]))
            for i in range(len(table))]


# -- centre sweep --------------------------------------------------------------

def center_sweep_realization(config: ExperimentConfig):
    cs = config.options["center_sweep"]
    spec = _cell_spec(config, TAG_CENTER, cs["delta"])
    return draw_realization(spec, cs["n_qubits"], cs["realization"])


def track_dark_lines(system: SystemConfig, offsets, min_gap: float | None = None,
                     points: int = 64):
    """Follow the interior |S21| maximum in each gap between neighbouring qubits.

    For an arrow-shaped Hamiltonian exactly one eigenvalue lies between two
    consecutive qubit frequencies, so each gap carries one dark line. Gaps
    narrower than ``min_gap`` (default 4Γ) are skipped. Returns a list of
    ``(gap index, offsets used, peak frequencies)``.
    """
    eps = np.sort(system.epsilons)
    gam = float(np.max(system.gammas)) if system.n_qubits else 0.0
    min_gap = 4 * max(gam, 1e-3) if min_gap is None else min_gap
    lines = []
    for k in range(eps.size - 1):
        a, b = eps[k], eps[k + 1]
        if b - a < min_gap:
            continue
        used, peaks = [], []
        for off in offsets:
            shifted = system.with_epsilons(system.epsilons + off)
            x = np.linspace(a + off, b + off, points)[1:-1]
            mag = _abs_s21(shifted, x)
            i = int(np.argmax(mag))
            if i == 0 or i == x.size - 1:
                continue                      # no interior maximum in this gap
            peaks.append(refine_peak(shifted, x[i - 1], x[i + 1]))
            used.append(off)
        lines.append((k, np.array(used), np.array(peaks)))
    return lines


def dark_line_slopes(lines, min_fraction: float = 0.8, n_offsets: int | None = None):
    out = []
    for k, off, pk in lines:
        total = n_offsets or off.size
        if off.size >= max(3, int(math.ceil(min_fraction * total))):
            out.append((k, float(np.polyfit(off, pk, 1)[0])))
    return out


def run_center_sweep(config: ExperimentConfig) -> ResultTable:
    """Spectra of one fixed realization while the ensemble centre is swept rigidly."""
    cs = config.options["center_sweep"]
    real = center_sweep_realization(config)
    system = _disordered_system(config, real.epsilons)
    offsets = np.linspace(cs["offset_min"], cs["offset_max"], cs["offset_points"])
    grid = config.grid

    def one(off):
        s = transmission_spectrum(system.with_epsilons(real.epsilons + off), grid).s21
        return [[off, fp, v.real, v.imag, abs(v)] for fp, v in zip(grid.frequencies, s)]

    blocks = _ordered_map(one, offsets, config.threads)
    rows = [r for blk in blocks for r in blk]
    slopes = dark_line_slopes(track_dark_lines(system, offsets), n_offsets=offsets.size)
    meta = base_metadata(config, n_qubits=cs["n_qubits"], delta=cs["delta"],
                         derived_seed=real.derived_seed, epsilons=real.epsilons.tolist(),
                         dark_line_slopes=[[k, s] for k, s in slopes])
    cols = [("center_offset", "float"), ("f_p", "float"), ("s21_re", "float"),
            ("s21_im", "float"), ("s21_abs", "float")]
    return ResultTable(cols, rows, meta)


# -- calibration round trip ----------------------------------------------------

def device_from_options(cal) -> DeviceModel:
    n = len(cal["ej1"])
    lists = {k: cal[k] for k in ("ej2", "ec", "offsets", "nu_ind", "k_ind", "k_common")}
    for k, v in lists.items():
        if len(v) != n:
            raise ConfigError(f"calibration.{k} has {len(v)} entries, expected {n}")
    L = np.asarray(cal["inductance"], dtype=float)
    if L.ndim != 2 or L.shape[0] != n:
        raise ConfigError(f"calibration.inductance must have {n} rows of equal length")
    trans = [TransmonSpec(a, b, c) for a, b, c in zip(cal["ej1"], cal["ej2"], cal["ec"])]
    reads = [ReadoutSpec(a, b, c) for a, b, c in zip(cal["nu_ind"], cal["k_ind"],
                                                     cal["k_common"])]
    return DeviceModel(trans, FluxMap(L, cal["offsets"]), reads, cal["nu_c"])


def device_dict(model: DeviceModel) -> dict:
    return {"ej1": [t.ej1 for t in model.transmons], "ej2": [t.ej2 for t in model.transmons],
            "ec": [t.ec for t in model.transmons],
            "inductance": model.flux_map.inductance.tolist(),
            "offsets": model.flux_map.offsets.tolist(),
            "nu_ind": [r.nu_ind for r in model.readouts],
            "k_ind": [r.k_ind for r in model.readouts],
            "k_common": [r.k_common for r in model.readouts], "nu_c": model.nu_c}


def run_calibration(config: ExperimentConfig) -> ResultTable:
    """Fit the device model to observations (synthetic unless a table is given)."""
    cal = config.options["calibration"]
    design = device_from_options(cal)
    free = tuple(cal["free"])
    rng = _generator(derive_seed(config.master_seed, TAG_CALIBRATION))
    if cal["observations"]:
        obs = read_observations(cal["observations"], design.flux_map.n_coils)
        initial, source = design, cal["observations"]
    else:
        v = coil_sweep(design.flux_map.n_coils, cal["v_min"], cal["v_max"], cal["points"])
        obs = synthetic_observations(design, v, cal["noise_std"], rng)
        initial, source = perturbed(design, free, cal["perturbation"], rng), "synthetic"
    try:
        result = fit_device_parameters(obs, initial, free, cal["drop_outliers"])
    except NumericalError as exc:
        if exc.best is None:
            raise
        result = exc.best
    pred = result.model.predict(np.array([o[0] for o in obs]), [o[1] for o in obs])
    rows = []
    for (v, qid, f), p, keep in zip(obs, pred, result.mask):
        rows.append([qid] + [float(x) for x in v] + [f, float(p), f - float(p), int(keep)])
    n_coils = design.flux_map.n_coils
    cols = ([("qubit", "int")] + [(f"v{c}", "float") for c in range(n_coils)] +
            [("frequency", "float"), ("predicted", "float"), ("residual", "float"),
             ("kept", "int")])
    rs = result.residuals
    meta = base_metadata(
        config, source=source, fitted=device_dict(result.model), free=list(free),
        initial=device_dict(initial), n_observations=result.n_observations,
        n_dropped=result.n_dropped, converged=result.converged,
        residual_mean=rs.mean, residual_std=rs.std,
        residual_histogram={"counts": rs.counts.tolist(), "edges": rs.bin_edges.tolist()})
    if source == "synthetic":
        meta["true"] = device_dict(design)
    return ResultTable(cols, rows, meta)


# -- dispatch ------------------------------------------------------------------

RUNNERS = {
    "rabi-scaling": run_rabi_scaling,
    "spectra": run_realization_spectra,
    "meso": run_meso_fluctuations,
    "center-sweep": run_center_sweep,
    "calibrate": run_calibration,
}


def run_experiment(config: ExperimentConfig) -> dict[str, ResultTable]:
    """Run ``config.experiment``; returns output stem → table."""
    out = RUNNERS[config.experiment](config)
    if isinstance(out, ResultTable):
        return {config.experiment.replace("-", "_"): out}
    names = {}
    for t in out:
        d = t.metadata["delta"]
        names[f"spectrum_delta{d:g}_r{t.metadata['realization']}"] = t
    return names


def write_results(config: ExperimentConfig, tables: dict, out_dir, fmt: str = "csv") -> list:
    """Write every table plus the canonical config copy; returns the paths written."""
    out = Path(out_dir)
    paths = [save_table(t, out / f"{stem}.{fmt}", fmt) for stem, t in tables.items()]
    cfg_path = out / "config.yaml"
    try:
        cfg_path.write_text(config.dump())
    except OSError as exc:
        raise DataIOError(f"cannot write {cfg_path}: {exc.strerror or exc}") from exc
    return paths + [cfg_path]
