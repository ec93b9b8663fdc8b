"""Disordered Tavis-Cummings metamaterial: transmission, disorder ensembles,
scaling-law fits and transmon calibration models.

Frequencies and rates are linear frequencies in MHz throughout.
"""
from ._version import __version__
from .calibration import (CalibrationResult, DeviceCalibrator, DeviceModel, DressedPair,
                          ExtendedModes, FluxMap, ReadoutSpec, TransmonSpec, bare_frequency,
                          bare_from_dressed, dressed_from_bare, extended_eigenfrequencies,
                          fit_device_parameters, flux_from_frequency, voltages_from_fluxes)
from .config import ExperimentConfig, build_config, default_config, load_config
from .disorder import (DisorderSpec, EnsembleStats, Flat, FlatPlusGaussianJitter, Realization,
                       crossover_n0, derive_seed, draw_realization, ensemble_average,
                       ensemble_transmissions, infinite_band_integral, mean_s21_analytic,
                       mean_s21_exact, mean_s21_finite_band, odd_part_second_moment,
                       relative_fluctuation_analytic, self_energy_integral, var_s21_analytic,
                       var_s21_first_order)
from .estimators import (FluctuationRegressor, MeanTransmissionRegressor, MesoFitReport,
                         PowerLawFit, PowerLawRegressor, ResidualStats, effective_delta,
                         fit_meso_scaling, fit_power_law, residual_stats, subtract_background)
from .exceptions import ConfigError, DataIOError, NumericalError, QmetaError
from .experiments import (run_calibration, run_center_sweep, run_experiment,
                          run_meso_fluctuations, run_rabi_scaling, run_realization_spectra)
from .io import ResultTable, load_table, save_table
from .model import (CavityParams, QubitParams, SingleExcitationOperator, SystemConfig,
                    bright_mode_frequencies, build_hamiltonian, rabi_splitting, to_mhz)
from .response import (ComplexSpectrum, ProbeGrid, photon_green_full, photon_green_selfenergy,
                       transmission, transmission_spectrum)
