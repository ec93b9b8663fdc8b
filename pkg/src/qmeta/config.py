"""Experiment configuration: YAML schema, validation and canonical form.

A config file is a nested mapping. Every key has a type and a default; unknown
keys, wrong types and a missing ``experiment`` are reported with the file path
and line. Frequencies may be given in MHz (plain numbers) or as strings with a
unit, e.g. ``nu_c: 5.755 GHz``.

The canonical form fills every default and converts frequencies to MHz. Its
SHA-256 identifies a run, and re-loading the canonical YAML reproduces it.
``threads`` and ``output`` do not change results and are kept out of it.
"""
from __future__ import annotations

import copy
import difflib
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping, Optional

import yaml

from .disorder import DisorderSpec, parse_shape
from .exceptions import ConfigError, DataIOError
from .model import CavityParams, SystemConfig, to_mhz
from .response import ProbeGrid

EXPERIMENTS = ("rabi-scaling", "spectra", "meso", "center-sweep", "calibrate")

DEFAULT_DELTAS = [20.0, 30.0, 50.0, 60.0, 70.0, 80.0, 120.0]


class _Field:
    def __init__(self, kind, default=None, choices=None, doc=""):
        self.kind = kind
        self.default = default
        self.choices = choices
        self.doc = doc


# kind is one of: int, float, freq, bool, str, opt-str, int-list, float-list,
# freq-list, matrix, pair, opt-freq, opt-int-list
SCHEMA: dict[str, Any] = {
    "experiment": _Field("str", None, EXPERIMENTS, "which experiment to run"),
    "seed": _Field("int", 0, doc="master seed (unsigned 64-bit)"),
    "threads": _Field("int", 1, doc="worker threads; does not change results"),
    "output": _Field("str", "results", doc="output directory"),
    "n_realizations": _Field("int", 1000, doc="disorder realizations per (N, Δ) cell"),
    "n_range": _Field("opt-int-list", None, doc="qubit numbers; default depends on experiment"),
    "delta_range": _Field("float-list", DEFAULT_DELTAS, doc="disorder spreads Δ in MHz"),
    "cavity": {
        "nu_c": _Field("freq", 5755.0),
        "kappa": _Field("freq", 30.0),
        "gamma_in": _Field("freq", 30.0),
        "gamma_out": _Field("freq", 30.0),
    },
    "qubits": {
        "gamma": _Field("freq", 1.0, doc="relaxation rate Γ"),
        "g": _Field("freq", 42.0, doc="cavity coupling"),
        "n_total": _Field("int", 25, doc="qubits on the device"),
        "park_offset": _Field("freq", -755.0, doc="detuning of unused qubits from ν_c"),
        "remove_parked": _Field("bool", False, doc="drop unused qubits instead of parking them"),
    },
    "disorder": {
        "shape": _Field("str", "flat", ("flat", "flat+gauss")),
        "sigma": _Field("freq", 0.0, doc="Gaussian setting jitter for flat+gauss"),
        "mean": _Field("opt-freq", None, doc="ensemble centre; default ν_c"),
    },
    "grid": {
        "center": _Field("opt-freq", None, doc="default ν_c"),
        "half_span": _Field("opt-freq", None, doc="default depends on experiment"),
        "points": _Field("int", 4001),
    },
    "rabi": {
        "jitter": _Field("freq", 0.0, doc="std of the frequency-setting error on tuned qubits"),
        "trials": _Field("int", 1),
    },
    "spectra": {
        "n_qubits": _Field("int", 17),
        "realizations": _Field("int", 3),
        "noise_std": _Field("float", 0.0, doc="additive complex Gaussian noise on S21"),
    },
    "meso": {
        "background_c1": _Field("pair", [0.0, 0.0], doc="[re, im] constant added to S21"),
        "noise_var": _Field("float", 0.0, doc="variance of additive complex noise"),
        "weighted": _Field("bool", False),
        "fit": _Field("bool", True),
    },
    "center_sweep": {
        "n_qubits": _Field("int", 17),
        "delta": _Field("freq", 120.0),
        "realization": _Field("int", 0),
        "offset_min": _Field("freq", -300.0),
        "offset_max": _Field("freq", 300.0),
        "offset_points": _Field("int", 61),
    },
    "calibration": {
        "ej1": _Field("freq-list", [20000.0, 21000.0, 19000.0]),
        "ej2": _Field("freq-list", [5000.0, 4500.0, 5500.0]),
        "ec": _Field("freq-list", [250.0, 240.0, 260.0]),
        "inductance": _Field("matrix", [[1.2, 0.08, -0.05], [0.06, 1.1, 0.07],
                                         [-0.04, 0.09, 1.3]]),
        "offsets": _Field("float-list", [0.1, -0.15, 0.05]),
        "nu_ind": _Field("freq-list", [7200.0, 7300.0, 7400.0]),
        "k_ind": _Field("float-list", [0.6, 0.62, 0.58]),
        "k_common": _Field("float-list", [0.55, 0.55, 0.55]),
        "nu_c": _Field("freq", 5755.0),
        "v_min": _Field("float", -1.2),
        "v_max": _Field("float", 1.2),
        "points": _Field("int", 70, doc="voltage points per coil"),
        "noise_std": _Field("float", 20.0),
        "perturbation": _Field("float", 0.03, doc="relative error of the initial guess"),
        "free": _Field("str-list", ["ej1", "ej2", "inductance", "offsets"]),
        "drop_outliers": _Field("bool", True),
        "observations": _Field("opt-str", None, doc="CSV of measured points; synthetic if absent"),
    },
}

_RUNTIME_ONLY = ("threads", "output")


def _where(source, lines, path):
    line = lines.get(path)
    loc = f"{source}:{line}" if line is not None else str(source)
    return loc


def _key_lines(node, prefix=(), out=None):
    """Map every mapping-key path to its 1-based line in the YAML source."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    return out


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _coerce(kind, value, name):
    """Convert ``value`` to the schema ``kind``; raise ConfigError with a short reason."""
    def bad(expected):
        raise ConfigError(f"{name}: expected {expected}, got {type(value).__name__} {value!r}")

    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            bad("an integer")
        return int(value)
    if kind == "float":
        if not _is_number(value):
            bad("a number")
        return float(value)
    if kind in ("freq", "opt-freq"):
        if value is None and kind == "opt-freq":
            return None
        if not (_is_number(value) or isinstance(value, str)):
            bad("a frequency (number in MHz or string with unit)")
        try:
            return to_mhz(value)
        except ConfigError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    if kind == "bool":
        if not isinstance(value, bool):
            bad("true or false")
        return value
    if kind in ("str", "opt-str"):
        if value is None and kind == "opt-str":
            return None
        if not isinstance(value, str):
            bad("a string")
        return value
    if kind in ("int-list", "opt-int-list"):
        if value is None and kind == "opt-int-list":
            return None
        if not isinstance(value, list):
            bad("a list of integers")
        return [_coerce("int", v, f"{name}[{i}]") for i, v in enumerate(value)]
    if kind == "float-list":
        if not isinstance(value, list):
            bad("a list of numbers")
        return [_coerce("float", v, f"{name}[{i}]") for i, v in enumerate(value)]
    if kind == "freq-list":
        if not isinstance(value, list):
            bad("a list of frequencies")
        return [_coerce("freq", v, f"{name}[{i}]") for i, v in enumerate(value)]
    if kind == "str-list":
        if not isinstance(value, list):
            bad("a list of strings")
        return [_coerce("str", v, f"{name}[{i}]") for i, v in enumerate(value)]
    if kind == "matrix":
        if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
            bad("a list of rows")
        return [_coerce("float-list", r, f"{name}[{i}]") for i, r in enumerate(value)]
    if kind == "pair":
        if not isinstance(value, list) or len(value) != 2:
            bad("a two-element list [re, im]")
        return [_coerce("float", v, f"{name}[{i}]") for i, v in enumerate(value)]
    raise AssertionError(kind)


def _unknown(key, valid, where, section):
    near = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.0)
    hint = f"; did you mean {near[0]!r}?" if near else ""
    scope = f" in section {section!r}" if section else ""
    return ConfigError(f"{where}: unknown key {key!r}{scope}{hint}")


def _defaults(schema):
    out = {}
    for k, f in schema.items():
        out[k] = _defaults(f) if isinstance(f, dict) else copy.deepcopy(f.default)
    return out


def _merge(schema, data, source, lines, prefix=()):
    if not isinstance(data, Mapping):
        where = _where(source, lines, prefix)
        raise ConfigError(f"{where}: section {'.'.join(prefix) or '<root>'} must be a mapping")
    out = {}
    for key, value in data.items():
        key = str(key)
        path = prefix + (key,)
        where = _where(source, lines, path)
        if key not in schema:
            raise _unknown(key, schema, where, ".".join(prefix))
        spec = schema[key]
        if isinstance(spec, dict):
            out[key] = _merge(spec, value if value is not None else {}, source, lines, path)
            continue
        try:
            v = _coerce(spec.kind, value, ".".join(path))
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        if spec.choices is not None and v not in spec.choices:
            raise ConfigError(f"{where}: {'.'.join(path)} must be one of {list(spec.choices)}, "
                              f"got {v!r}")
        out[key] = v
    return out


def _fill(schema, given):
    out = {}
    for key, spec in schema.items():
        if isinstance(spec, dict):
            out[key] = _fill(spec, given.get(key, {}))
        else:
            out[key] = copy.deepcopy(given[key]) if key in given else copy.deepcopy(spec.default)
    return out


def _resolve(cfg):
    """Replace experiment-dependent ``None`` defaults by concrete values."""
    exp = cfg["experiment"]
    nu_c = cfg["cavity"]["nu_c"]
    if cfg["n_range"] is None:
        cfg["n_range"] = list(range(3, 24)) if exp == "rabi-scaling" else list(range(3, 18))
    if cfg["disorder"]["mean"] is None:
        cfg["disorder"]["mean"] = nu_c
    if cfg["grid"]["center"] is None:
        cfg["grid"]["center"] = nu_c
    if cfg["grid"]["half_span"] is None:
        g = cfg["qubits"]["g"]
        if exp == "rabi-scaling":
            span = 1.5 * abs(g) * max(cfg["n_range"]) ** 0.5 + 3 * cfg["cavity"]["kappa"]
        elif exp == "spectra":
            n = cfg["spectra"]["n_qubits"]
            span = max(max(cfg["delta_range"]), 4 * abs(g) * n ** 0.5)
        elif exp == "center-sweep":
            cs = cfg["center_sweep"]
            span = max(abs(cs["offset_min"]), abs(cs["offset_max"])) + cs["delta"]
            span = max(span, 1.5 * abs(g) * cs["n_qubits"] ** 0.5) + 3 * cfg["cavity"]["kappa"]
        else:
            span = 400.0
        cfg["grid"]["half_span"] = float(span)
    return cfg


def _check_values(cfg):
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if not cfg["n_range"]:
        raise ConfigError("n_range must not be empty")
    if min(cfg["n_range"]) < 1:
        raise ConfigError("n_range entries must be >= 1")
    if not cfg["delta_range"] or min(cfg["delta_range"]) <= 0:
        raise ConfigError("delta_range must be a nonempty list of positive spreads")
    if cfg["grid"]["points"] < 2:
        raise ConfigError("grid.points must be >= 2")
    if cfg["grid"]["half_span"] <= 0:
        raise ConfigError("grid.half_span must be positive")
    if cfg["experiment"] == "meso" and cfg["n_realizations"] < 2:
        raise ConfigError("n_realizations must be >= 2 for variances")
    if cfg["experiment"] == "rabi-scaling":
        if max(cfg["n_range"]) > cfg["qubits"]["n_total"]:
            raise ConfigError(f"n_range exceeds qubits.n_total = {cfg['qubits']['n_total']}")
    if cfg["rabi"]["trials"] < 1 or cfg["spectra"]["realizations"] < 1:
        raise ConfigError("trial and realization counts must be >= 1")
    cs = cfg["center_sweep"]
    if cs["offset_points"] < 2 or cs["offset_max"] <= cs["offset_min"]:
        raise ConfigError("center_sweep needs offset_max > offset_min and >= 2 points")
    return cfg


def build_config(data: Optional[Mapping] = None, *, experiment: Optional[str] = None,
                 source="<dict>", lines=None) -> "ExperimentConfig":
    """Validate a raw mapping and return the resolved :class:`ExperimentConfig`."""
    lines = lines or {}
    given = _merge(SCHEMA, data or {}, source, lines)
    if experiment is not None:
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}; choose from {list(EXPERIMENTS)}")
        if given.get("experiment", experiment) != experiment:
            where = _where(source, lines, ("experiment",))
            raise ConfigError(f"{where}: config is for experiment {given['experiment']!r} "
                              f"but {experiment!r} was requested")
        given["experiment"] = experiment
    if given.get("experiment") is None:
        raise ConfigError(f"{source}: missing required key 'experiment' "
                          f"(one of {list(EXPERIMENTS)})")
    cfg = _check_values(_resolve(_fill(SCHEMA, given)))
    return ExperimentConfig.from_canonical(cfg)


def load_config(path, *, experiment: Optional[str] = None, overrides: Optional[dict] = None):
    """Read and validate a YAML config file.

    ``overrides`` replace top-level keys after parsing (used for CLI flags).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    lines = _key_lines(node) if node is not None else {}
    data = {} if data is None else data
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    data = dict(data)
    data.update(overrides or {})
    return build_config(data, experiment=experiment, source=str(path), lines=lines)


def canonical_dump(canonical: Mapping) -> str:
    """Deterministic YAML text of a canonical config."""
    return yaml.safe_dump(_plain(canonical), sort_keys=True, default_flow_style=None)


def _plain(obj):
    if isinstance(obj, Mapping):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_hash(canonical: Mapping) -> str:
    blob = json.dumps(_plain(canonical), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _freeze(obj):
    if isinstance(obj, Mapping):
        return MappingProxyType({k: _freeze(v) for k, v in obj.items()})
    if isinstance(obj, list):
        return tuple(_freeze(v) for v in obj)
    return obj


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment settings.

    ``system`` is the device template: ``qubits.n_total`` identical qubits at
    ν_c carrying the configured Γ and g. ``disorder`` carries the master seed and
    the first spread of ``delta_range``; runners replace the spread per cell.
    """

    experiment: str
    system: SystemConfig
    disorder: DisorderSpec
    grid: ProbeGrid
    n_realizations: int
    n_range: tuple
    delta_range: tuple
    output_path: str
    master_seed: int
    threads: int
    options: Mapping
    canonical: Mapping

    @classmethod
    def from_canonical(cls, cfg: Mapping) -> "ExperimentConfig":
        cfg = _plain(cfg)
        cav = cfg["cavity"]
        try:
            cavity = CavityParams(cav["nu_c"], cav["kappa"], cav["gamma_in"], cav["gamma_out"])
            q = cfg["qubits"]
            system = SystemConfig.uniform(cavity, q["n_total"], gamma=q["gamma"], g=q["g"])
            d = cfg["disorder"]
            disorder = DisorderSpec(d["mean"], cfg["delta_range"][0],
                                    parse_shape(d["shape"], d["sigma"]), cfg["seed"])
            gr = cfg["grid"]
            grid = ProbeGrid.centered(gr["center"], gr["half_span"], gr["points"])
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        canonical = {k: v for k, v in cfg.items() if k not in _RUNTIME_ONLY}
        return cls(
            experiment=cfg["experiment"], system=system, disorder=disorder, grid=grid,
            n_realizations=cfg["n_realizations"], n_range=tuple(cfg["n_range"]),
            delta_range=tuple(cfg["delta_range"]), output_path=cfg["output"],
            master_seed=cfg["seed"], threads=cfg["threads"],
            options=_freeze({k: cfg[k] for k in ("qubits", "rabi", "spectra", "meso",
                                                 "center_sweep", "calibration")}),
            canonical=_freeze(canonical))

    @property
    def hash(self) -> str:
        return config_hash(self.canonical)

    def dump(self) -> str:
        return canonical_dump(self.canonical)

    def replace(self, **changes) -> "ExperimentConfig":
        """New config with top-level canonical keys (or ``threads``) changed."""
        cfg = _plain(self.canonical)
        cfg["threads"] = self.threads
        cfg["output"] = self.output_path
        for k, v in changes.items():
            if k not in SCHEMA:
                raise _unknown(k, SCHEMA, "<replace>", "")
            cfg[k] = v
        return build_config({k: v for k, v in cfg.items()})


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """Defaults for ``experiment`` with optional top-level or section overrides."""
    return build_config(dict(overrides), experiment=experiment)
