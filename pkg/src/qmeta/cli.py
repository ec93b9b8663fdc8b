"""Command-line entry point.

    qmeta [--config PATH] [--seed U64] [--out DIR] [--threads K] [--format csv|json] SUBCOMMAND

Subcommands: rabi-scaling, spectra, meso, center-sweep, calibrate, fit.
Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ._version import __version__
from .config import EXPERIMENTS, build_config, load_config
from .exceptions import ConfigError, DataIOError, NumericalError
from .experiments import (fit_meso_stats, run_experiment, stats_from_table,
                          write_results)
from .estimators import fit_power_law
from .io import ResultTable, load_table, save_table

log = logging.getLogger("qmeta")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common(default):
    # global flags are accepted before or after the subcommand; the subcommand
    # copy uses SUPPRESS so it does not overwrite values given earlier
    c = argparse.ArgumentParser(add_help=False)
    c.add_argument("--config", type=Path, default=default, help="YAML experiment config")
    c.add_argument("--seed", type=_u64, default=default, help="master seed (overrides the config)")
    c.add_argument("--out", type=Path, default=default,
                   help="output directory (overrides the config)")
    c.add_argument("--threads", type=_positive, default=default, help="worker threads")
    c.add_argument("--format", choices=("csv", "json"), default=default,
                   help="table format (default csv)")
    c.add_argument("-v", "--verbose", action="store_true", default=default or False)
    return c


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmeta", parents=[_common(None)],
                                description="Disordered Tavis-Cummings metamaterial simulator")
    p.add_argument("--version", action="version", version=f"qmeta {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    common = _common(argparse.SUPPRESS)
    helps = {
        "rabi-scaling": "bright-mode splitting versus qubit number",
        "spectra": "transmission spectra of individual disorder realizations",
        "meso": "ensemble-averaged transmission and fluctuations per (N, Δ) cell",
        "center-sweep": "spectra of a fixed realization under a rigid centre sweep",
        "calibrate": "device-model fit (synthetic round trip or an observation table)",
    }
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "calibrate":
            sp.add_argument("--observations", type=Path,
                            help="CSV with columns qubit, v0.., frequency")
    fp = sub.add_parser("fit", parents=[common], help="refit a saved rabi-scaling or meso table")
    fp.add_argument("table", type=Path, help="result table written by rabi-scaling or meso")
    fp.add_argument("--weighted", action="store_true", default=None,
                    help="inverse-variance weights (meso; default from the table)")
    return p


def _config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output"] = str(args.out)
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.command == "calibrate" and args.observations is not None:
        overrides["calibration"] = {"observations": str(args.observations)}
    if args.config is not None:
        if "calibration" in overrides:
            # keep the rest of the calibration section from the file
            cfg = load_config(args.config, experiment=args.command)
            cal = dict(cfg.canonical["calibration"])
            cal.update(overrides.pop("calibration"))
            overrides["calibration"] = cal
        return load_config(args.config, experiment=args.command, overrides=overrides)
    return build_config(overrides, experiment=args.command)


def _fit_table(table: ResultTable, weighted):
    exp = table.metadata.get("experiment")
    meta = {k: table.metadata[k] for k in ("experiment", "config_hash", "seed", "version")
            if k in table.metadata}
    cols = [("parameter", "str"), ("value", "float"), ("stderr", "float")]
    if exp == "meso":
        stats = stats_from_table(table)
        w = table.metadata.get("weighted", False) if weighted is None else weighted
        report, _, fit_meta = fit_meso_stats(stats, table.metadata["g"],
                                             table.metadata["kappa"], w)
        if report is None:
            raise ConfigError(f"cannot fit table: {fit_meta['fit_skipped']}")
        se = report.stderrs
        rows = [["gamma_exp", report.gamma_exp, se["gamma"]],
                ["beta_exp", report.beta_exp, se["beta"]],
                ["delta_exp", report.delta_exp, se["delta"]],
                ["c1_re", report.c1.real, se["c1"]], ["c1_im", report.c1.imag, se["c1"]],
                ["c2", report.c2, se["c2"]], ["a_abs", abs(report.a), se["a"]],
                ["b", report.b, se["b"]], ["residual_norm", report.residual_norm, 0.0],
                ["collapse_r2", fit_meta["collapse_r2"], 0.0]]
        meta["weighted"] = w
        return ResultTable(cols, rows, meta)
    if exp == "rabi-scaling":
        trial = table.column("trial")
        n, y = table.column("n_qubits"), table.column("splitting_spectral")
        rows = []
        for t in sorted(set(trial.tolist())):
            sel = trial == t
            fit = fit_power_law(list(zip(n[sel], y[sel])))
            rows += [[f"amplitude_{t}", fit.amplitude, fit.amplitude_stderr],
                     [f"exponent_{t}", fit.exponent, fit.exponent_stderr]]
        return ResultTable(cols, rows, meta)
    raise ConfigError(f"fit supports rabi-scaling and meso tables, got experiment {exp!r}")


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    fmt = args.format or "csv"
    try:
        if args.command == "fit":
            table = load_table(args.table)
            out_dir = args.out or args.table.parent
            path = save_table(_fit_table(table, args.weighted),
                              Path(out_dir) / f"fit_{args.table.stem}.{fmt}", fmt)
            log.info("wrote %s", path)
            return EXIT_OK
        config = _config(args)
        tables = run_experiment(config)
        for path in write_results(config, tables, config.output_path, fmt):
            log.info("wrote %s", path)
        return EXIT_OK
    except ConfigError as exc:
        print(f"qmeta: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"qmeta: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataIOError, OSError) as exc:
        print(f"qmeta: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
