"""Result tables and their on-disk formats.

CSV layout::

    # key=<json value>        (one metadata entry per line)
    col_a,col_b,...           (header row)
    1,0.10000000000000001,... (data rows)

Floats are written with 17 significant digits, which round-trips IEEE doubles
exactly. Column types are kept in the ``schema`` metadata entry. The
``timestamp`` entry is the only one that changes between identical runs;
:func:`data_section` returns the comparable part of a file.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .exceptions import ConfigError, DataIOError

VOLATILE_KEYS = ("timestamp",)
_TYPES = {"int": int, "float": float, "str": str}


@dataclass
class ResultTable:
    """Named, typed columns with row data and run metadata."""

    columns: list
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = []
        for c in self.columns:
            name, kind = (c, "float") if isinstance(c, str) else tuple(c)
            if kind not in _TYPES:
                raise ConfigError(f"column {name!r}: unsupported type {kind!r}")
            cols.append((str(name), kind))
        self.columns = cols
        width = len(cols)
        rows = []
        for i, r in enumerate(self.rows):
            r = list(r)
            if len(r) != width:
                raise ConfigError(f"row {i} has {len(r)} values, expected {width}")
            rows.append([_TYPES[k](v) for (_, k), v in zip(cols, r)])
        self.rows = rows

    @property
    def names(self) -> list:
        return [n for n, _ in self.columns]

    def column(self, name) -> np.ndarray:
        try:
            i = self.names.index(name)
        except ValueError:
            raise KeyError(f"no column {name!r}; have {self.names}") from None
        kind = self.columns[i][1]
        vals = [r[i] for r in self.rows]
        return np.array(vals, dtype=object if kind == "str" else _TYPES[kind])

    def __len__(self):
        return len(self.rows)


def _fmt(value, kind):
    if kind == "float":
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _meta_value(v) -> str:
    return json.dumps(v, sort_keys=True, default=_json_default, allow_nan=True)


def to_csv_text(table: ResultTable) -> str:
    meta = dict(table.metadata)
    meta["schema"] = ",".join(f"{n}:{k}" for n, k in table.columns)
    buf = _io.StringIO()
    for key in sorted(meta):
        if "\n" in key or "=" in key:
            raise ConfigError(f"metadata key {key!r} may not contain '=' or newlines")
        buf.write(f"# {key}={_meta_value(meta[key])}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.names)
    for r in table.rows:
        w.writerow([_fmt(v, k) for v, (_, k) in zip(r, table.columns)])
    return buf.getvalue()


def to_json_text(table: ResultTable) -> str:
    doc = {"metadata": table.metadata,
           "columns": [{"name": n, "type": k} for n, k in table.columns],
           "rows": table.rows}
    return json.dumps(doc, sort_keys=True, indent=1, default=_json_default) + "\n"


def save_table(table: ResultTable, path, fmt: str | None = None) -> Path:
    """Write ``table`` as CSV (default) or JSON, chosen by ``fmt`` or the suffix."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    if fmt == "csv":
        text = to_csv_text(table)
    elif fmt == "json":
        text = to_json_text(table)
    else:
        raise ConfigError(f"unknown table format {fmt!r}; use 'csv' or 'json'")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _parse_schema(spec, path):
    cols = []
    for item in spec.split(","):
        name, _, kind = item.rpartition(":")
        if kind not in _TYPES:
            raise DataIOError(f"{path}: bad schema entry {item!r}")
        cols.append((name, kind))
    return cols


def _read_csv(text, path):
    meta, lines = {}, text.splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        key, sep, value = body.partition("=")
        if not sep:
            raise DataIOError(f"{path}:{i + 1}: metadata line needs key=value")
        try:
            meta[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            meta[key.strip()] = value
        i += 1
    reader = csv.reader(lines[i:])
    try:
        header = next(reader)
    except StopIteration:
        raise DataIOError(f"{path}: missing header row") from None
    schema = meta.pop("schema", None)
    cols = _parse_schema(schema, path) if schema else [(h, "float") for h in header]
    if [n for n, _ in cols] != header:
        raise DataIOError(f"{path}:{i + 1}: header does not match the schema metadata")
    rows = []
    for j, r in enumerate(reader, start=i + 2):
        if not r:
            continue
        if len(r) != len(cols):
            raise DataIOError(f"{path}:{j}: expected {len(cols)} fields, got {len(r)}")
        try:
            rows.append([_TYPES[k](v) for v, (_, k) in zip(r, cols)])
        except ValueError as exc:
            raise DataIOError(f"{path}:{j}: {exc}") from None
    return ResultTable(cols, rows, meta)


def _read_json(text, path):
    try:
        doc = json.loads(text)
        cols = [(c["name"], c["type"]) for c in doc["columns"]]
        return ResultTable(cols, doc["rows"], doc.get("metadata", {}))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataIOError(f"{path}: not a result table: {exc}") from None


def load_table(path) -> ResultTable:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        return _read_json(text, path)
    return _read_csv(text, path)


def data_section(text: str) -> str:
    """File text without volatile metadata lines, for reproducibility comparisons."""
    out = []
    for line in text.splitlines(keepends=True):
        if line.startswith("#") and line[1:].strip().split("=", 1)[0] in VOLATILE_KEYS:
            continue
        if line.lstrip().startswith('"timestamp"'):
            continue
        out.append(line)
    return "".join(out)


def read_observations(path, n_coils: int | None = None):
    """Observation rows ``(voltages, qubit id, dressed frequency)`` from a table.

    Columns ``qubit`` and ``frequency`` are required, and voltage columns are
    ``v0, v1, ...`` in coil order.
    """
    table = load_table(path)
    names = table.names
    for req in ("qubit", "frequency"):
        if req not in names:
            raise DataIOError(f"{path}: observation table needs a {req!r} column")
    vcols = sorted((n for n in names if n.startswith("v") and n[1:].isdigit()),
                   key=lambda n: int(n[1:]))
    if not vcols:
        raise DataIOError(f"{path}: no voltage columns v0, v1, ...")
    if n_coils is not None and len(vcols) != n_coils:
        raise DataIOError(f"{path}: {len(vcols)} voltage columns but the model has {n_coils} coils")
    v = np.column_stack([table.column(c).astype(float) for c in vcols])
    q = table.column("qubit").astype(float)
    if np.any(q != np.round(q)):
        raise DataIOError(f"{path}: qubit ids must be integers")
    f = table.column("frequency").astype(float)
    return [(v[i], int(q[i]), float(f[i])) for i in range(len(f))]


def observations_table(observations: Sequence, metadata: dict | None = None) -> ResultTable:
    obs = list(observations)
    n_coils = len(obs[0][0]) if obs else 0
    cols = [("qubit", "int")] + [(f"v{c}", "float") for c in range(n_coils)] + \
        [("frequency", "float")]
    rows = [[int(q)] + [float(x) for x in v] + [float(f)] for v, q, f in obs]
    return ResultTable(cols, rows, dict(metadata or {}))


def meta_get(table: ResultTable, key: str, default: Any = None):
    return table.metadata.get(key, default)
