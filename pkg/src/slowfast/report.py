"""Run configuration and the versioned report written by the command-line tool."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import InvalidParameters

SCHEMA_VERSION = 1


class ConfigError(InvalidParameters):
    """Bad run configuration; the message names the offending field or line."""


@dataclass
class RunConfig:
    command: str = "manifold"
    system: str = "mmh"
    eps: float = 0.1
    kappa: float = 2.0
    lam: float = 1.0
    grid_lo: Optional[float] = None
    grid_hi: Optional[float] = None
    grid_h: float = 0.01
    n1: int = 10
    n2: int = 8
    n3: int = 4
    xb0: float = 1.5
    s_values: Optional[List[float]] = None
    eps_values: Optional[List[float]] = None
    point: Optional[List[float]] = None
    rtol: float = 1e-10
    atol: float = 1e-12
    format: str = "json"
    out: Optional[str] = None
    plot_dir: Optional[str] = None
    timings: bool = False

    def validate(self) -> "RunConfig":
        for name in ("n1", "n2", "n3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: iteration depth must be >= 0")
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ConfigError("eps: must be positive and finite")
        if not self.grid_h > 0:
            raise ConfigError("grid_h: spacing must be positive")
        for name in ("s_values", "eps_values"):
            vals = getattr(self, name)
            if vals is not None and (len(vals) == 0 or any(not (v > 0) for v in vals)):
                raise ConfigError(f"{name}: sweep values must be positive")
        if self.format not in ("json", "csv"):
            raise ConfigError("format: choose json or csv")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("rtol/atol: tolerances must be positive")
        return self

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def load_config_file(path: str) -> Dict[str, Any]:
    """Read a JSON object of config fields; errors cite the line or the field."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    known = set(RunConfig.field_names())
    out = {}
    for key, val in data.items():
        name = key.replace("-", "_")
        if name == "lambda":
            name = "lam"
        if name not in known:
            raise ConfigError(f"{path}: unknown field {key!r}")
        out[name] = val
    return out


def _clean(obj, path, nulls):
    """Convert numpy types to plain JSON values, nulling non-finite numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v, f"{path}.{k}" if path else str(k), nulls) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, f"{path}[{i}]", nulls) for i, v in enumerate(obj)]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist(), path, nulls)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            nulls.setdefault(path, "non-finite")
            return None
        return v
    return obj


@dataclass
class ReductionReport:
    """Everything one CLI run produced.

    ``nulls`` maps the path of every null numeric field to a reason code
    such as ``"non-finite"`` or ``"not-requested"``.
    """

    command: str
    config: Dict[str, Any]
    results: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    nulls: Dict[str, str] = field(default_factory=dict)
    timings: Optional[Dict[str, float]] = None
    schema: int = SCHEMA_VERSION

    def set_null(self, path: str, reason: str):
        node = self.results
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = None
        self.nulls[f"results.{path}"] = reason

    def to_dict(self) -> Dict[str, Any]:
        nulls = dict(self.nulls)
        body = {
            "schema": self.schema,
            "command": self.command,
            "config": _clean(self.config, "config", nulls),
            "results": _clean(self.results, "results", nulls),
            "warnings": list(self.warnings),
        }
        if self.timings is not None:
            body["timings"] = _clean(self.timings, "timings", nulls)
        body["nulls"] = dict(sorted(nulls.items()))
        return body

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ReductionReport":
        if d.get("schema") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported report schema {d.get('schema')!r}")
        return cls(d["command"], d["config"], d.get("results", {}), d.get("warnings", []),
                   d.get("nulls", {}), d.get("timings"), d["schema"])

    @classmethod
    def from_json(cls, text: str) -> "ReductionReport":
        return cls.from_dict(json.loads(text))

    def normalized(self) -> "ReductionReport":
        """The report as it reads back from JSON."""
        return ReductionReport.from_json(self.to_json())


CSV_COLUMNS = ["sweep_value", "upsilon_naive", "upsilon_linear", "upsilon_quadratic"]


def _cell(v):
    if v is None:
        return ""
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


def comparison_csv(comparison: Dict[str, Any]) -> str:
    """Sweep table with a trailing ``slope`` row holding the fitted slopes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    ups = comparison["upsilon"]
    names = ("naive", "linear", "quadratic")
    for i, s in enumerate(comparison["values"]):
        w.writerow([_cell(s)] + [_cell(ups[n][i]) if ups.get(n) is not None else "" for n in names])
    fits = comparison.get("fits", {})
    w.writerow(["slope"] + [_cell(fits[n]["slope"]) if fits.get(n) else "" for n in names])
    return buf.getvalue()


def projection_csv(rows: List[Dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "base_x", "base_y", "iterations", "residual"])
    for r in rows:
        w.writerow([r["method"], ";".join(_cell(v) for v in r["base_x"]),
                    ";".join(_cell(v) for v in r["base_y"]), r["iterations"], _cell(r["residual"])])
    return buf.getvalue()


def config_echo(cfg: RunConfig) -> Dict[str, Any]:
    d = asdict(cfg)
    # output locations do not change the numbers
    for k in ("out", "plot_dir", "timings"):
        d.pop(k)
    return d
