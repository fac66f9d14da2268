"""
Declarative parameter sweeps over Ising quench specs, figure presets and
CSV/JSON emission.

A config is one JSON object::

    {"engine": "ising", "N": 10, "lambda0": 0, "delta_lambda": 0.5,
     "T": 100, "p": 1, "phi": "pi",
     "sweep": [{"param": "p", "range": {"from": 0, "to": 1, "step": 0.25}}],
     "outputs": ["average_work", "fluctuation"],
     "format": "csv", "output_path": "out.csv"}
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import itertools
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, fcs, ising
from .errors import CapacityError, ConfigError

SPEC_FIELDS = ("N", "lambda0", "delta_lambda", "T", "p", "phi")
SWEEPABLE = ("lambda0", "delta_lambda", "T", "p", "phi")
ENGINES = ("ising", "generic")
FORMATS = ("csv", "json")
OUTPUTS = ("distribution", "histogram", "average_work", "fluctuation",
           "fluctuation_relation", "delta_f", "w_irr", "decomposition")
DECOMPOSITION_COLUMNS = ("w_in_indep", "w_in_dep", "w_coherent", "m2_in", "m2_coherent")
SCHEMA_KEYS = ("engine", "N", "lambda0", "delta_lambda", "T", "p", "phi", "sweep",
               "outputs", "histogram", "merge_tolerance", "output_path", "format")
MAX_SWEEP_AXES = 2

CONVENTIONS = {
    "units": "hbar = k_B = 1, beta = 1/T",
    "delta_f": "F_tau - F_0 with F_tau = -T ln Z_tau",
    "lambda_pm_denominator": "2 cosh(beta eps0 / 2), from 2x2 diagonalisation",
    "fluctuation_relation": "product over modes of exact per-mode sums of weight * exp(-beta W)",
    "irreversible_work": "<W> - Delta F",
    "histogram": "gaussian-broadened density integrating to 1 over the grid",
    "momenta": "k = pi (2n - 1) / N, n = 1..N/2; each k > 0 paired with -k",
}


@dataclass(frozen=True)
class HistogramSpec:
    sigma: float
    w_min: float
    w_max: float
    n_points: int


@dataclass(frozen=True)
class ExperimentConfig:
    engine: str
    N: int
    lambda0: Optional[float]
    delta_lambda: Optional[float]
    T: Optional[float]
    p: Optional[float]
    phi: float = 0.0
    sweep: tuple = ()
    outputs: tuple = ()
    histogram: Optional[HistogramSpec] = None
    merge_tolerance: float = fcs.DEFAULT_MERGE_TOLERANCE
    output_path: Optional[str] = None
    format: str = "csv"

    def points(self):
        """Resolved spec fields for every sweep point, lexicographic over the axes."""
        base = {f: getattr(self, f) for f in SPEC_FIELDS}
        axes = [name for name, _ in self.sweep]
        out = []
        for combo in itertools.product(*(values for _, values in self.sweep)):
            point = dict(base)
            point.update(zip(axes, combo))
            out.append(point)
        return out

    def to_dict(self):
        d = asdict(self)
        d["sweep"] = [{"param": name, "values": list(values)} for name, values in self.sweep]
        d["outputs"] = list(self.outputs)
        return d


@dataclass
class ResultTable:
    columns: tuple
    rows: list
    metadata: dict = field(default_factory=dict)

    def column(self, name):
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_PI_RE = re.compile(r"^\s*([+-]?)\s*(\d+(?:\.\d*)?|\.\d+)?\s*\*?\s*pi\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


def parse_phase(value, path="phi"):
    """Phase from a number or a literal such as ``"pi"``, ``"pi/2"``, ``"-3pi/4"``."""
    if isinstance(value, bool):
        raise ConfigError("expected a number or a pi literal", path)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_RE.match(value)
        if m:
            sign = -1.0 if m.group(1) == "-" else 1.0
            mult = float(m.group(2)) if m.group(2) else 1.0
            div = float(m.group(3)) if m.group(3) else 1.0
            if div == 0:
                raise ConfigError(f"division by zero in {value!r}", path)
            return sign * mult * math.pi / div
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"cannot read phase {value!r}", path)


def _number(value, path, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    if integer:
        if int(value) != value:
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {value!r}", path)
    return float(value)


def _field_value(name, value, path):
    if name == "phi":
        return parse_phase(value, path)
    if name == "N":
        return _number(value, path, integer=True)
    return _number(value, path)


def _range_values(spec, path):
    if not isinstance(spec, dict):
        raise ConfigError("range must be an object {from, to, step}", path)
    extra = set(spec) - {"from", "to", "step"}
    if extra:
        raise ConfigError(f"unknown key {sorted(extra)[0]!r}", path)
    try:
        lo, hi, step = (_number(spec[k], f"{path}.{k}") for k in ("from", "to", "step"))
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}", path) from None
    if not step > 0:
        raise ConfigError("step must be positive", f"{path}.step")
    if hi < lo:
        raise ConfigError("'to' must not be below 'from'", path)
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(round(lo + i * step, 12) for i in range(n))


def _parse_sweep(raw):
    if not isinstance(raw, list):
        raise ConfigError("sweep must be a list", "sweep")
    if len(raw) > MAX_SWEEP_AXES:
        raise ConfigError(f"at most {MAX_SWEEP_AXES} sweep axes allowed, got {len(raw)}", "sweep")
    axes = []
    for i, item in enumerate(raw):
        path = f"sweep[{i}]"
        if not isinstance(item, dict):
            raise ConfigError("sweep entry must be an object", path)
        extra = set(item) - {"param", "values", "range"}
        if extra:
            raise ConfigError(f"unknown key {sorted(extra)[0]!r}", path)
        name = item.get("param")
        if name not in SWEEPABLE:
            raise ConfigError(
                f"cannot sweep unknown parameter {name!r}; sweepable: {', '.join(SWEEPABLE)}",
                f"{path}.param")
        if name in (a for a, _ in axes):
            raise ConfigError(f"parameter {name!r} swept twice", f"{path}.param")
        if ("values" in item) == ("range" in item):
            raise ConfigError("give exactly one of 'values' or 'range'", path)
        if "values" in item:
            vals = item["values"]
            if not isinstance(vals, list) or not vals:
                raise ConfigError("values must be a non-empty list", f"{path}.values")
            values = tuple(_field_value(name, v, f"{path}.values[{j}]") for j, v in enumerate(vals))
        else:
            values = _range_values(item["range"], f"{path}.range")
        axes.append((name, values))
    return tuple(axes)


def config_from_dict(doc) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", "$")
    unknown = [k for k in doc if k not in SCHEMA_KEYS]
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", unknown[0])

    engine = doc.get("engine")
    if engine not in ENGINES:
        raise ConfigError(f"engine must be one of {ENGINES}, got {engine!r}", "engine")
    sweep = _parse_sweep(doc.get("sweep", []))
    swept = {name for name, _ in sweep}

    values = {}
    for name in SPEC_FIELDS:
        if name in doc:
            values[name] = _field_value(name, doc[name], name)
        elif name == "phi":
            values[name] = 0.0
        elif name in swept:
            values[name] = None
        else:
            raise ConfigError("missing required key", name)
    if values["N"] < 2 or values["N"] % 2:
        raise ConfigError(f"N must be an even integer >= 2, got {values['N']}", "N")

    outputs = doc.get("outputs")
    if not isinstance(outputs, list) or not outputs:
        raise ConfigError("outputs must be a non-empty list", "outputs")
    for i, name in enumerate(outputs):
        if name not in OUTPUTS:
            raise ConfigError(f"unknown output {name!r}", f"outputs[{i}]")
    if len(set(outputs)) != len(outputs):
        raise ConfigError("duplicate output", "outputs")

    histogram = None
    if "histogram" in outputs:
        raw = doc.get("histogram")
        if not isinstance(raw, dict):
            raise ConfigError("required when 'histogram' is requested", "histogram")
        extra = set(raw) - {"sigma", "w_min", "w_max", "n_points"}
        if extra:
            raise ConfigError(f"unknown key {sorted(extra)[0]!r}", "histogram")
        try:
            histogram = HistogramSpec(
                sigma=_number(raw["sigma"], "histogram.sigma"),
                w_min=_number(raw["w_min"], "histogram.w_min"),
                w_max=_number(raw["w_max"], "histogram.w_max"),
                n_points=_number(raw["n_points"], "histogram.n_points", integer=True))
        except KeyError as exc:
            raise ConfigError(f"missing key {exc.args[0]!r}", "histogram") from None
        if not histogram.sigma > 0:
            raise ConfigError("sigma must be positive", "histogram.sigma")
        if histogram.n_points < 2 or not histogram.w_max > histogram.w_min:
            raise ConfigError("degenerate grid", "histogram")
    elif "histogram" in doc:
        raise ConfigError("given but 'histogram' is not among outputs", "histogram")

    merge_tolerance = _number(doc.get("merge_tolerance", fcs.DEFAULT_MERGE_TOLERANCE),
                              "merge_tolerance")
    if not merge_tolerance > 0:
        raise ConfigError("must be positive", "merge_tolerance")
    fmt = doc.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {fmt!r}", "format")
    output_path = doc.get("output_path")
    if output_path is not None and not isinstance(output_path, str):
        raise ConfigError("must be a string", "output_path")

    config = ExperimentConfig(engine=engine, sweep=sweep, outputs=tuple(outputs),
                              histogram=histogram, merge_tolerance=merge_tolerance,
                              output_path=output_path, format=fmt, **values)
    for point in config.points():
        try:
            _spec(point)
        except ValueError as exc:
            where = ", ".join(f"{a}={point[a]}" for a, _ in sweep) or "base"
            raise ConfigError(f"invalid spec at sweep point ({where}): {exc}", "sweep" if sweep else "$") from None
    return config


def parse_config(text) -> ExperimentConfig:
    """Parse and validate a JSON experiment config, resolving defaults."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}", "$") from None
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

P_GRID = {"from": 0, "to": 1, "step": 0.05}
LAMBDA_GRID = {"from": 0, "to": 2, "step": 0.02}
FIG1_HISTOGRAM = {"sigma": 0.1, "w_min": -10, "w_max": 10, "n_points": 2001}
FIG1_PANELS = {"a": (0.01, 0.0), "b": (100.0, 0.0), "c": (100.0, 1.0)}
FIG1_LAMBDA0 = {"1": 0.0, "2": 1.0, "3": 2.0}


def _fig1(row, col):
    T, p = FIG1_PANELS[row]
    return [{"engine": "ising", "N": 10, "lambda0": FIG1_LAMBDA0[col], "delta_lambda": 0.5,
             "T": T, "p": p, "phi": "pi", "outputs": ["distribution", "histogram"],
             "histogram": dict(FIG1_HISTOGRAM)}]


def _fig2():
    return [{"engine": "ising", "N": 100, "delta_lambda": 0.1, "T": 100, "phi": ph,
             "sweep": [{"param": "lambda0", "values": [0, 0.5, 1, 1.5, 2]},
                       {"param": "p", "range": dict(P_GRID)}],
             "outputs": ["average_work", "fluctuation"]} for ph in ("0", "pi")]


def _fig3():
    return [{"engine": "ising", "N": 100, "delta_lambda": 0.1, "T": T, "p": p, "phi": 0,
             "sweep": [{"param": "lambda0", "range": dict(LAMBDA_GRID)}],
             "outputs": ["average_work", "fluctuation"]}
            for T, p in ((0.01, 0.0), (100.0, 0.0), (100.0, 1.0))]


def _fig4():
    return [{"engine": "ising", "N": 100, "lambda0": 0, "delta_lambda": 0.1, "T": 100,
             "phi": 0, "sweep": [{"param": "p", "range": dict(P_GRID)}],
             "outputs": ["delta_f", "w_irr"]}]


def _fig5():
    return [{"engine": "ising", "N": 100, "delta_lambda": 0.1, "T": T, "p": p, "phi": phi,
             "sweep": [{"param": "lambda0", "range": dict(LAMBDA_GRID)}],
             "outputs": ["delta_f", "w_irr"]}
            for T, p, phi in ((0.01, 0.0, 0), (100.0, 0.0, 0), (100.0, 1.0, 0), (100.0, 1.0, "pi"))]


PRESETS = {f"fig1{r}{c}": (lambda r=r, c=c: _fig1(r, c)) for r in "abc" for c in "123"}
PRESETS.update(fig2=_fig2, fig3=_fig3, fig4=_fig4, fig5=_fig5)


def expand_preset(name) -> list:
    """Expand a figure preset into its panel configs (a list of ExperimentConfig)."""
    try:
        docs = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}",
                          "preset") from None
    return [config_from_dict(d) for d in docs]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _spec(point):
    return ising.IsingQuenchSpec(N=point["N"], lambda0=point["lambda0"],
                                 delta_lambda=point["delta_lambda"], T=point["T"],
                                 p=point["p"], phi=point["phi"])


def _generic_scalars(spec, outputs):
    """Per-mode dense systems through the generic engine, combined over modes."""
    res = {}
    modes = [ising.oracle_mode_system(spec, k) for k in ising.mode_grid(spec.N)]
    means = [fcs.work_moment(*m, 1) for m in modes]
    mean = float(np.sum(means))
    if "average_work" in outputs:
        res["average_work"] = mean
    if "fluctuation" in outputs or "decomposition" in outputs:
        var = float(sum(fcs.work_fluctuation(*m) for m in modes))
        res["fluctuation"] = var
    if "fluctuation_relation" in outputs:
        logs, sign = 0.0, 1.0
        for m in modes:
            v, s = fcs.log_fluctuation_relation(*m, spec.T)
            logs += v
            sign *= s
        res["fluctuation_relation"] = sign * math.exp(logs) if logs < 709 else sign * math.inf
    if "delta_f" in outputs or "w_irr" in outputs:
        delta_f = float(sum(
            fcs.thermodynamic_report(ising.product_mode_state(spec, k), *m[1:], spec.T).delta_f
            for k, m in zip(ising.mode_grid(spec.N), modes)))
        res["delta_f"] = delta_f
        res["w_irr"] = mean - delta_f
    if "decomposition" in outputs:
        parts = [fcs.work_decomposition(*m, spec.T) for m in modes]
        incoherent = [fcs.work_decomposition(*ising.oracle_mode_system(spec.replace(p=0.0), k), spec.T)
                      for k in ising.mode_grid(spec.N)]
        w_in = sum(d.w_in for d in parts)
        var_in = sum(d.m2_in - d.w_in ** 2 for d in incoherent)
        m2_in = var_in + w_in ** 2
        res.update(w_in_indep=sum(d.w_in_indep for d in parts),
                   w_in_dep=sum(d.w_in_dep for d in parts),
                   w_coherent=sum(d.w_coherent for d in parts),
                   m2_in=m2_in, m2_coherent=res["fluctuation"] + mean ** 2 - m2_in)
    return res


def _ising_scalars(spec, outputs):
    res = {}
    if "average_work" in outputs:
        res["average_work"] = ising.average_work(spec)
    if "fluctuation" in outputs:
        res["fluctuation"] = ising.work_fluctuation_closed(spec)
    if "fluctuation_relation" in outputs:
        res["fluctuation_relation"] = ising.fluctuation_relation_closed(spec)
    if "delta_f" in outputs:
        res["delta_f"] = ising.delta_free_energy(spec)
    if "w_irr" in outputs:
        res["w_irr"] = ising.irreversible_work(spec)
    if "decomposition" in outputs:
        res.update(asdict(ising.work_decomposition_closed(spec)))
    return res


def _generic_distribution(spec, tol):
    if spec.N > ising.MAX_EXACT_N:
        raise CapacityError(
            f"exact convolution limited to N <= {ising.MAX_EXACT_N} (MAX_EXACT_N); got N={spec.N}")
    dist = fcs.WorkQuasiDistribution.from_atoms([0.0], [1.0], tol)
    for k in ising.mode_grid(spec.N):
        dist = dist.convolve(fcs.quasidistribution(*ising.oracle_mode_system(spec, k), tol), tol)
    return dist


def _evaluate(config, point):
    spec = _spec(point)
    outputs = set(config.outputs)
    scalars = (_ising_scalars if config.engine == "ising" else _generic_scalars)(spec, outputs)
    dist = None
    if outputs & {"distribution", "histogram"}:
        try:
            if config.engine == "ising":
                dist = ising.convolve_modes(spec, config.merge_tolerance)
            else:
                dist = _generic_distribution(spec, config.merge_tolerance)
        except CapacityError as exc:
            where = ", ".join(f"{k}={point[k]}" for k in SPEC_FIELDS)
            raise CapacityError(f"at sweep point ({where}): {exc}") from None
    return scalars, dist


def _scalar_columns(outputs):
    cols = []
    for name in OUTPUTS:
        if name not in outputs or name in ("distribution", "histogram"):
            continue
        cols.extend(DECOMPOSITION_COLUMNS if name == "decomposition" else (name,))
    return cols


def _threads():
    raw = os.environ.get("COHWORK_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _key_columns(configs, all_points):
    keys = []
    for config in configs:
        for name, _ in config.sweep:
            if name not in keys:
                keys.append(name)
    for name in SPEC_FIELDS:
        if name not in keys and len({pt[name] for pt in all_points}) > 1:
            keys.append(name)
    return keys


def run_experiment(config, threads=None) -> dict:
    """Evaluate a config (or a list of panel configs) over its sweep lattice.

    Returns
    -------
    dict of str -> ResultTable
        ``"scalars"`` holds one row per sweep point; ``"distribution"`` and
        ``"histogram"`` are long-format tables keyed by the varying
        parameters. Only requested tables are present.

    Raises
    ------
    CapacityError
        If exact enumeration is refused at some sweep point.
    """
    configs = list(config) if isinstance(config, (list, tuple)) else [config]
    jobs = [(c, pt) for c in configs for pt in c.points()]
    keys = _key_columns(configs, [pt for _, pt in jobs])
    threads = _threads() if threads is None else max(1, int(threads))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: _evaluate(*job), jobs))
    else:
        results = [_evaluate(*job) for job in jobs]

    metadata = {
        "engine_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "config": [c.to_dict() for c in configs] if len(configs) > 1 else configs[0].to_dict(),
        "conventions": dict(CONVENTIONS),
    }
    outputs = []
    for c in configs:
        outputs.extend(o for o in c.outputs if o not in outputs)
    tables = {}

    scalar_cols = _scalar_columns(outputs)
    if scalar_cols:
        rows = []
        for (c, pt), (scalars, _) in zip(jobs, results):
            rows.append(tuple(pt[k] for k in keys) + tuple(scalars.get(col, math.nan)
                                                           for col in scalar_cols))
        tables["scalars"] = ResultTable(tuple(keys) + tuple(scalar_cols), rows, dict(metadata))
    if "distribution" in outputs:
        rows = []
        for (c, pt), (_, dist) in zip(jobs, results):
            if dist is not None:
                key = tuple(pt[k] for k in keys)
                rows.extend(key + (w, p) for w, p in zip(dist.w.tolist(), dist.weights.tolist()))
        tables["distribution"] = ResultTable(tuple(keys) + ("w", "weight"), rows, dict(metadata))
    if "histogram" in outputs:
        rows = []
        for (c, pt), (_, dist) in zip(jobs, results):
            if c.histogram is None or dist is None:
                continue
            h = c.histogram
            ws, dens = ising.broadened_histogram(dist, h.sigma, (h.w_min, h.w_max, h.n_points))
            key = tuple(pt[k] for k in keys)
            rows.extend(key + (w, d) for w, d in zip(ws.tolist(), dens.tolist()))
        tables["histogram"] = ResultTable(tuple(keys) + ("w", "density"), rows, dict(metadata))
    return tables


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _cell(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def table_to_csv(table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def table_to_json(table) -> str:
    doc = {"metadata": table.metadata, "columns": list(table.columns),
           "rows": [list(r) for r in table.rows]}
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def emit(table, path, format="csv"):
    """Write a table as CSV (plus a ``.meta.json`` sidecar) or JSON.

    ``path`` of ``None`` or ``"-"`` writes the data to stdout without
    metadata.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    text = table_to_csv(table) if format == "csv" else table_to_json(table)
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        if format == "csv":
            meta = path.with_name(path.name + ".meta.json")
            meta.write_text(json.dumps(table.metadata, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def table_paths(path, names):
    """Output file for each table: scalars at ``path``, others at ``<stem>_<name><suffix>``."""
    if path in (None, "-"):
        return {name: None for name in names}
    path = Path(path)
    return {name: path if name == "scalars" else path.with_name(f"{path.stem}_{name}{path.suffix}")
            for name in names}


def read_table(path, format="csv") -> ResultTable:
    """Read back a table written by :func:`emit`."""
    path = Path(path)
    if format == "json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        return ResultTable(tuple(doc["columns"]), [tuple(r) for r in doc["rows"]], doc["metadata"])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        columns = tuple(next(reader))
        rows = [tuple(float(x) if x not in ("",) else math.nan for x in r) for r in reader]
    meta = path.with_name(path.name + ".meta.json")
    metadata = json.loads(meta.read_text(encoding="utf-8")) if meta.exists() else {}
    return ResultTable(columns, rows, metadata)
