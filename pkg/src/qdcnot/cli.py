"""``simulate`` command-line front end.

Each command reads one JSON config, computes every artifact in memory,
validates it, then writes all files atomically (temp file, then rename)
next to a ``manifest.json`` carrying the config hash, seed and file digests.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from qdcnot import __version__
from qdcnot.errors import ConfigError
from qdcnot.experiment import (
    TimeBinSpec,
    analytic_correlated_areas,
    analytic_uncorrelated_areas,
    normalize,
    overlap_correction,
    simulate_histogram,
)
from qdcnot.gate import AnalysisSetting, build_cnot
from qdcnot.pipeline import (
    ALL_BASES,
    SWEEP_VARIABLES,
    MonteCarloSettings,
    bell_correlations,
    fidelity_from_correlations,
    gate_report,
    parse_range,
    sweep,
    sweep_grid,
    truth_table,
)
from qdcnot.analysis import truth_table_overlap, truth_table_overlap_err
from qdcnot.source import OverlapModel, SourceParams, brightness_in_bin, effective_overlap

log = logging.getLogger("qdcnot")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_UNIT = {"type": "number", "minimum": 0, "maximum": 1}
_LABEL = {"enum": ["H", "V", "D", "A", "R", "L"]}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["source"],
    "properties": {
        "source": {
            "type": "object",
            "additionalProperties": False,
            "required": ["overlap"],
            "properties": {
                "brightness_max": _UNIT,
                "decay_time_ps": _POS,
                "g2_zero": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
                "rep_period_ns": _POS,
                "excitation_delay_ns": _POS,
                "jitter_fwhm_ps": _NONNEG,
                "detection_efficiency": _UNIT,
                "dark_rate_hz": _NONNEG,
                "photon_statistics": {"enum": ["single", "poisson"]},
                "overlap": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "constant": _UNIT,
                        "table": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["time_bin_ps", "overlap"],
                                "properties": {"time_bin_ps": _POS, "overlap": _UNIT},
                            },
                        },
                    },
                    "oneOf": [{"required": ["constant"]}, {"required": ["table"]}],
                },
            },
        },
        "gate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hadamard_on": {"enum": ["target", "control"]},
                "internal_waveplate": {"type": "boolean"},
                "coupling_reflectivity": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_periods": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "time_bin_ps": _POS,
                "time_bin_grid_ps": {"type": "array", "minItems": 1, "items": _POS},
                "window_periods": {"type": "integer", "minimum": 1},
                "bin_width_ps": _POS,
                "shard_periods": {"type": "integer", "minimum": 1},
                "workers": {"type": "integer", "minimum": 1},
                "preparation": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"control": _LABEL, "target": _LABEL},
                },
                "analysis": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"control": _LABEL, "target": _LABEL},
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "formats": {"type": "array", "uniqueItems": True, "minItems": 1,
                            "items": {"enum": ["csv", "json"]}},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variable": {"enum": list(SWEEP_VARIABLES)},
                "start": _NUM,
                "stop": _NUM,
                "num": {"type": "integer"},
            },
        },
    },
}

_NULLABLE_NUM = {"type": ["number", "null"]}
_PROVENANCE = {
    "type": "object",
    "required": ["config_hash", "seed", "mode", "version"],
    "properties": {"config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"}},
}
_MATRIX4 = {"type": "array", "minItems": 4, "maxItems": 4,
            "items": {"type": "array", "minItems": 4, "maxItems": 4, "items": _NUM}}
_KEYED_FLOATS = {"type": "object", "additionalProperties": _NUM}

OUTPUT_SCHEMAS: dict[str, dict] = {
    "truth_table.json": {
        "type": "object",
        "required": ["truth_table", "overlap", "E_HV", "E_DA", "E_RL", "fidelity",
                     "brightness", "M_estimate", "errors", "provenance"],
        "properties": {
            "truth_table": _MATRIX4,
            "overlap": {"type": "number", "minimum": 0, "maximum": 1},
            "fidelity": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
            "brightness": _NUM,
            "M_estimate": _NULLABLE_NUM,
            "provenance": _PROVENANCE,
        },
    },
    "correlations.json": {
        "type": "object",
        "required": ["time_bin_ps", "overlap", "settings", "E_HV", "E_DA", "E_RL", "fidelity",
                     "fidelity_err", "provenance"],
        "properties": {
            "settings": {
                "type": "object",
                "minProperties": 9,
                "additionalProperties": {
                    "type": "object",
                    "required": ["areas", "errors", "E", "E_err"],
                    "properties": {"E": {"type": "number", "minimum": -1, "maximum": 1}},
                },
            },
            "fidelity": {"type": "number", "minimum": 0, "maximum": 1},
            "provenance": _PROVENANCE,
        },
    },
    "peak_areas.json": {
        "type": "object",
        "required": ["analysis", "preparation", "time_bin_ps", "n_periods", "n_uncorrelated_sets",
                     "correlated", "correlated_err", "uncorrelated", "uncorrelated_err",
                     "analytic", "ratio", "ratio_err", "provenance"],
        "properties": {
            "correlated": _KEYED_FLOATS,
            "uncorrelated": _KEYED_FLOATS,
            "ratio": {"type": "object", "additionalProperties": _NULLABLE_NUM},
            "provenance": _PROVENANCE,
        },
    },
    "manifest.json": {
        "type": "object",
        "required": ["command", "config_hash", "seed", "mode", "version", "files"],
        "properties": {"files": {"type": "object", "additionalProperties": {"type": "string"}}},
    },
}

CSV_COLUMNS = {
    "overlap_vs_timebin.csv": ["bin_ps", "overlap", "overlap_err", "brightness"],
    "fidelity_vs_timebin.csv": ["bin_ps", "M", "fidelity", "fidelity_err", "brightness"],
    "histogram.csv": ["bin_center_ps", "counts"],
}

_DEFAULT_GRID_PS = [100.0, 200.0, 400.0, 750.0, 1000.0, 1500.0, 2000.0]


# ---------------------------------------------------------------- config

def load_config(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def source_from_config(block: dict) -> SourceParams:
    kwargs = {k: v for k, v in block.items() if k != "overlap"}
    ov = block["overlap"]
    if "constant" in ov:
        overlap = OverlapModel(constant=float(ov["constant"]))
    else:
        overlap = OverlapModel(table=tuple((row["time_bin_ps"], row["overlap"]) for row in ov["table"]))
    return SourceParams(overlap=overlap, **kwargs)


def circuit_from_config(block: dict):
    return build_cnot(hadamard_on=block.get("hadamard_on", "target"),
                      internal_waveplate=block.get("internal_waveplate", True),
                      coupling=block.get("coupling_reflectivity", 1.0 / 3.0))


def mc_from_config(block: dict, seed: int) -> MonteCarloSettings:
    keys = ("n_periods", "window_periods", "bin_width_ps", "shard_periods", "workers")
    return MonteCarloSettings(seed=seed, **{k: block[k] for k in keys if k in block})


# ---------------------------------------------------------------- serialization

def _clean(value):
    """numpy scalars and arrays to plain JSON values; non-finite floats rejected."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            raise ValueError("non-finite value in output")
        return v
    return value


def dump_json(data: dict) -> bytes:
    return (json.dumps(_clean(data), indent=2, ensure_ascii=False, allow_nan=False) + "\n").encode("utf-8")


def dump_csv(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)) and not math.isfinite(float(v)):
                raise ValueError("non-finite value in output")
            cells.append(repr(float(v)) if isinstance(v, (float, np.floating)) else v)
        writer.writerow(cells)
    return buf.getvalue().encode("utf-8")


def validate_artifact(name: str, payload: bytes) -> None:
    if name.endswith(".json"):
        schema = OUTPUT_SCHEMAS.get(name)
        if schema is not None:
            jsonschema.validate(json.loads(payload), schema)
        return
    lines = payload.decode("utf-8").split("\n")
    header = lines[0].split(",")
    expected = CSV_COLUMNS.get(name)
    if expected is not None and header != expected:
        raise ValueError(f"{name}: unexpected columns {header}")
    for line in lines[1:]:
        if line and len(line.split(",")) != len(header):
            raise ValueError(f"{name}: ragged row")


def write_atomic(directory: Path, artifacts: dict[str, bytes]) -> None:
    """Write every artifact to a temp file first, then rename them all into place."""
    directory.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, payload in artifacts.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=directory)
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            staged.append((tmp, directory / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


# ---------------------------------------------------------------- commands

class RunContext:
    def __init__(self, config: dict, mode: str, seed: int):
        self.config = config
        self.mode = mode
        self.seed = seed
        self.source = source_from_config(config["source"])
        self.circuit = circuit_from_config(config.get("gate", {}))
        self.exp = config.get("experiment", {})
        self.mc = mc_from_config(self.exp, seed) if mode == "mc" else None
        self.time_bin_ps = float(self.exp.get("time_bin_ps", 1000.0))
        TimeBinSpec(self.time_bin_ps, self.source.excitation_delay_ps)
        self.grid = [float(t) for t in self.exp.get("time_bin_grid_ps", _DEFAULT_GRID_PS)]
        # provenance covers everything that changes the numbers, not where they land
        hashed = {k: v for k, v in config.items() if k != "output"}
        self.config_hash = config_hash({"config": hashed, "mode": mode, "seed": seed})

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed, "mode": self.mode,
                "version": __version__}


def cmd_truth_table(ctx: RunContext, args) -> dict[str, Any]:
    report = gate_report(ctx.source, ctx.circuit, ctx.time_bin_ps, ctx.mode, ctx.mc, with_bell=False)
    rows = []
    for i, t_bin in enumerate(ctx.grid):
        table = truth_table(ctx.source, ctx.circuit, t_bin, ctx.mode, ctx.mc, seed_key=i + 1)
        rows.append([t_bin, truth_table_overlap(table), truth_table_overlap_err(table),
                     brightness_in_bin(ctx.source, t_bin)])
    doc = report.to_json_dict()
    doc["provenance"] = ctx.provenance
    return {"truth_table.json": doc,
            "overlap_vs_timebin.csv": (CSV_COLUMNS["overlap_vs_timebin.csv"], rows)}


def cmd_bell(ctx: RunContext, args) -> dict[str, Any]:
    rows = []
    for i, t_bin in enumerate(ctx.grid):
        corr = bell_correlations(ctx.source, ctx.circuit, t_bin, ctx.mode, ctx.mc, seed_key=i + 1)
        f, f_err = fidelity_from_correlations(corr)
        rows.append([t_bin, effective_overlap(ctx.source, t_bin), f, f_err,
                     brightness_in_bin(ctx.source, t_bin)])
    corr = bell_correlations(ctx.source, ctx.circuit, ctx.time_bin_ps, ctx.mode, ctx.mc, bases=ALL_BASES)
    f, f_err = fidelity_from_correlations(corr)
    doc = {
        "time_bin_ps": ctx.time_bin_ps,
        "overlap": effective_overlap(ctx.source, ctx.time_bin_ps),
        "preparation": "DH",
        "settings": {key: {"areas": c.areas, "errors": c.errors, "E": float(np.clip(c.E, -1, 1)),
                           "E_err": c.E_err} for key, c in corr.items()},
        "E_HV": corr["HV/HV"].E,
        "E_DA": corr["DA/DA"].E,
        "E_RL": corr["RL/RL"].E,
        "fidelity": f,
        "fidelity_err": f_err,
        "provenance": ctx.provenance,
    }
    return {"fidelity_vs_timebin.csv": (CSV_COLUMNS["fidelity_vs_timebin.csv"], rows),
            "correlations.json": doc}


def cmd_histogram(ctx: RunContext, args) -> dict[str, Any]:
    """Always Monte Carlo: a histogram has no analytic counterpart beyond its peak areas."""
    mc = ctx.mc or mc_from_config(ctx.exp, ctx.seed)
    prep_cfg = ctx.exp.get("preparation", {})
    ana_cfg = ctx.exp.get("analysis", {})
    prep = (prep_cfg.get("control", "V"), prep_cfg.get("target", "H"))
    analysis = AnalysisSetting.from_labels(ana_cfg.get("control", "V"), ana_cfg.get("target", "H"))
    h = simulate_histogram(ctx.source, ctx.circuit, prep, analysis, mc.n_periods,
                           np.random.SeedSequence(mc.seed), time_bin_ps=ctx.time_bin_ps,
                           window_periods=mc.window_periods, bin_width_ps=mc.bin_width_ps,
                           shard_periods=mc.shard_periods, workers=mc.workers)
    bin_spec = TimeBinSpec(ctx.time_bin_ps, ctx.source.excitation_delay_ps)
    areas = overlap_correction(h, ctx.source.decay_time_ps, bin_spec, ctx.source.jitter_sigma_ps)
    overlap = effective_overlap(ctx.source, ctx.time_bin_ps)
    expected_unc = analytic_uncorrelated_areas(ctx.source, ctx.circuit, prep, analysis)
    expected_cor = analytic_correlated_areas(ctx.source, ctx.circuit, prep, analysis, overlap)

    correlated, correlated_err, uncorrelated, uncorrelated_err, ratio, ratio_err = {}, {}, {}, {}, {}, {}
    for i, k in enumerate(h.k_values):
        delay = f"{k * ctx.source.excitation_delay_ns:+.1f}"
        correlated[delay] = areas.areas[(0, k)] / h.n_periods
        correlated_err[delay] = math.sqrt(areas.variances[(0, k)]) / h.n_periods
        mean, err = areas.uncorrelated_mean(k)
        uncorrelated[delay], uncorrelated_err[delay] = mean, err
        exp = expected_unc[i]
        ratio[delay] = mean / exp if exp > 0 else None
        ratio_err[delay] = err / exp if exp > 0 else None
    normalized = None
    if h.pair_mode_factor is not None:
        norm = normalize(areas, min_reference_peaks=1)
        normalized = {f"{k * ctx.source.excitation_delay_ns:+.1f}": norm.correlated[k] for k in h.k_values}
    doc = {
        "analysis": analysis.label,
        "preparation": "".join(prep),
        "time_bin_ps": ctx.time_bin_ps,
        "n_periods": h.n_periods,
        "n_uncorrelated_sets": len(areas.uncorrelated_keys(0)),
        "units": "full peak areas per period (correlated) or per period pair (uncorrelated); keys are delays in ns",
        "correlated": correlated,
        "correlated_err": correlated_err,
        "correlated_normalized": normalized,
        "uncorrelated": uncorrelated,
        "uncorrelated_err": uncorrelated_err,
        "analytic": {
            "correlated": {d: v for d, v in zip(correlated, expected_cor)},
            "uncorrelated": {d: v for d, v in zip(correlated, expected_unc)},
        },
        "ratio": ratio,
        "ratio_err": ratio_err,
        "provenance": ctx.provenance,
    }
    rows = [[float(c), int(n)] for c, n in zip(h.centers, h.counts)]
    return {"histogram.csv": (CSV_COLUMNS["histogram.csv"], rows), "peak_areas.json": doc}


def cmd_sweep(ctx: RunContext, args) -> dict[str, Any]:
    block = ctx.config.get("sweep", {})
    variable = args.variable or block.get("variable")
    if variable is None:
        raise ConfigError("sweep needs a variable (--variable or sweep.variable)")
    if args.range is not None:
        grid = parse_range(args.range)
    elif {"start", "stop", "num"} <= block.keys():
        grid = sweep_grid(block["start"], block["stop"], block["num"])
    else:
        raise ConfigError("sweep needs a range (--range or sweep.start/stop/num)")
    header, rows = sweep(ctx.source, ctx.circuit, variable, grid, ctx.time_bin_ps, ctx.mode, ctx.mc)
    return {"sweep.csv": (header, rows)}


COMMANDS: dict[str, Callable] = {
    "truth-table": cmd_truth_table,
    "bell": cmd_bell,
    "histogram": cmd_histogram,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulate", description="Post-selected photonic CNOT simulator.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="overrides experiment.seed")
    parser.add_argument("--out", default=None, help="overrides output.directory")
    parser.add_argument("--mode", choices=("analytic", "mc"), default="analytic")
    parser.add_argument("--variable", choices=SWEEP_VARIABLES, default=None, help="sweep only")
    parser.add_argument("--range", default=None, help="sweep only: start:stop:num")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args: argparse.Namespace) -> Path:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("experiment", {}).get("seed", 0)
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    ctx = RunContext(config, args.mode, seed)
    out_block = config.get("output", {})
    out_dir = Path(args.out or out_block.get("directory", "out"))
    formats = set(out_block.get("formats", ["csv", "json"]))

    produced = COMMANDS[args.command](ctx, args)
    artifacts: dict[str, bytes] = {}
    for name, content in sorted(produced.items()):
        if name.rsplit(".", 1)[1] not in formats:
            continue
        payload = dump_json(content) if name.endswith(".json") else dump_csv(*content)
        validate_artifact(name, payload)
        artifacts[name] = payload
    manifest = {
        "command": args.command,
        **ctx.provenance,
        "files": {name: hashlib.sha256(data).hexdigest() for name, data in artifacts.items()},
    }
    artifacts["manifest.json"] = dump_json(manifest)
    validate_artifact("manifest.json", artifacts["manifest.json"])
    write_atomic(out_dir, artifacts)
    for name in artifacts:
        log.info("wrote %s", out_dir / name)
    return out_dir


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run(args)
    except (ValueError, NotImplementedError, jsonschema.ValidationError) as exc:
        print(f"simulate: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
