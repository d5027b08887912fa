"""JSON schemas and CSV column orders for every file the command line writes."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema

CSV_COLUMNS = {
    "trajectories": ["alpha", "t", "x", "p", "det_Jx", "S", "rho"],
    "manifold": ["alpha", "x", "p", "S", "rho", "det_Jx", "branch_id"],
    "value": ["x", "phi", "p_left", "p_right", "branch_id"],
    "density": ["x", "rho_reg", "branch_id"],
    "solution": ["x", "u_as", "phi_value"],
    "oracle": ["x", "u", "log_limit"],
}

_num = {"type": ["number", "string"]}  # non-finite numbers are written as strings
_shock = {
    "type": "object",
    "required": ["x", "p_left", "p_right", "speed", "mass"],
    "properties": {k: _num for k in ("x", "p_left", "p_right", "speed", "mass", "alpha_left", "alpha_right", "S")},
}
_criterion = {
    "type": "object",
    "required": ["id", "name", "status", "measured", "threshold"],
    "properties": {"id": {"type": "integer"}, "name": {"type": "string"},
                   "status": {"enum": ["pass", "FAIL", "skip"]}, "measured": {"type": "object"},
                   "threshold": {"type": "string"}},
}

SCHEMAS = {
    "summary": {
        "type": "object",
        "required": ["scenario", "scenario_hash", "caustic", "shocks", "snapshots", "files"],
        "properties": {"caustic": {"type": "object", "required": ["detected", "formula"]},
                       "shocks": {"type": "array", "items": _shock},
                       "files": {"type": "array", "items": {"type": "string"}}},
    },
    "shocks": {
        "type": "object",
        "required": ["caustic_time", "final", "history"],
        "properties": {"final": {"type": "array", "items": _shock},
                       "history": {"type": "array", "items": {
                           "type": "object", "required": ["t", "shocks"],
                           "properties": {"t": {"type": "number"},
                                          "shocks": {"type": "array", "items": _shock}}}}},
    },
    "backward_report": {
        "type": "object",
        "required": ["scenario_hash", "terra", "fills", "reconstruction", "theorem3", "lemma"],
        "properties": {"terra": {"type": "object", "required": ["history"]},
                       "fills": {"type": "array"},
                       "lemma": {"type": "object", "required": ["status"]}},
    },
    "report": {
        "type": "object",
        "required": ["scenario_hash", "caustic", "shocks", "terra", "lemma", "theorem1", "theorem3", "criteria"],
        "properties": {"scenario_hash": {"type": "string"},
                       "criteria": {"type": "array", "items": _criterion},
                       "passed": {"type": "boolean"}},
    },
    "sweep": {
        "type": "object",
        "required": ["scenario_hash", "rows"],
        "properties": {"rows": {"type": "array", "items": {"type": "object", "required": ["eps", "t"]}}},
    },
}


def schema_for(path: Path) -> str | None:
    name = Path(path).stem
    if Path(path).suffix == ".json":
        return name if name in SCHEMAS else None
    kind = name.split("_")[0]
    return kind if kind in CSV_COLUMNS else None


def validate_file(path) -> None:
    """Validate one emitted file against its schema; raises on mismatch."""
    path = Path(path)
    kind = schema_for(path)
    if kind is None:
        raise ValueError(f"no schema documented for {path.name}")
    if path.suffix == ".json":
        jsonschema.validate(json.loads(path.read_text()), SCHEMAS[kind])
        return
    with path.open(newline="") as fh:
        header = next(csv.reader(fh))
    if header != CSV_COLUMNS[kind]:
        raise ValueError(f"{path.name}: columns {header} != {CSV_COLUMNS[kind]}")


def validate_dir(out) -> list:
    """Validate every CSV/JSON file in ``out``; returns the names checked."""
    names = []
    for p in sorted(Path(out).iterdir()):
        if p.suffix in (".csv", ".json"):
            validate_file(p)
            names.append(p.name)
    return names
