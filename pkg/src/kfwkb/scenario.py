"""
Scenario files: a symbol, initial data, time horizon and output grids in one JSON document.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .hamilton import InitialData
from .symbol import Symbol

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["name", "units", "symbol", "initial", "T", "dt"],
    "properties": {
        "name": {"type": "string"},
        "units": {"type": "object"},
        "symbol": {"type": "object", "required": ["dim"]},
        "initial": {"type": "object", "required": ["S0", "alpha"]},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "snapshot_times": {"type": "array", "items": {"type": "number"}},
        "eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "x_grid": {"type": "object", "required": ["lo", "hi", "n"]},
    },
}


@dataclass
class Scenario:
    name: str
    symbol: Symbol
    initial: InitialData
    T: float
    dt: float
    snapshot_times: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    x_grid: np.ndarray | None = None
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        import jsonschema

        jsonschema.validate(d, SCENARIO_SCHEMA)
        sym = Symbol.from_spec(d["symbol"])
        init = InitialData.from_spec(d["initial"], sym.dim)
        g = d.get("x_grid")
        xg = None if g is None else np.linspace(g["lo"], g["hi"], int(g["n"]))
        T = float(d["T"])
        snaps = [float(t) for t in d.get("snapshot_times", [T])]
        if any(t < 0 or t > T for t in snaps):
            raise ValueError("snapshot times must lie in [0, T]")
        return cls(d["name"], sym, init, T, float(d["dt"]), snaps,
                   [float(e) for e in d.get("eps", [])], xg, d)


def builtin_names() -> list:
    return sorted(p.name[:-5] for p in resources.files("kfwkb.scenarios").iterdir() if p.name.endswith(".json"))


def load_scenario(name_or_path) -> Scenario:
    """Load a scenario from a path or by the name of a shipped scenario."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    else:
        res = resources.files("kfwkb.scenarios").joinpath(f"{p.stem}.json")
        if not res.is_file():
            raise FileNotFoundError(f"no scenario file {name_or_path!r}; shipped: {builtin_names()}")
        text = res.read_text()
    return Scenario.from_dict(json.loads(text))
