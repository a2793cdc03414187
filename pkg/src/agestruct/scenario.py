"""Scenario documents: schema validation, loading, saving and presets."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .core import AgeGrid, AgeProfile, VitalRates, build_grid
from .equilibrium import solve_equilibrium
from .simulate import bands, uniform_band

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_PARAM = {"oneOf": [_NUM, {"enum": ["a_min", "a_max", "a1"]},
                    {"type": "array", "items": _NUM, "minItems": 1}]}
_PROFILE = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": list(AgeProfile._DEFAULTS)}},
    "additionalProperties": _PARAM,
}
_ETA = {"type": "object", "properties": {"kind": {"enum": ["linear", "log1p"]},
                                         "k": {"type": "number", "exclusiveMinimum": 0}},
        "additionalProperties": False}
_DENSITY = {"type": "object", "properties": {"base": _PROFILE, "slope": _PROFILE},
            "additionalProperties": False}
_BAND = {"type": "array", "prefixItems": [_NUM, _NUM, {"type": "number", "minimum": 0}],
         "minItems": 3, "maxItems": 3}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "agestruct scenario",
    "type": "object",
    "required": ["schema_version", "name", "grid", "rates", "initial", "run"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "grid": {
            "type": "object",
            "required": ["a1", "da", "a_min", "a_max"],
            "additionalProperties": False,
            "properties": {"a1": {"type": "number", "exclusiveMinimum": 0},
                           "da": {"type": "number", "exclusiveMinimum": 0},
                           "a_min": {"type": "number", "exclusiveMinimum": 0},
                           "a_max": {"type": "number", "exclusiveMinimum": 0}},
        },
        "rates": {
            "type": "object",
            "required": ["fertility"],
            "additionalProperties": False,
            "properties": {
                "fertility": {"type": "object", "required": ["shape"], "additionalProperties": False,
                              "properties": {"shape": _PROFILE, "damping": {"type": "number", "minimum": 0}}},
                "mu0": _DENSITY, "mu1": _DENSITY, "mu2": _PROFILE,
                "eta0": _ETA, "eta1": _ETA, "eta2": _ETA,
                "omega0": _PROFILE, "omega1": _PROFILE,
            },
        },
        "initial": {
            "type": "object",
            "required": ["family"],
            "oneOf": [
                {"properties": {"family": {"const": "uniform_band"}, "lo": _NUM, "hi": _NUM,
                                "total": {"type": "number", "minimum": 0}},
                 "required": ["lo", "hi", "total"], "additionalProperties": False},
                {"properties": {"family": {"const": "bands"}, "bands": {"type": "array", "items": _BAND,
                                                                        "minItems": 1}},
                 "required": ["bands"], "additionalProperties": False},
                {"properties": {"family": {"const": "equilibrium"}, "scale": {"type": "number", "minimum": 0}},
                 "additionalProperties": False},
                {"properties": {"family": {"const": "tabulated"},
                                "ages": {"type": "array", "items": _NUM, "minItems": 1},
                                "values": {"type": "array", "items": {"type": "number", "minimum": 0},
                                           "minItems": 1}},
                 "required": ["ages", "values"], "additionalProperties": False},
            ],
        },
        "run": {
            "type": "object",
            "required": ["t_end"],
            "additionalProperties": False,
            "properties": {"t_end": {"type": "number", "exclusiveMinimum": 0},
                           "snapshot_every": {"type": "number", "exclusiveMinimum": 0}},
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "boolean"} for k in ("equilibrium", "stability", "linear", "lyapunov")},
        },
        "population_ceiling": {"type": "number", "exclusiveMinimum": 0},
        "notes": {"type": "string"},
    },
}


class ScenarioError(ValueError):
    """A scenario document is invalid; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _finite(obj, path="$"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ScenarioError(path, "value must be finite")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _finite(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _finite(v, f"{path}[{i}]")


def _field(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "$"


@dataclass(frozen=True, eq=False)
class Scenario:
    doc: dict

    @property
    def name(self) -> str:
        return self.doc["name"]

    @property
    def grid(self) -> AgeGrid:
        g = self.doc["grid"]
        return build_grid(g["a1"], g["da"], g["a_min"], g["a_max"])

    @property
    def rates(self) -> VitalRates:
        return VitalRates.from_dict(self.doc["rates"])

    @property
    def initial(self) -> dict:
        return self.doc["initial"]

    @property
    def t_end(self) -> float:
        return self.doc["run"]["t_end"]

    @property
    def snapshot_every(self) -> float | None:
        return self.doc["run"].get("snapshot_every")

    @property
    def analysis(self) -> dict:
        base = {"equilibrium": True, "stability": True, "linear": False, "lyapunov": False}
        base.update(self.doc.get("analysis", {}))
        return base

    @property
    def population_ceiling(self) -> float | None:
        return self.doc.get("population_ceiling")

    def to_dict(self) -> dict:
        return copy.deepcopy(self.doc)

    def digest(self) -> str:
        text = json.dumps(self.doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def replace(self, **changes) -> "Scenario":
        """Copy with overrides; keys are dotted paths such as ``grid.da``."""
        doc = self.to_dict()
        for path, value in changes.items():
            set_path(doc, path, value)
        return parse_scenario(doc)

    def initial_density(self, grid: AgeGrid | None = None) -> np.ndarray:
        grid = grid or self.grid
        init = self.initial
        fam = init["family"]
        if fam == "uniform_band":
            return uniform_band(grid, init["lo"], init["hi"], init["total"])
        if fam == "bands":
            return bands(grid, init["bands"])
        if fam == "tabulated":
            ages, vals = np.asarray(init["ages"], float), np.asarray(init["values"], float)
            return np.interp(grid.ages, ages, vals, left=0.0, right=0.0)
        eq = solve_equilibrium(self.rates, grid)
        return eq.phi_hat * init.get("scale", 1.0)


def set_path(doc: dict, path: str, value):
    keys = path.split(".")
    node = doc
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ScenarioError(path, "no such field")
        node = node[k]
    node[keys[-1]] = value


def get_path(doc: dict, path: str):
    node = doc
    for k in path.split("."):
        if not isinstance(node, dict) or k not in node:
            raise ScenarioError(path, "no such field")
        node = node[k]
    return node


def parse_scenario(doc: dict) -> Scenario:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as err:
        raise ScenarioError(_field(err), err.message) from None
    _finite(doc)
    s = Scenario(copy.deepcopy(doc))
    try:
        grid = s.grid
    except ValueError as err:
        raise ScenarioError("grid", str(err)) from None
    try:
        rates = s.rates
        rates.fertility.shape(grid.ages, grid)
        for name in ("mu2", "omega0", "omega1"):
            getattr(rates, name)(grid.ages, grid)
        for name in ("mu0", "mu1"):
            getattr(rates, name).base(grid.ages, grid)
            getattr(rates, name).slope(grid.ages, grid)
    except (ValueError, TypeError, KeyError) as err:
        raise ScenarioError("rates", str(err)) from None
    if s.initial["family"] == "uniform_band" and not s.initial["lo"] < s.initial["hi"]:
        raise ScenarioError("initial", "band needs lo < hi")
    if s.initial["family"] == "tabulated" and len(s.initial["ages"]) != len(s.initial["values"]):
        raise ScenarioError("initial", "ages and values differ in length")
    return s


def preset_names() -> list[str]:
    root = resources.files("agestruct") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(source: str | Path) -> Scenario:
    """Parse a scenario file, or a preset when ``source`` names one."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif str(source) in preset_names():
        text = (resources.files("agestruct") / "presets" / f"{source}.json").read_text()
    else:
        raise FileNotFoundError(f"no scenario file or preset named {source!r}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ScenarioError("$", f"not valid JSON: {err}") from None
    return parse_scenario(doc)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.doc, indent=2) + "\n")
