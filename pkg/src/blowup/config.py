"""Run configuration: strict JSON schema, defaults and override precedence.

Precedence is command-line flag > environment (output directory only) >
configuration file > built-in default.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigurationError

CONFIG_VERSION = 1
OUTPUT_ENV = "BLOWUP_OUTPUT_DIR"

_number = {"type": "number"}
_int = {"type": "integer"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "mode"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "mode": {"enum": ["synth", "solve"]},
        "dimension": {"type": "integer", "minimum": 2},
        "patch_config": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dimension"],
            "properties": {
                "dimension": {"type": "integer", "minimum": 2},
                "patches": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["center", "radius"],
                        "properties": {"center": {"type": "array", "items": _number}, "radius": _number},
                    },
                },
                "seed": {"type": "array", "items": _number},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "required": ["cells", "boundary"],
            "properties": {
                "cells": {"type": "integer", "minimum": 4},
                "boundary": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["hyperplane", "radial", "quadratic"]},
                        "radius": _number,
                        "B": {"type": "array", "items": _number},
                    },
                },
                "threshold_factor": _number,
                "release_factor": _number,
                "damping": _number,
                "max_outer_iterations": _int,
                "linear_solver_tolerance": _number,
            },
        },
        "scales": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_start": _number,
                "t_end": _number,
                "steps": {"type": "integer", "minimum": 1},
                "octaves": {"type": "number", "exclusiveMinimum": 0},
                "steps_per_octave": {"type": "integer", "minimum": 1},
            },
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"resolution": {"type": ["integer", "null"], "minimum": 5}},
        },
        "integration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["closed", "sampled"]},
                "samples": {"type": "integer", "minimum": 2},
                "seed": {"type": ["integer", "null"], "minimum": 0},
            },
        },
        "k_max": {"type": "integer", "minimum": 0},
        "T": {"type": ["number", "null"]},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"directory": {"type": "string"}, "prefix": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "scales": {"t_start": 0.0, "octaves": 10, "steps_per_octave": 8},
    "quadrature": {"resolution": None},
    "integration": {"method": "closed", "samples": 20000, "seed": None},
    "k_max": 8,
    "T": None,
    "output": {"directory": "blowup-output", "prefix": "run"},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def bundled_config_names():
    return sorted(p.name[:-5] for p in resources.files("blowup").joinpath("configs").iterdir() if p.name.endswith(".json"))


def read_config_text(name_or_path):
    """Text of a configuration file, or of a bundled configuration by name."""
    path = Path(name_or_path)
    if path.exists():
        return path.read_text(), str(path)
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    bundled = resources.files("blowup").joinpath("configs", f"{stem}.json")
    if bundled.is_file():
        return bundled.read_text(), f"<bundled {stem}>"
    raise ConfigurationError(f"configuration {name_or_path!r} not found (bundled: {', '.join(bundled_config_names())})")


def parse_config_text(text, source="<config>"):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validate_config(data, source)
    return data


def validate_config(data, source="<config>"):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "(top level)"
        raise ConfigurationError(f"{source}: field {where}: {err.message}")
    mode = data["mode"]
    if mode == "synth" and "patch_config" not in data:
        raise ConfigurationError(f"{source}: field patch_config: required in synth mode")
    if mode == "solve" and "solver" not in data:
        raise ConfigurationError(f"{source}: field solver: required in solve mode")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration (defaults and overrides applied)."""

    data: dict

    @classmethod
    def build(cls, file_data=None, overrides=None, environ=None):
        file_data = file_data or {}
        data = _merge(DEFAULTS, file_data)
        if "scales" in file_data:
            data["scales"] = _merge({"t_start": 0.0}, file_data["scales"])
        given = {k: v for k, v in (overrides or {}).items() if v is not None}
        if {"scales.t_end", "scales.steps"} & given.keys():
            for key in ("octaves", "steps_per_octave"):
                data["scales"].pop(key, None)
        if {"scales.octaves", "scales.steps_per_octave"} & given.keys():
            for key in ("t_end", "steps"):
                data["scales"].pop(key, None)
        for path, value in given.items():
            node = data
            keys = path.split(".")
            for key in keys[:-1]:
                node = node.setdefault(key, {})
            node[keys[-1]] = value
        env = os.environ if environ is None else environ
        if env.get(OUTPUT_ENV) and "output.directory" not in given:
            data["output"]["directory"] = env[OUTPUT_ENV]
        validate_config(data, "<resolved config>")
        cfg = cls(data)
        cfg.t_values()  # alignment check
        if cfg.data["integration"]["method"] == "sampled" and cfg.data["integration"]["seed"] is None:
            raise ConfigurationError("field integration/seed: required when integration/method is 'sampled'")
        return cfg

    @property
    def mode(self):
        return self.data["mode"]

    @property
    def dimension(self):
        if "dimension" in self.data:
            return self.data["dimension"]
        if self.mode == "synth":
            return self.data["patch_config"]["dimension"]
        return 2

    def t_values(self):
        from .dynamics import LN2, scale_grid

        sc = self.data["scales"]
        t0 = float(sc.get("t_start", 0.0))
        if "t_end" in sc or "steps" in sc:
            if "t_end" not in sc or "steps" not in sc:
                raise ConfigurationError("field scales: t_end and steps must be given together")
            if "octaves" in sc or "steps_per_octave" in sc:
                raise ConfigurationError("field scales: give either t_end/steps or octaves/steps_per_octave")
            try:
                return scale_grid(t0, float(sc["t_end"]), int(sc["steps"]), dyadic=True)
            except Exception as exc:
                raise ConfigurationError(f"field scales: {exc}") from exc
        octaves = float(sc.get("octaves", 10))
        per = int(sc.get("steps_per_octave", 8))
        steps = octaves * per
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigurationError("field scales: octaves * steps_per_octave must be an integer")
        return scale_grid(t0, t0 + octaves * LN2, int(round(steps)), dyadic=True)

    def echo(self):
        """Configuration as reported; output location is omitted so that
        reports do not depend on where they are written."""
        out = copy.deepcopy(self.data)
        out["output"] = {"prefix": out["output"]["prefix"]}
        return out

    @property
    def output_dir(self):
        return Path(self.data["output"]["directory"])

    @property
    def prefix(self):
        return self.data["output"]["prefix"]

