"""Experiment files: JSON documents describing runs and sweeps."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from ppacdc import graph as graphs
from ppacdc.protocol import ZOOM_IN_RULES, ProtocolParams
from ppacdc.sim import RandomGraphSpec, SimConfig, UniformInit


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_INT = {"type": "integer"}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["graph", "protocol"],
    "properties": {
        "description": {"type": "string"},
        "graph": {
            "oneOf": [
                {"type": "object", "additionalProperties": False,
                 "required": ["kind", "n"],
                 "properties": {"kind": {"enum": ["ring", "complete"]},
                                "n": {"type": "integer", "minimum": 2}}},
                {"type": "object", "additionalProperties": False,
                 "required": ["kind", "n", "extra_edge_prob", "seed"],
                 "properties": {"kind": {"const": "random"},
                                "n": {"type": "integer", "minimum": 2},
                                "extra_edge_prob": {"type": "number", "minimum": 0,
                                                    "maximum": 1},
                                "seed": {"type": "integer", "minimum": 0}}},
                {"type": "object", "additionalProperties": False,
                 "required": ["kind", "path"],
                 "properties": {"kind": {"const": "file"}, "path": {"type": "string"}}},
                {"type": "object", "additionalProperties": False,
                 "required": ["kind", "n", "edges"],
                 "properties": {"kind": {"const": "edges"},
                                "n": {"type": "integer", "minimum": 2},
                                "edges": {"type": "array",
                                          "items": {"type": "array", "items": _INT,
                                                    "minItems": 2, "maxItems": 2}}}},
            ]
        },
        "x0": {
            "oneOf": [
                {"type": "object", "additionalProperties": False,
                 "required": ["kind"],
                 "properties": {"kind": {"const": "uniform"}, "low": _NUM, "high": _NUM}},
                {"type": "object", "additionalProperties": False,
                 "required": ["kind", "values"],
                 "properties": {"kind": {"const": "values"},
                                "values": {"type": "array", "items": _NUM}}},
            ]
        },
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "required": ["gamma", "alpha", "d_bar", "bits"],
            "properties": {
                "gamma": {"type": "number", "exclusiveMinimum": 0},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "d_bar": {"type": "integer", "minimum": 1},
                "bits": {"type": "integer", "minimum": 2, "maximum": 53},
                "delta0": {"type": "number", "exclusiveMinimum": 0},
                "sigma0": _NUM,
                "zoom_in_rule": {"enum": list(ZOOM_IN_RULES)},
            },
        },
        "max_iters": {"type": "integer", "minimum": 1},
        "conv_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "exact_mode": {"type": "boolean"},
        "runs": {
            "type": "array",
            "items": {"type": "object", "additionalProperties": False,
                      "required": ["name"],
                      "properties": {"name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                                     "overrides": {"type": "object"}}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["alphas", "bits", "n_seeds"],
            "properties": {
                "alphas": {"type": "array", "minItems": 1,
                           "items": {"type": "number", "exclusiveMinimum": 0}},
                "bits": {"type": "array", "minItems": 1,
                         "items": {"type": "integer", "minimum": 2, "maximum": 53}},
                "n_seeds": {"type": "integer", "minimum": 1},
                "resample_topology": {"type": "boolean"},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "prefix": {"type": "string"}},
        },
    },
}


@dataclass
class Experiment:
    name: str
    doc: dict
    base_dir: Path

    @property
    def has_sweep(self) -> bool:
        return "sweep" in self.doc

    def variants(self) -> list[tuple[str, dict]]:
        """``(name, document)`` for every run variant, overrides applied."""
        runs = self.doc.get("runs")
        if not runs:
            return [(self.name, self.doc)]
        out = []
        for spec in runs:
            doc = {k: v for k, v in self.doc.items() if k != "runs"}
            doc = apply_overrides(doc, spec.get("overrides", {}))
            validate(doc)
            out.append((f"{self.name}_{spec['name']}", doc))
        return out


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid experiment at {where}: {exc.message}") from None


def parse_json(text: str, source: str = "<string>") -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{source}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return doc


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(doc: dict, overrides: dict[str, Any]) -> dict:
    """Return a copy of ``doc`` with dotted-key assignments applied."""
    doc = copy.deepcopy(doc)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = doc
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {dotted!r}: {part!r} is not an object")
            node = child
        node[parts[-1]] = value
    return doc


def load(path: str | os.PathLike, overrides: dict[str, Any] | None = None) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return from_text(text, path.stem, path.parent, overrides, source=str(path))


def from_text(text: str, name: str, base_dir: Path, overrides=None,
              source: str = "<string>") -> Experiment:
    doc = parse_json(text, source)
    if overrides:
        doc = apply_overrides(doc, overrides)
    validate(doc)
    return Experiment(name, doc, Path(base_dir))


def preset_names() -> list[str]:
    files = resources.files("ppacdc") / "presets"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def preset_text(name: str) -> str:
    res = resources.files("ppacdc") / "presets" / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return res.read_text(encoding="utf-8")


def load_preset(name: str, overrides: dict[str, Any] | None = None) -> Experiment:
    return from_text(preset_text(name), name, Path.cwd(), overrides, source=f"preset {name}")


def build_graph(spec: dict, base_dir: Path):
    kind = spec["kind"]
    if kind == "ring":
        return graphs.ring(spec["n"])
    if kind == "complete":
        return graphs.complete(spec["n"])
    if kind == "random":
        return RandomGraphSpec(spec["n"], float(spec["extra_edge_prob"]), spec["seed"])
    if kind == "file":
        p = Path(spec["path"])
        if not p.is_absolute():
            p = base_dir / p
        try:
            return graphs.load_edge_list(p)
        except OSError as exc:
            raise ConfigError(f"cannot read graph file {p}: {exc.strerror}") from None
    return graphs.Digraph.from_edges(spec["n"], (tuple(e) for e in spec["edges"]))


def to_sim_config(doc: dict, base_dir: Path, seed: int | None = None) -> SimConfig:
    try:
        g = build_graph(doc["graph"], base_dir)
        x0_spec = doc.get("x0", {"kind": "uniform"})
        if x0_spec["kind"] == "values":
            x0 = tuple(x0_spec["values"])
        else:
            x0 = UniformInit(float(x0_spec.get("low", 0.0)), float(x0_spec.get("high", 1000.0)))
        proto = ProtocolParams(**doc["protocol"])
        cfg = SimConfig(
            graph=g,
            protocol=proto,
            x0=x0,
            max_iters=doc.get("max_iters", 20_000),
            conv_tolerance=doc.get("conv_tolerance", 1e-8),
            seed=doc.get("seed", 0) if seed is None else seed,
            exact_mode=doc.get("exact_mode", False),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg
