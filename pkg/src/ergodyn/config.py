"""Experiment configuration: YAML parsing, schema checks with line numbers, canonical hashing."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import yaml

from .models import MEASURES, SYSTEMS

METHODS = ("lyapunov", "katok", "brin-katok", "riemannian-local", "gibbs", "report")
COMMON_KEYS = {"method", "r_list", "n_list", "delta", "window", "n_samples", "panel"}
METHOD_KEYS = {
    "lyapunov": {"steps"},
    "katok": set(),
    "brin-katok": set(),
    "riemannian-local": {"proposal"},
    "gibbs": {"r", "T_max", "base_points", "mode", "log_c_max"},
    "report": {"tol", "riem_panel"},
}
TOP_KEYS = {"system", "measure", "seed", "output", "cloud", "stages"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass
class ExperimentConfig:
    system: str
    measure: str
    seed: int
    stages: list
    output: str = "out"
    cloud: int | None = None
    point_file: str | None = None
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        """Hash of the experiment content; where results are written is not part of it."""
        return config_hash({k: v for k, v in self.raw.items() if k != "output"})


def config_hash(data: Any) -> str:
    """sha256 of canonical JSON: key order, whitespace and comments do not matter."""
    text = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(text.encode()).hexdigest()


def _construct(node, lines: dict, path: tuple):
    """Plain Python value of a YAML node; records the 1-based line of every node by path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = yaml.safe_load(yaml.serialize(k)) if not isinstance(k, yaml.ScalarNode) else k.value
            lines[path + (key,)] = k.start_mark.line + 1
            out[key] = _construct(v, lines, path + (key,))
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, lines, path + (i,)) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          None if mark is None else mark.line + 1, source) from None
    if node is None:
        raise ConfigError("empty config", 1, source)
    lines: dict = {}
    data = _construct(node, lines, ())

    def fail(msg, path=()):
        while path and path not in lines:
            path = path[:-1]
        raise ConfigError(msg, lines.get(path, 1), source)

    if not isinstance(data, dict):
        fail("top level must be a mapping")
    for key in data:
        if key not in TOP_KEYS:
            fail(f"unknown key {key!r}", (key,))
    for key in ("system", "measure", "seed", "stages"):
        if key not in data:
            fail(f"missing required key {key!r}")
    system = data["system"]
    if system not in SYSTEMS:
        fail(f"unknown system {system!r}; choose from {sorted(SYSTEMS)}", ("system",))
    measure, point_file = data["measure"], None
    if not isinstance(measure, str):
        fail("measure must be a string", ("measure",))
    if measure not in MEASURES[system]:
        if measure.endswith((".csv", ".txt")):
            measure, point_file = "point-file", data["measure"]
        else:
            fail(f"measure {measure!r} is not available for {system}", ("measure",))
    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        fail("seed must be an integer in [0, 2^64)", ("seed",))
    output = data.get("output", "out")
    if not isinstance(output, str):
        fail("output must be a path string", ("output",))
    cloud = data.get("cloud")
    if cloud is not None and (isinstance(cloud, bool) or not isinstance(cloud, int) or cloud < 1):
        fail("cloud must be a positive integer", ("cloud",))
    stages = data["stages"]
    if not isinstance(stages, list) or not stages:
        fail("stages must be a non-empty list", ("stages",))
    for i, stage in enumerate(stages):
        _check_stage(stage, ("stages", i), fail)
    return ExperimentConfig(system, measure, seed, stages, output, cloud, point_file, data)


def _check_stage(stage, path, fail):
    if not isinstance(stage, dict):
        fail("each stage must be a mapping", path)
    method = stage.get("method")
    if method not in METHODS:
        fail(f"stage method must be one of {list(METHODS)}", path + ("method",) if "method" in stage else path)
    for key in stage:
        if key not in COMMON_KEYS | METHOD_KEYS[method]:
            fail(f"unknown key {key!r} for method {method!r}", path + (key,))
    if "r_list" in stage:
        r = stage["r_list"]
        if not isinstance(r, list) or not r or not all(_is_num(v) and v > 0 for v in r):
            fail("r_list must be a non-empty list of positive numbers", path + ("r_list",))
        if any(a <= b for a, b in zip(r, r[1:])):
            fail("r_list must be strictly descending", path + ("r_list",))
    if "n_list" in stage:
        n = stage["n_list"]
        if not isinstance(n, list) or not n or not all(_is_int(v) and v >= 1 for v in n):
            fail("n_list must be a non-empty list of positive integers", path + ("n_list",))
        if any(a >= b for a, b in zip(n, n[1:])):
            fail("n_list must be strictly ascending", path + ("n_list",))
    if "delta" in stage and not (_is_num(stage["delta"]) and 0 < stage["delta"] < 1):
        fail("delta must lie in (0, 1)", path + ("delta",))
    for key in ("n_samples", "panel", "steps", "T_max", "base_points", "riem_panel"):
        if key in stage and not (_is_int(stage[key]) and stage[key] >= 1):
            fail(f"{key} must be a positive integer", path + (key,))
    for key in ("r", "log_c_max", "tol"):
        if key in stage and not (_is_num(stage[key]) and stage[key] > 0):
            fail(f"{key} must be a positive number", path + (key,))
    if "window" in stage and stage["window"] is not None and not (_is_num(stage["window"]) and stage["window"] > 1):
        fail("window must be a height above 1", path + ("window",))
    if "mode" in stage and stage["mode"] not in ("volume", "measure"):
        fail("mode must be 'volume' or 'measure'", path + ("mode",))
    if "proposal" in stage and stage["proposal"] not in ("ball", "box"):
        fail("proposal must be 'ball' or 'box'", path + ("proposal",))


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, path)
