"""Strict-schema experiment configuration and run manifests.

A config file is YAML with one mapping per section; every key must name a
dataclass field, every section's defaults are materialized into the resolved
echo written next to run outputs, and the echo reloads to an equal config.
Environment variables override file values: VTINSERT_<SECTION>__<KEY>=value
(YAML-parsed), VTINSERT_SEED / VTINSERT_OUT for the top-level keys.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from ..distill import BetaSchedule, DistillConfig, StudentSpec, VARIANTS
from ..env import EpisodeConfig
from ..errors import ConfigError
from ..randomize import RandomizationConfig
from ..teacher import PPOConfig

ENV_PREFIX = "VTINSERT_"


@dataclass(frozen=True)
class DistillSection:
    """Distillation orchestration: DistillConfig knobs plus stage wiring."""

    teacher_checkpoint: str | None = None
    variants: tuple = ("visuotactile",)
    bc_transitions: int = 12000
    bc_epochs: int = 20
    dagger_iterations: int = 20
    dagger_transitions: int = 1000
    dagger_epochs: int = 4
    batch_size: int = 64
    learning_rate: float = 1e-4
    schedule: BetaSchedule = field(default_factory=BetaSchedule)
    stratify: bool = True
    max_burn_in: int | None = None

    def __post_init__(self):
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown student variant {v!r}; "
                                  f"expected one of {sorted(VARIANTS)}")

    def to_distill_config(self, spec: StudentSpec) -> DistillConfig:
        return DistillConfig(
            spec=spec, bc_transitions=self.bc_transitions,
            bc_epochs=self.bc_epochs,
            dagger_iterations=self.dagger_iterations,
            dagger_transitions=self.dagger_transitions,
            dagger_epochs=self.dagger_epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, schedule=self.schedule,
            stratify=self.stratify, max_burn_in=self.max_burn_in)


@dataclass(frozen=True)
class EvalSection:
    """Evaluation/sweep wiring: checkpoint map plus trial protocol knobs."""

    checkpoints: dict = field(default_factory=dict)   # variant -> path
    n_trials: int = 200
    seeds: tuple = (0, 1, 2)
    randomized: bool = True
    gamma_grid: tuple = (0.0, 4e-6, 1.6e-5, 3.6e-5, 6.4e-5, 1e-4)
    trials_per_level: int = 100
    sweep_variants: tuple = ("visual_pcl", "visuotactile")
    sweep_seeds: tuple = (0,)

    def __post_init__(self):
        if self.n_trials < 1 or self.trials_per_level < 1:
            raise ConfigError("trial counts must be >= 1")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("eval seeds must be distinct")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs"
    env: EpisodeConfig = field(default_factory=EpisodeConfig)
    randomization: RandomizationConfig = field(
        default_factory=RandomizationConfig)
    teacher: PPOConfig = field(default_factory=PPOConfig)
    student: StudentSpec = field(default_factory=StudentSpec)
    distill: DistillSection = field(default_factory=DistillSection)
    eval: EvalSection = field(default_factory=EvalSection)


_SECTIONS = {
    "env": EpisodeConfig,
    "randomization": RandomizationConfig,
    "teacher": PPOConfig,
    "student": StudentSpec,
    "distill": DistillSection,
    "eval": EvalSection,
}
_NESTED = {(DistillSection, "schedule"): BetaSchedule}


def _compose_with_lines(text: str, source: str):
    """YAML mapping -> (plain dict, {dotted key path: line number})."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{source}: not valid YAML: {err}") from err
    lines: dict = {}

    def walk(n, prefix):
        if n is None:
            return None
        if isinstance(n, yaml.MappingNode):
            out = {}
            for k_node, v_node in n.value:
                key = str(k_node.value)
                path = f"{prefix}.{key}" if prefix else key
                lines[path] = k_node.start_mark.line + 1
                out[key] = walk(v_node, path)
            return out
        if isinstance(n, yaml.SequenceNode):
            return [walk(item, prefix) for item in n.value]
        return yaml.safe_load(yaml.serialize(n))

    data = walk(node, "")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return data, lines


def _coerce(value, template, where):
    """Shape the YAML value like the dataclass default it replaces."""
    if value is None:
        return None
    if dataclasses.is_dataclass(template):
        raise ConfigError(f"{where}: expected a mapping")
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(template, int) and not isinstance(template, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(template, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        inner = template[0] if template else None
        return tuple(_coerce(v, inner, where) if inner is not None else v
                     for v in value)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build_section(cls, data: dict, lines: dict, prefix: str, source: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: section {prefix!r} must be a mapping")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        line = lines.get(path)
        where = f"{source}:{line}" if line else source
        if key not in known:
            raise ConfigError(
                f"{where}: unknown key {path!r}; valid keys: {sorted(known)}")
        nested = _NESTED.get((cls, key))
        if nested is not None:
            kwargs[key] = _build_section(nested, value, lines, path, source)
            continue
        template = getattr(defaults, key)
        if isinstance(template, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            kwargs[key] = value
            continue
        kwargs[key] = _coerce(value, template, f"{where}: {path}")
    try:
        built = cls(**kwargs) if kwargs else cls()
    except ConfigError as err:
        line = lines.get(prefix)
        where = f"{source}:{line}: " if line else f"{source}: "
        raise ConfigError(where + str(err)) from err
    validate = getattr(built, "validate", None)
    if callable(validate):
        try:
            validate()
        except ConfigError as err:
            raise ConfigError(f"{source}: {err}") from err
    return built


def _apply_env_overrides(data: dict, environ) -> dict:
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as err:
            raise ConfigError(f"env {name}: not a YAML scalar: {err}") from err
        cursor = data
        for part in parts[:-1]:
            nxt = cursor.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                cursor[part] = nxt
            cursor = nxt
        cursor[parts[-1]] = value
    return data


def parse_config(text: str, source: str = "<config>",
                 environ=None) -> ExperimentConfig:
    data, lines = _compose_with_lines(text, source)
    data = _apply_env_overrides(data, os.environ if environ is None else environ)
    known = set(_SECTIONS) | {"seed", "out"}
    for key in data:
        if key not in known:
            line = lines.get(key)
            where = f"{source}:{line}" if line else source
            raise ConfigError(
                f"{where}: unknown section {key!r}; valid: {sorted(known)}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"{source}: seed must be an integer, got {seed!r}")
    out = data.get("out", "runs")
    if not isinstance(out, str):
        raise ConfigError(f"{source}: out must be a string, got {out!r}")
    sections = {
        name: _build_section(cls, data.get(name), lines, name, source)
        for name, cls in _SECTIONS.items()
    }
    return ExperimentConfig(seed=seed, out=out, **sections)


def load_config(path, environ=None) -> ExperimentConfig:
    with open(path) as f:
        text = f.read()
    return parse_config(text, source=str(path), environ=environ)


def _plain(value):
    """Dataclass tree -> YAML-safe plain python (tuples become lists)."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _plain(getattr(value, f.name))
                for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def materialize(cfg: ExperimentConfig) -> dict:
    """Every field of every section, defaults included."""
    return _plain(cfg)


def resolved_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(materialize(cfg), sort_keys=True,
                          default_flow_style=False)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(resolved_yaml(cfg).encode()).hexdigest()[:12]


def write_resolved(cfg: ExperimentConfig, out_dir) -> str:
    path = os.path.join(out_dir, "config_resolved.yaml")
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(resolved_yaml(cfg))
    os.replace(tmp, path)
    return path


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    command: str
    seed: int
    started: str
    ended: str = ""
    artifacts: tuple = ()
    final_metrics: dict = field(default_factory=dict)
    complete: bool = False

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "command": self.command,
            "seed": self.seed,
            "started": self.started,
            "ended": self.ended,
            "artifacts": list(self.artifacts),
            "final_metrics": _plain(self.final_metrics),
            "complete": self.complete,
        }


def write_manifest(manifest: RunManifest, out_dir) -> str:
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)
    return path


def load_manifest(path) -> dict:
    with open(path) as f:
        return json.load(f)
