"""Run configuration: one YAML document with sections per component.

Example::

    label: point-baseline
    seeds: [0, 1, 2]
    out: runs/point
    env: {env_kind: point, min_goal_separation: 0.5}
    ppo: {total_steps: 500000}
    attack: {variant: state-unaware}
    defense: {kind: finetune}
    eval: {dg: [0.5, 1.0, 1.5], episodes: 10}

Unknown keys anywhere are rejected. ``resolved()`` returns the fully
expanded document that is written next to every run's outputs.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .attack import AttackConfig
from .defense import DefenseScheme
from .envs import EnvConfig
from .evaluation import DEFAULT_DG
from .exceptions import ConfigurationError
from .io import atomic_write_text, config_hash
from .ppo import PpoConfig

SECTIONS = ("env", "ppo", "attack", "defense", "eval")
TOP_LEVEL = SECTIONS + ("seeds", "out", "label")


@dataclass
class EvalSettings:
    dg: tuple = DEFAULT_DG
    episodes: int = 10
    steps_per_episode: int = 1000

    def __post_init__(self):
        self.dg = tuple(float(d) for d in self.dg)
        if not self.dg:
            raise ConfigurationError("eval.dg must list at least one separation")
        if self.episodes < 1 or self.steps_per_episode < 1:
            raise ConfigurationError("eval.episodes and eval.steps_per_episode must be >= 1")

    def to_dict(self) -> dict:
        return {"dg": list(self.dg), "episodes": self.episodes,
                "steps_per_episode": self.steps_per_episode}

    @classmethod
    def from_dict(cls, data) -> "EvalSettings":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown eval keys: {sorted(unknown)}")
        return cls(**data)


def parse_seeds(spec) -> list:
    """Accept ``3``, ``"0..4"`` (inclusive), ``"1,5,9"`` or a list."""
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, (list, tuple)):
        out = []
        for item in spec:
            out.extend(parse_seeds(item))
        return out
    text = str(spec).strip()
    m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise ConfigurationError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse seeds from {spec!r}") from None


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseScheme = field(default_factory=DefenseScheme)
    eval: EvalSettings = field(default_factory=EvalSettings)
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs"
    label: str = "run"

    def __post_init__(self):
        self.seeds = parse_seeds(self.seeds)
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        # the attack wrapper always sees the same environment as everything else
        self.attack.env = self.env

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        unknown = set(data) - set(TOP_LEVEL)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        for name in SECTIONS:
            if data.get(name) is not None and not isinstance(data[name], dict):
                raise ConfigurationError(f"section {name!r} must be a mapping")
        env = EnvConfig.from_dict(data.get("env") or {})
        return cls(
            env=env,
            ppo=PpoConfig.from_dict(data.get("ppo") or {}),
            attack=AttackConfig.from_dict(data.get("attack") or {}, env),
            defense=DefenseScheme.from_dict(data.get("defense") or {}),
            eval=EvalSettings.from_dict(data.get("eval") or {}),
            seeds=data.get("seeds", [0]),
            out=str(data.get("out", "runs")),
            label=str(data.get("label", "run")),
        )

    def resolved(self) -> dict:
        return {
            "label": self.label,
            "seeds": list(self.seeds),
            "out": self.out,
            "env": self.env.to_dict(),
            "ppo": self.ppo.to_dict(),
            "attack": self.attack.to_dict(),
            "defense": self.defense.to_dict(),
            "eval": self.eval.to_dict(),
        }

    def hash(self) -> str:
        """Stable hash of everything that influences results (not ``out``)."""
        doc = self.resolved()
        doc.pop("out")
        return config_hash(doc)

    def replace(self, **sections) -> "RunConfig":
        """Copy with some sections or fields swapped; the attack env is re-synced."""
        new = dataclasses.replace(self, **sections)
        new.attack = dataclasses.replace(new.attack, env=new.env)
        return new


def loads_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError("config document must be a mapping")
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return loads_config(text)


def dumps_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.resolved(), sort_keys=True, default_flow_style=False)


def dump_config(config: RunConfig, path) -> None:
    atomic_write_text(path, dumps_config(config))
