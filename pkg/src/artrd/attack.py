"""Targeted actuation attack: an MDP whose agent perturbs a frozen nominal policy.

The wrapper hides the nominal controller behind a callable; the adversary
only ever sees the observation payload built here.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import envs
from . import numcore as nc
from .exceptions import CheckpointError, ConfigurationError, ContractViolation
from .ppo import PpoConfig, TrainResult, train

STATE_AWARE = "state-aware"
STATE_UNAWARE = "state-unaware"
VARIANTS = (STATE_AWARE, STATE_UNAWARE)


def normalize_variant(variant: str) -> str:
    v = str(variant).lower().replace("_", "-")
    v = {"stateaware": STATE_AWARE, "stateunaware": STATE_UNAWARE}.get(v, v)
    if v not in VARIANTS:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return v


@dataclass
class AttackConfig:
    variant: str = STATE_UNAWARE
    perturbation_bound: float = 1.0
    penalty: float = 1.0
    goal_bonus: float = 1.0
    env: envs.EnvConfig = field(default_factory=envs.EnvConfig)
    nominal_checkpoint: str | None = None

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.perturbation_bound <= 0:
            raise ConfigurationError("perturbation_bound must be > 0")
        if isinstance(self.env, dict):
            self.env = envs.EnvConfig.from_dict(self.env)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "perturbation_bound": self.perturbation_bound,
            "penalty": self.penalty,
            "goal_bonus": self.goal_bonus,
            "nominal_checkpoint": self.nominal_checkpoint,
        }

    @classmethod
    def from_dict(cls, data, env: envs.EnvConfig | None = None) -> "AttackConfig":
        known = {f.name for f in fields(cls)} - {"env"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown attack keys: {sorted(unknown)}")
        return cls(env=env or envs.EnvConfig(), **data)


def adv_reward(d_adv_prev, d_adv_now, at_adversarial_goal, at_nominal_goal,
               penalty=1.0, goal_bonus=1.0) -> float:
    """Progress toward the adversarial goal, minus a penalty at the nominal goal.

    Arriving at the adversarial goal pays ``goal_bonus`` outright.
    """
    if d_adv_prev < 0 or d_adv_now < 0:
        raise ContractViolation("distances must be non-negative")
    if at_adversarial_goal:
        return goal_bonus
    return (d_adv_prev - d_adv_now) - (penalty if at_nominal_goal else 0.0)


def payload_dim(variant: str, env_config: envs.EnvConfig) -> int:
    base = 2 + 3
    if normalize_variant(variant) == STATE_AWARE:
        return env_config.obs_dim + base
    return base


def build_adv_observation(variant, nominal_obs, nominal_action, state, env_config) -> np.ndarray:
    """``[s_t,] a_t, adversarial-goal compass (2), adversarial-goal distance``."""
    cx, cy, dist = envs.goal_features(state, state.adversarial_goal, env_config)
    tail = np.array([nominal_action[0], nominal_action[1], cx, cy, dist])
    if variant == STATE_AWARE:
        return np.concatenate([nominal_obs, tail])
    return tail


class FrozenController:
    """Deterministic (mean-action) view of a policy; exposes no parameters.

    The raw mean is returned. Clamping to the actuator range happens where
    the action is applied, after any perturbation has been added.
    """

    __slots__ = ("_call",)

    def __init__(self, policy: nc.ParamSet):
        frozen = policy.copy()
        frozen.weights.setflags(write=False)
        frozen.log_std.setflags(write=False)

        def _call(obs):
            return nc.mlp_forward(frozen, obs)

        self._call = _call

    def __call__(self, obs) -> np.ndarray:
        return self._call(obs)


def _check_policy_dims(policy: nc.ParamSet, obs_dim, act_dim, what):
    if policy.in_dim != obs_dim or policy.out_dim != act_dim:
        raise CheckpointError(
            f"{what} policy maps {policy.in_dim} -> {policy.out_dim}, environment "
            f"needs {obs_dim} -> {act_dim}")


class AdversarialEnv:
    """The adversary's MDP: frozen nominal controller + navigation task.

    ``step(delta)`` applies ``clamp(a_t + clamp(delta, -b, b), -1, 1)`` where
    ``a_t`` is the nominal controller's action, rewards the adversary, and
    queries the nominal controller at the resulting state.
    """

    act_dim = 2

    def __init__(self, config: AttackConfig, nominal_policy: nc.ParamSet):
        self.config = config
        _check_policy_dims(nominal_policy, config.env.obs_dim, 2, "nominal")
        self._nominal = FrozenController(nominal_policy)
        self._env = envs.NavigationEnv(config.env)
        self._nominal_obs = None
        self._nominal_action = None

    @property
    def obs_dim(self) -> int:
        return payload_dim(self.config.variant, self.config.env)

    @property
    def max_steps(self) -> int:
        return self.config.env.max_steps

    @property
    def state(self) -> envs.EnvState:
        return self._env.state

    def _observe(self) -> np.ndarray:
        return build_adv_observation(self.config.variant, self._nominal_obs,
                                     self._nominal_action, self._env.state, self.config.env)

    def reset(self, seed) -> np.ndarray:
        self._nominal_obs = self._env.reset(seed)
        self._nominal_action = self._nominal(self._nominal_obs)
        return self._observe()

    def step(self, delta):
        if self._nominal_obs is None:
            raise ContractViolation("reset() must be called before step()")
        b = self.config.perturbation_bound
        delta = np.clip(np.asarray(delta, dtype=np.float64), -b, b)
        nominal_action = self._nominal_action
        applied = np.clip(nominal_action + delta, -1.0, 1.0)
        obs, _, done, info = self._env.step(applied)
        reward = adv_reward(info["d_adv_prev"], info["d_adv"], info["adversarial_goal"],
                            info["nominal_goal"], self.config.penalty, self.config.goal_bonus)
        info["nominal_action"] = nominal_action
        info["delta"] = delta
        self._nominal_obs = obs
        self._nominal_action = self._nominal(obs)
        return self._observe(), reward, done, info


def adv_reset(config: AttackConfig, seed, nominal_policy: nc.ParamSet | None = None):
    """Build a wrapper and reset it; returns ``(wrapper, observation)``."""
    if nominal_policy is None:
        nominal_policy = load_nominal(config)
    env = AdversarialEnv(config, nominal_policy)
    return env, env.reset(seed)


def adv_step(wrapper: AdversarialEnv, delta):
    return wrapper.step(delta)


def load_nominal(config: AttackConfig) -> nc.ParamSet:
    if not config.nominal_checkpoint:
        raise ConfigurationError("attack config has no nominal checkpoint")
    return nc.load_checkpoint(config.nominal_checkpoint)[0]


def train_adversary(config: AttackConfig, ppo_config: PpoConfig, seed: int,
                    nominal_policy: nc.ParamSet | None = None, **train_kwargs) -> TrainResult:
    """Train a perturbation policy against a frozen nominal controller."""
    if nominal_policy is None:
        nominal_policy = load_nominal(config)
    before = nominal_policy.checksum()
    result = train(lambda i: AdversarialEnv(config, nominal_policy), ppo_config, seed,
                   **train_kwargs)
    if nominal_policy.checksum() != before:
        raise AssertionError("nominal policy was modified during adversary training")
    return result
