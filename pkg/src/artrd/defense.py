"""Adversarial training schemes for hardening a nominal policy.

Three schemes are provided:

* ``tandem``: nominal and adversary start from scratch and share one
  rollout stream; PPO updates alternate between them.
* ``fixed``: a fresh nominal learns while a frozen adversary perturbs it.
* ``finetune``: same loop as ``fixed`` but starting from a trained nominal.

In the last two the frozen adversary uses the state-unaware payload.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import envs
from . import numcore as nc
from .attack import STATE_UNAWARE, AttackConfig, FrozenController, adv_reward, build_adv_observation
from .evaluation import EvalScenario, evaluate
from .exceptions import ConfigurationError, ContractViolation
from .ppo import (Learner, PpoConfig, RolloutBuffer, TrainResult, episode_seed, train,
                  update)

TANDEM = "tandem"
FIXED = "fixed"
FINETUNE = "finetune"
SCHEMES = (TANDEM, FIXED, FINETUNE)

_ALIASES = {
    "tandemfromscratch": TANDEM,
    "fixedadvfromscratch": FIXED,
    "fixed-adversary": FIXED,
    "fixed-adv": FIXED,
    "transferfinetune": FINETUNE,
    "transfer": FINETUNE,
    "fine-tune": FINETUNE,
}


def normalize_scheme(kind: str) -> str:
    k = str(kind).lower().replace("_", "-")
    k = _ALIASES.get(k, _ALIASES.get(k.replace("-", ""), k))
    if k not in SCHEMES:
        raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {kind!r}")
    return k


@dataclass
class DefenseScheme:
    """Which scheme to run and the checkpoints it needs."""

    kind: str = FINETUNE
    nominal_checkpoint: str | None = None
    adversary_checkpoint: str | None = None
    cadence: int = 1

    def __post_init__(self):
        self.kind = normalize_scheme(self.kind)
        if self.cadence < 1:
            raise ConfigurationError("cadence must be >= 1")

    def validate(self, need_files=True):
        """Check that the checkpoints required by ``kind`` are named."""
        if not need_files:
            return
        if self.kind in (FIXED, FINETUNE) and not self.adversary_checkpoint:
            raise ConfigurationError(f"scheme {self.kind!r} needs an adversary checkpoint")
        if self.kind == FINETUNE and not self.nominal_checkpoint:
            raise ConfigurationError("scheme 'finetune' needs a nominal checkpoint")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data) -> "DefenseScheme":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown defense keys: {sorted(unknown)}")
        return cls(**data)


class FixedAdversaryEnv:
    """Navigation task whose actuation channel is perturbed by a frozen adversary.

    The learner's (possibly sampled) action ``a`` is shown to the adversary
    together with the adversarial-goal compass, and the environment receives
    ``clamp(a + clamp(delta))`` where ``delta`` is the adversary's mean output.
    The learner is rewarded by the nominal task reward.
    """

    act_dim = 2

    def __init__(self, config: AttackConfig, adversary_policy: nc.ParamSet):
        if config.variant != STATE_UNAWARE:
            config = dataclasses.replace(config, variant=STATE_UNAWARE)
        if adversary_policy.in_dim != 5 or adversary_policy.out_dim != 2:
            raise ContractViolation(
                f"adversary maps {adversary_policy.in_dim} -> {adversary_policy.out_dim}, "
                "expected a state-unaware adversary (5 -> 2)")
        self.config = config
        self._adversary = FrozenController(adversary_policy)
        self._env = envs.NavigationEnv(config.env)

    obs_dim = property(lambda self: self.config.env.obs_dim)
    max_steps = property(lambda self: self.config.env.max_steps)
    state = property(lambda self: self._env.state)

    def reset(self, seed) -> np.ndarray:
        return self._env.reset(seed)

    def step(self, action):
        a = np.asarray(action, dtype=np.float64)
        adv_obs = build_adv_observation(STATE_UNAWARE, None, a, self._env.state, self.config.env)
        b = self.config.perturbation_bound
        delta = np.clip(self._adversary(adv_obs), -b, b)
        obs, reward, done, info = self._env.step(np.clip(a + delta, -1.0, 1.0))
        info["nominal_action"] = a
        info["delta"] = delta
        return obs, reward, done, info


def _perturbed_env_factory(attack_config, adversary_policy):
    return lambda i: FixedAdversaryEnv(attack_config, adversary_policy)


def train_vs_fixed_adversary(attack_config: AttackConfig, ppo_config: PpoConfig, seed: int,
                             adversary_policy: nc.ParamSet, **train_kwargs) -> TrainResult:
    """Train a nominal policy from scratch against a frozen adversary."""
    before = adversary_policy.checksum()
    result = train(_perturbed_env_factory(attack_config, adversary_policy), ppo_config, seed,
                   **train_kwargs)
    if adversary_policy.checksum() != before:
        raise AssertionError("adversary policy was modified during defense training")
    return result


@dataclass
class FineTuneResult:
    train: TrainResult
    extreme_pre: list = field(default_factory=list)
    extreme_post: list = field(default_factory=list)

    @property
    def policy(self) -> nc.ParamSet:
        return self.train.policy

    @property
    def value(self) -> nc.ParamSet:
        return self.train.value

    @property
    def curve(self) -> list:
        return self.train.curve

    def extreme_rows(self, seed) -> list:
        """Rows ``(seed, phase, mean extreme-action count per trajectory)``."""
        return [
            {"seed": seed, "phase": "pre", "extreme_mean": float(np.mean(self.extreme_pre))},
            {"seed": seed, "phase": "post", "extreme_mean": float(np.mean(self.extreme_post))},
        ]


def _extreme_per_dimension(policy, env_config, seed, episodes):
    scenario = EvalScenario(env_config.min_goal_separation, episodes=episodes,
                            steps_per_episode=env_config.max_steps, seed=seed)
    return evaluate(scenario, policy, env_config=env_config).extreme_per_dimension


def train_transfer_finetune(attack_config: AttackConfig, ppo_config: PpoConfig, seed: int,
                            nominal_policy: nc.ParamSet, adversary_policy: nc.ParamSet,
                            nominal_value: nc.ParamSet | None = None, extreme_episodes=10,
                            **train_kwargs) -> FineTuneResult:
    """Continue training a nominal policy under a frozen adversary.

    The policy (and the value network, when given) start from the trained
    weights with fresh optimizer state. Extreme-action counts per action
    dimension are measured without attack before and after fine-tuning
    (``extreme_episodes`` episodes, 0 to skip).
    """
    env_config = attack_config.env
    if nominal_value is None:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
        nominal_value = nc.init_params([env_config.obs_dim, *ppo_config.value_hidden, 1], rng)
    learner = Learner(nominal_policy.copy(), nominal_value.copy())
    pre = post = []
    if extreme_episodes:
        pre = _extreme_per_dimension(nominal_policy, env_config, seed, extreme_episodes)
    result = train_vs_fixed_adversary(attack_config, ppo_config, seed, adversary_policy,
                                      learner=learner, **train_kwargs)
    if extreme_episodes:
        post = _extreme_per_dimension(result.policy, env_config, seed, extreme_episodes)
    return FineTuneResult(result, list(pre), list(post))


@dataclass
class TandemResult:
    nominal: TrainResult
    adversary: TrainResult

    @property
    def update_counts(self) -> tuple:
        return self.nominal.learner.n_updates, self.adversary.learner.n_updates


def train_tandem(attack_config: AttackConfig, ppo_config: PpoConfig, seed: int,
                 cadence: int = 1) -> TandemResult:
    """Train a nominal policy and a state-unaware adversary together.

    Both act in the same rollout: the nominal samples ``a``, the adversary
    sees ``a`` and samples ``delta``, and the environment receives
    ``clamp(a + clamp(delta))``. Each filled buffer pair triggers one
    PPO update, for the nominal when ``(u // cadence) % 2 == 0`` and for the
    adversary otherwise, where ``u`` counts updates so far.
    """
    if cadence < 1:
        raise ConfigurationError("cadence must be >= 1")
    cfg = ppo_config
    env_config = attack_config.env
    b = attack_config.perturbation_bound
    ss = np.random.SeedSequence(int(seed)).spawn(4)
    init_rng, act_rng, shuffle_rng, adv_rng = (np.random.default_rng(s) for s in ss)
    n_adv_obs = 5
    nominal = Learner.create(env_config.obs_dim, 2, cfg, init_rng)
    adversary = Learner.create(n_adv_obs, 2, cfg, init_rng)
    res_nom, res_adv = TrainResult(nominal), TrainResult(adversary)
    if cfg.total_steps == 0:
        return TandemResult(res_nom, res_adv)

    n = cfg.n_envs
    pool = [envs.NavigationEnv(env_config) for _ in range(n)]
    episodes = [0] * n
    obs = np.stack([e.reset(episode_seed(seed, i, 0)) for i, e in enumerate(pool)])
    buf_nom = RolloutBuffer(cfg.update_interval, env_config.obs_dim, 2, n)
    buf_adv = RolloutBuffer(cfg.update_interval, n_adv_obs, 2, n)
    ret_nom, ret_adv = np.zeros(n), np.zeros(n)
    goals_nom, goals_adv = np.zeros(n, dtype=int), np.zeros(n, dtype=int)
    r_nom, r_adv, dones = np.zeros(n), np.zeros(n), np.zeros(n)
    u = steps = 0
    while steps < cfg.total_steps:
        actions, lp_nom, v_nom = nominal.act(obs, act_rng)
        adv_obs = np.stack([
            build_adv_observation(STATE_UNAWARE, None, actions[i], e.state, env_config)
            for i, e in enumerate(pool)])
        deltas, lp_adv, v_adv = adversary.act(adv_obs, adv_rng)
        next_obs = np.empty_like(obs)
        for i, e in enumerate(pool):
            applied = np.clip(actions[i] + np.clip(deltas[i], -b, b), -1.0, 1.0)
            o, r, d, info = e.step(applied)
            r_nom[i] = r
            r_adv[i] = adv_reward(info["d_adv_prev"], info["d_adv"], info["adversarial_goal"],
                                  info["nominal_goal"], attack_config.penalty,
                                  attack_config.goal_bonus)
            dones[i] = d
            ret_nom[i] += r_nom[i]
            ret_adv[i] += r_adv[i]
            goals_nom[i] += info["nominal_goal"]
            goals_adv[i] += info["adversarial_goal"]
            if d:
                for res, ret in ((res_nom, ret_nom), (res_adv, ret_adv)):
                    res.curve.append({"step": steps + n, "episode_return": float(ret[i]),
                                      "goals_nominal": int(goals_nom[i]),
                                      "goals_adversarial": int(goals_adv[i])})
                ret_nom[i] = ret_adv[i] = 0.0
                goals_nom[i] = goals_adv[i] = 0
                episodes[i] += 1
                o = e.reset(episode_seed(seed, i, episodes[i]))
            next_obs[i] = o
        buf_nom.add(obs, actions, lp_nom, r_nom, v_nom, dones)
        buf_adv.add(adv_obs, deltas, lp_adv, r_adv, v_adv, dones)
        obs = next_obs
        steps += n
        if buf_nom.full:
            if (u // cadence) % 2 == 0:
                learner, buf, res = nominal, buf_nom, res_nom
                bootstrap = nc.mlp_forward(nominal.value, obs)[:, 0]
            else:
                learner, buf, res = adversary, buf_adv, res_adv
                # the adversary's next observation depends on the nominal's next action
                nxt = nc.mlp_forward(nominal.policy, obs)
                nxt_obs = np.stack([
                    build_adv_observation(STATE_UNAWARE, None, nxt[i], e.state, env_config)
                    for i, e in enumerate(pool)])
                bootstrap = nc.mlp_forward(adversary.value, nxt_obs)[:, 0]
            diag = update(learner, buf, cfg, bootstrap, shuffle_rng, step_index=steps)
            diag["step"] = steps
            res.diagnostics.append(diag)
            buf_nom.clear()
            buf_adv.clear()
            u += 1
    return TandemResult(res_nom, res_adv)


def run_scheme(scheme: DefenseScheme, attack_config: AttackConfig, ppo_config: PpoConfig,
               seed: int, nominal=None, adversary=None):
    """Dispatch to the scheme's training function.

    ``nominal`` and ``adversary`` may be ``(policy, value)`` tuples already
    loaded; otherwise the checkpoints named in ``scheme`` are read.
    """
    scheme.validate(need_files=nominal is None and adversary is None)
    if scheme.kind == TANDEM:
        return train_tandem(attack_config, ppo_config, seed, scheme.cadence)
    if adversary is None:
        adversary = nc.load_checkpoint(scheme.adversary_checkpoint)
    if scheme.kind == FIXED:
        return train_vs_fixed_adversary(attack_config, ppo_config, seed, adversary[0])
    if nominal is None:
        nominal = nc.load_checkpoint(scheme.nominal_checkpoint)
    value = nominal[1] if len(nominal) > 1 else None
    return train_transfer_finetune(attack_config, ppo_config, seed, nominal[0], adversary[0],
                                   nominal_value=value)
