"""PPO with GAE for diagonal-Gaussian MLP policies, written against numcore.

The trainer is environment-agnostic: anything exposing ``obs_dim``,
``act_dim``, ``reset(seed) -> obs`` and ``step(action) -> (obs, reward,
done, info)`` can be trained, which covers both the navigation task and the
adversarial wrapper around a frozen nominal policy.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numcore as nc
from .exceptions import ConfigurationError, ContractViolation, TrainingDivergedError

logger = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    lr: float = 3e-4
    batch_size: int = 1024
    update_interval: int = 2048
    entropy_coef: float = 0.0
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs_per_update: int = 10
    value_loss_coef: float = 0.5
    total_steps: int = 500_000
    n_envs: int = 8
    policy_hidden: tuple = (64, 64)
    value_hidden: tuple = (128, 64)
    checkpoint_interval: int = 0

    def __post_init__(self):
        self.policy_hidden = tuple(int(h) for h in self.policy_hidden)
        self.value_hidden = tuple(int(h) for h in self.value_hidden)
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigurationError("clip_epsilon must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigurationError("gae_lambda must lie in [0, 1]")
        if self.batch_size > self.update_interval or self.batch_size < 1:
            raise ConfigurationError("need 1 <= batch_size <= update_interval")
        if self.n_envs < 1 or self.update_interval % self.n_envs:
            raise ConfigurationError("update_interval must be a multiple of n_envs")
        if self.total_steps < 0 or self.lr <= 0:
            raise ConfigurationError("total_steps must be >= 0 and lr > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy_hidden"] = list(self.policy_hidden)
        d["value_hidden"] = list(self.value_hidden)
        return d

    @classmethod
    def from_dict(cls, data) -> "PpoConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown ppo keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Transition:
    observation: np.ndarray
    action: np.ndarray
    log_prob: float
    reward: float
    value_estimate: float
    done_flag: bool


class RolloutBuffer:
    """Time-major storage for ``n_envs`` parallel streams.

    Arrays have shape ``(horizon, n_envs, ...)``; ``capacity`` counts
    transitions across all streams.
    """

    def __init__(self, capacity, obs_dim, act_dim, n_envs=1):
        if capacity % n_envs:
            raise ContractViolation("capacity must be a multiple of n_envs")
        self.capacity = capacity
        self.n_envs = n_envs
        self.horizon = capacity // n_envs
        self.obs = np.zeros((self.horizon, n_envs, obs_dim))
        self.actions = np.zeros((self.horizon, n_envs, act_dim))
        self.log_probs = np.zeros((self.horizon, n_envs))
        self.rewards = np.zeros((self.horizon, n_envs))
        self.values = np.zeros((self.horizon, n_envs))
        self.dones = np.zeros((self.horizon, n_envs))
        self.ptr = 0

    @classmethod
    def from_transitions(cls, transitions) -> "RolloutBuffer":
        if not transitions:
            raise ContractViolation("empty buffer")
        t0 = transitions[0]
        buf = cls(len(transitions), np.size(t0.observation), np.size(t0.action))
        for t in transitions:
            buf.add([t.observation], [t.action], [t.log_prob], [t.reward],
                    [t.value_estimate], [t.done_flag])
        return buf

    def __len__(self):
        return self.ptr * self.n_envs

    @property
    def full(self) -> bool:
        return self.ptr == self.horizon

    def add(self, obs, actions, log_probs, rewards, values, dones) -> None:
        if self.full:
            raise ContractViolation("buffer is full")
        i = self.ptr
        self.obs[i] = obs
        self.actions[i] = actions
        self.log_probs[i] = log_probs
        self.rewards[i] = rewards
        self.values[i] = values
        self.dones[i] = dones
        self.ptr += 1

    def clear(self) -> None:
        self.ptr = 0


def gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """Reverse-time GAE recursion along axis 0; returns (advantages, returns)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape[0] == 0:
        raise ContractViolation("cannot compute advantages of an empty buffer")
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    next_adv = np.zeros_like(rewards[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def compute_gae(buffer: RolloutBuffer, gamma, lam, bootstrap_value):
    if len(buffer) == 0:
        raise ContractViolation("cannot compute advantages of an empty buffer")
    if not buffer.full:
        raise ContractViolation("advantages are computed only on a full buffer")
    return gae(buffer.rewards, buffer.values, buffer.dones, bootstrap_value, gamma, lam)


def normalize_advantages(adv, eps=1e-8):
    return (adv - adv.mean()) / (adv.std() + eps)


def ppo_loss(old_log_prob, new_log_prob, advantage, clip_epsilon):
    """Negated clipped surrogate, elementwise."""
    ratio = np.exp(np.asarray(new_log_prob) - np.asarray(old_log_prob))
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return -np.minimum(ratio * advantage, clipped * advantage)


def policy_loss_and_grad(policy: nc.ParamSet, obs, actions, old_log_probs, advantages,
                         clip_epsilon, entropy_coef=0.0):
    """Mean clipped-surrogate loss (minus entropy bonus) and its flat gradient.

    The gradient covers the network weights followed by ``log_std``.
    """
    mean, acts = nc.mlp_forward_cached(policy, obs)
    log_std = policy.log_std
    new_lp = nc.gaussian_log_prob(mean, log_std, actions)
    ratio = np.exp(new_lp - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    n = len(advantages)
    loss = -np.mean(np.minimum(surr1, surr2)) - entropy_coef * nc.gaussian_entropy(log_std)
    # only the unclipped branch depends on the parameters
    d_logp = np.where(surr1 <= surr2, -advantages * ratio, 0.0) / n
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    d_mean = d_logp[:, None] * diff * inv_var
    d_log_std = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - entropy_coef
    g_w = nc.backprop(policy, obs, d_mean, cache=(mean, acts))
    return loss, np.concatenate([g_w, d_log_std]), new_lp


def value_loss_and_grad(value: nc.ParamSet, obs, returns, coef=0.5):
    pred, acts = nc.mlp_forward_cached(value, obs)
    err = pred[:, 0] - returns
    loss = coef * 0.5 * np.mean(err * err)
    d_out = (coef * err / len(err))[:, None]
    return loss, nc.backprop(value, obs, d_out, cache=(pred, acts))


@dataclass
class Learner:
    """Policy and value networks with their optimizer states."""

    policy: nc.ParamSet
    value: nc.ParamSet
    policy_opt: nc.AdamState = None
    value_opt: nc.AdamState = None
    n_updates: int = 0

    def __post_init__(self):
        if self.policy_opt is None:
            self.policy_opt = nc.AdamState.zeros(self.policy.size)
        if self.value_opt is None:
            self.value_opt = nc.AdamState.zeros(self.value.size)

    @classmethod
    def create(cls, obs_dim, act_dim, config: PpoConfig, rng) -> "Learner":
        policy = nc.init_params([obs_dim, *config.policy_hidden, act_dim], rng,
                                act_dim=act_dim, output_gain=0.01)
        value = nc.init_params([obs_dim, *config.value_hidden, 1], rng, output_gain=1.0)
        return cls(policy, value)

    def act(self, obs, rng):
        """Sample actions for a batch of observations; returns (actions, log_probs, values)."""
        mean = nc.mlp_forward(self.policy, obs)
        ga = nc.gaussian_sample(mean, self.policy.log_std, rng)
        values = nc.mlp_forward(self.value, obs)[..., 0]
        return ga.sample, ga.log_prob, values


def mean_action(policy: nc.ParamSet, obs) -> np.ndarray:
    return nc.mlp_forward(policy, obs)


def update(learner: Learner, buffer: RolloutBuffer, config: PpoConfig, bootstrap_value,
           rng: np.random.Generator, step_index=None) -> dict:
    """One PPO update from a full buffer; mutates ``learner`` in place."""
    adv, returns = compute_gae(buffer, config.gamma, config.gae_lambda, bootstrap_value)
    n = len(buffer)
    obs = buffer.obs.reshape(n, -1)
    actions = buffer.actions.reshape(n, -1)
    old_lp = buffer.log_probs.reshape(n)
    old_values = buffer.values.reshape(n)
    adv = normalize_advantages(adv.reshape(n))
    returns = returns.reshape(n)

    p_losses, v_losses, kls = [], [], []
    for _ in range(config.epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start: start + config.batch_size]
            p_loss, p_grad, new_lp = policy_loss_and_grad(
                learner.policy, obs[idx], actions[idx], old_lp[idx], adv[idx],
                config.clip_epsilon, config.entropy_coef)
            v_loss, v_grad = value_loss_and_grad(
                learner.value, obs[idx], returns[idx], config.value_loss_coef)
            if not (np.all(np.isfinite(p_grad)) and np.all(np.isfinite(v_grad))):
                raise TrainingDivergedError(
                    f"non-finite gradient in PPO update at step {step_index}", step=step_index)
            nc.adam_step(learner.policy, p_grad, learner.policy_opt, config.lr)
            nc.adam_update(learner.value.weights, v_grad, learner.value_opt, config.lr)
            p_losses.append(p_loss)
            v_losses.append(v_loss)
            kls.append(float(np.mean(old_lp[idx] - new_lp)))
    learner.n_updates += 1
    var_ret = np.var(returns)
    explained = float("nan") if var_ret == 0 else float(1.0 - np.var(returns - old_values) / var_ret)
    return {
        "policy_loss": float(np.mean(p_losses)),
        "value_loss": float(np.mean(v_losses)),
        "approx_kl": float(np.mean(kls)),
        "explained_variance": explained,
    }


@dataclass
class TrainResult:
    learner: Learner
    curve: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def policy(self) -> nc.ParamSet:
        return self.learner.policy

    @property
    def value(self) -> nc.ParamSet:
        return self.learner.value


CURVE_COLUMNS = ("step", "episode_return", "goals_nominal", "goals_adversarial")


def episode_seed(seed, stream, episode) -> int:
    """Independent per-(stream, episode) reset seed derived from the run seed."""
    return int(np.random.SeedSequence([int(seed), int(stream), int(episode)]).generate_state(1)[0])


def train(env_factory, config: PpoConfig, seed: int, learner: Learner | None = None,
          on_checkpoint=None) -> TrainResult:
    """Collect experience from ``config.n_envs`` environments and run PPO.

    ``env_factory(i)`` builds the i-th environment. Episodes are fixed
    length; one curve row is recorded per finished episode.
    """
    envs = [env_factory(i) for i in range(config.n_envs)]
    obs_dim, act_dim = envs[0].obs_dim, envs[0].act_dim
    seeds = np.random.SeedSequence(int(seed)).spawn(3)
    init_rng, act_rng, shuffle_rng = (np.random.default_rng(s) for s in seeds)
    if learner is None:
        learner = Learner.create(obs_dim, act_dim, config, init_rng)
    elif learner.policy.in_dim != obs_dim or learner.policy.out_dim != act_dim:
        raise ContractViolation(
            f"policy dims {learner.policy.layer_dims} incompatible with env "
            f"({obs_dim} -> {act_dim})")
    result = TrainResult(learner)
    if config.total_steps == 0:
        return result

    episodes = [0] * config.n_envs
    obs = np.stack([env.reset(episode_seed(seed, i, 0)) for i, env in enumerate(envs)])
    ep_ret = np.zeros(config.n_envs)
    ep_nom = np.zeros(config.n_envs, dtype=int)
    ep_adv = np.zeros(config.n_envs, dtype=int)
    buffer = RolloutBuffer(config.update_interval, obs_dim, act_dim, config.n_envs)
    rewards = np.zeros(config.n_envs)
    dones = np.zeros(config.n_envs)
    steps = 0
    next_ckpt = config.checkpoint_interval or None
    while steps < config.total_steps:
        actions, log_probs, values = learner.act(obs, act_rng)
        next_obs = np.empty_like(obs)
        for i, env in enumerate(envs):
            o, r, d, info = env.step(actions[i])
            rewards[i] = r
            dones[i] = d
            ep_ret[i] += r
            ep_nom[i] += info.get("nominal_goal", False)
            ep_adv[i] += info.get("adversarial_goal", False)
            if d:
                result.curve.append({
                    "step": steps + config.n_envs,
                    "episode_return": float(ep_ret[i]),
                    "goals_nominal": int(ep_nom[i]),
                    "goals_adversarial": int(ep_adv[i]),
                })
                ep_ret[i] = 0.0
                ep_nom[i] = ep_adv[i] = 0
                episodes[i] += 1
                o = env.reset(episode_seed(seed, i, episodes[i]))
            next_obs[i] = o
        buffer.add(obs, actions, log_probs, rewards, values, dones)
        obs = next_obs
        steps += config.n_envs
        if buffer.full:
            bootstrap = nc.mlp_forward(learner.value, obs)[:, 0]
            diag = update(learner, buffer, config, bootstrap, shuffle_rng, step_index=steps)
            diag["step"] = steps
            result.diagnostics.append(diag)
            buffer.clear()
            logger.debug("update %d at step %d: %s", learner.n_updates, steps, diag)
        if next_ckpt is not None and steps >= next_ckpt and on_checkpoint is not None:
            on_checkpoint(steps, learner)
            next_ckpt += config.checkpoint_interval
    return result
