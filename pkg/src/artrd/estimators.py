"""scikit-learn style wrappers around the training pipeline.

The estimators hold hyperparameters in ``__init__`` (so ``get_params`` and
``set_params`` work and ``sklearn.base.clone`` gives an unfitted copy),
train in ``fit`` and map observations to actions in ``predict``. Training
data comes from the simulator, so ``fit`` ignores ``X`` and ``y``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import numcore as nc
from .attack import AttackConfig, payload_dim, train_adversary
from .defense import DefenseScheme, run_scheme
from .envs import EnvConfig, NavigationEnv
from .evaluation import EvalScenario, evaluate
from .exceptions import ContractViolation
from .ppo import PpoConfig, train


def check_observations(X, n_features: int) -> np.ndarray:
    """Validate a batch of observations: 2D, finite floats, ``n_features`` wide."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != n_features:
        raise ContractViolation(f"expected {n_features} features per observation, got {X.shape[1]}")
    return X


def _as_policy(p) -> nc.ParamSet:
    if isinstance(p, nc.ParamSet):
        return p
    if isinstance(p, (tuple, list)) and p and isinstance(p[0], nc.ParamSet):
        return p[0]
    return nc.load_checkpoint(p)[0]


class _PolicyEstimator(BaseEstimator):
    """Shared predict/score logic; subclasses set ``policy_`` in ``fit``."""

    def _ppo_config(self) -> PpoConfig:
        return PpoConfig(total_steps=self.total_steps, lr=self.learning_rate, n_envs=self.n_envs,
                         policy_hidden=tuple(self.policy_hidden),
                         value_hidden=tuple(self.value_hidden))

    def _env_config(self) -> EnvConfig:
        return EnvConfig(env_kind=self.env_kind, min_goal_separation=self.min_goal_separation)

    def predict(self, X) -> np.ndarray:
        """Mean action for each observation row, clamped to [-1, 1]."""
        check_is_fitted(self, "policy_")
        X = check_observations(X, self.policy_.in_dim)
        return np.clip(nc.mlp_forward(self.policy_, X), -1.0, 1.0)

    def __sklearn_is_fitted__(self):
        return hasattr(self, "policy_")


class NominalPolicy(_PolicyEstimator):
    """PPO navigation controller.

    Parameters
    ----------
    env_kind : {"point", "car"}
    min_goal_separation : float
        d_G used while training.
    total_steps : int
        Environment steps of PPO training.
    seed : int
    learning_rate : float
    n_envs : int
        Parallel environments feeding each update.
    policy_hidden, value_hidden : tuple of int
    """

    def __init__(self, env_kind="point", min_goal_separation=0.5, total_steps=500_000, seed=0,
                 learning_rate=3e-4, n_envs=8, policy_hidden=(64, 64), value_hidden=(128, 64)):
        self.env_kind = env_kind
        self.min_goal_separation = min_goal_separation
        self.total_steps = total_steps
        self.seed = seed
        self.learning_rate = learning_rate
        self.n_envs = n_envs
        self.policy_hidden = policy_hidden
        self.value_hidden = value_hidden

    def fit(self, X=None, y=None):
        env = self._env_config()
        res = train(lambda i: NavigationEnv(env), self._ppo_config(), self.seed)
        self.policy_, self.value_, self.curve_ = res.policy, res.value, res.curve
        self.n_features_in_ = env.obs_dim
        return self

    def score(self, X=None, y=None, episodes=10):
        """Mean nominal goals per evaluation episode (no attack)."""
        check_is_fitted(self, "policy_")
        report = evaluate(EvalScenario(self.min_goal_separation, episodes=episodes,
                                       seed=self.seed),
                          self.policy_, env_config=self._env_config())
        return report.nominal_mean


class AdversaryPolicy(_PolicyEstimator):
    """Perturbation policy trained against a frozen nominal controller.

    Parameters
    ----------
    nominal : ParamSet, (policy, value) tuple, or checkpoint path
    variant : {"state-unaware", "state-aware"}
    Remaining parameters as for :class:`NominalPolicy`.
    """

    def __init__(self, nominal=None, variant="state-unaware", env_kind="point",
                 min_goal_separation=0.5, total_steps=500_000, seed=0, learning_rate=3e-4,
                 n_envs=8, policy_hidden=(64, 64), value_hidden=(128, 64)):
        self.nominal = nominal
        self.variant = variant
        self.env_kind = env_kind
        self.min_goal_separation = min_goal_separation
        self.total_steps = total_steps
        self.seed = seed
        self.learning_rate = learning_rate
        self.n_envs = n_envs
        self.policy_hidden = policy_hidden
        self.value_hidden = value_hidden

    def _attack_config(self) -> AttackConfig:
        return AttackConfig(variant=self.variant, env=self._env_config())

    def fit(self, X=None, y=None):
        if self.nominal is None:
            raise ContractViolation("AdversaryPolicy needs a nominal policy")
        cfg = self._attack_config()
        res = train_adversary(cfg, self._ppo_config(), self.seed,
                              nominal_policy=_as_policy(self.nominal))
        self.policy_, self.value_, self.curve_ = res.policy, res.value, res.curve
        self.n_features_in_ = payload_dim(cfg.variant, cfg.env)
        return self

    def score(self, X=None, y=None, episodes=10):
        """Mean adversarial goals per evaluation episode under attack."""
        check_is_fitted(self, "policy_")
        report = evaluate(EvalScenario(self.min_goal_separation, episodes=episodes,
                                       attack_enabled=True, seed=self.seed),
                          _as_policy(self.nominal), self.policy_,
                          env_config=self._env_config(), attack_config=self._attack_config())
        return report.adversarial_mean


class DefendedPolicy(_PolicyEstimator):
    """Nominal controller produced by one of the adversarial-training schemes.

    Parameters
    ----------
    scheme : {"finetune", "fixed", "tandem"}
    nominal, adversary : ParamSet, tuple or checkpoint path
        Trained nominal (finetune only) and frozen state-unaware adversary
        (finetune and fixed).
    """

    def __init__(self, scheme="finetune", nominal=None, adversary=None, env_kind="point",
                 min_goal_separation=0.5, total_steps=500_000, seed=0, learning_rate=3e-4,
                 n_envs=8, policy_hidden=(64, 64), value_hidden=(128, 64), cadence=1):
        self.scheme = scheme
        self.nominal = nominal
        self.adversary = adversary
        self.env_kind = env_kind
        self.min_goal_separation = min_goal_separation
        self.total_steps = total_steps
        self.seed = seed
        self.learning_rate = learning_rate
        self.n_envs = n_envs
        self.policy_hidden = policy_hidden
        self.value_hidden = value_hidden
        self.cadence = cadence

    @staticmethod
    def _load(ref):
        if ref is None or isinstance(ref, (tuple, list)):
            return ref
        if isinstance(ref, nc.ParamSet):
            return (ref,)
        return nc.load_checkpoint(ref)

    def fit(self, X=None, y=None):
        scheme = DefenseScheme(self.scheme, cadence=self.cadence)
        nominal, adversary = self._load(self.nominal), self._load(self.adversary)
        if scheme.kind != "tandem" and adversary is None:
            raise ContractViolation(f"scheme {scheme.kind!r} needs an adversary")
        if scheme.kind == "finetune" and nominal is None:
            raise ContractViolation("scheme 'finetune' needs a trained nominal")
        attack = AttackConfig(env=self._env_config())
        res = run_scheme(scheme, attack, self._ppo_config(), self.seed, nominal, adversary)
        trained = res.nominal if scheme.kind == "tandem" else res
        self.policy_, self.value_, self.curve_ = trained.policy, trained.value, trained.curve
        if scheme.kind == "tandem":
            self.adversary_ = res.adversary.policy
        self.n_features_in_ = attack.env.obs_dim
        return self
