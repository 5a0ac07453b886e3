"""Evaluation protocol and analyses.

Frozen policies act through their mean action. Each scenario runs a fixed
number of fixed-length episodes and counts arrivals at the nominal and the
adversarial goal (each arrival regenerates the goal pair).
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import envs
from . import numcore as nc
from .attack import STATE_UNAWARE, AdversarialEnv, AttackConfig, FrozenController, adv_reward
from .exceptions import ContractViolation, InsufficientDataError
from .io import config_hash
from .ppo import episode_seed

DEFAULT_DG = (0.5, 1.0, 1.5)
EVAL_STREAM = 10_000
EXTREME_THRESHOLD = 0.999


@dataclass
class EvalScenario:
    min_goal_separation: float = 0.5
    episodes: int = 10
    steps_per_episode: int = 1000
    attack_enabled: bool = False
    seed: int = 0

    def env_config(self, base: envs.EnvConfig | None = None) -> envs.EnvConfig:
        base = base or envs.EnvConfig()
        return dataclasses.replace(base, min_goal_separation=self.min_goal_separation,
                                   max_steps=self.steps_per_episode)


@dataclass
class EvalReport:
    scenario: EvalScenario
    adversarial_goals: list = field(default_factory=list)
    nominal_goals: list = field(default_factory=list)
    extreme_actions: list = field(default_factory=list)
    adversarial_returns: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @staticmethod
    def _stat(values):
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    @property
    def adversarial_mean(self) -> float:
        return self._stat(self.adversarial_goals)[0]

    @property
    def adversarial_std(self) -> float:
        return self._stat(self.adversarial_goals)[1]

    @property
    def nominal_mean(self) -> float:
        return self._stat(self.nominal_goals)[0]

    @property
    def nominal_std(self) -> float:
        return self._stat(self.nominal_goals)[1]

    @property
    def extreme_per_dimension(self) -> list:
        return np.asarray(self.extreme_actions).sum(axis=0).tolist()

    @property
    def extreme_mean(self) -> float:
        """Mean extreme-action count (both dimensions) per trajectory."""
        return float(np.asarray(self.extreme_actions).sum(axis=1).mean())

    CSV_COLUMNS = ("seed", "d_g", "attack", "episode", "goals_adversarial",
                   "goals_nominal", "extreme_dim0", "extreme_dim1", "adversarial_return")

    def rows(self):
        s = self.scenario
        for e, (ga, gn, ex, ar) in enumerate(zip(self.adversarial_goals, self.nominal_goals,
                                                 self.extreme_actions,
                                                 self.adversarial_returns)):
            yield (s.seed, s.min_goal_separation, int(s.attack_enabled), e, ga, gn,
                   ex[0], ex[1], ar)

    @classmethod
    def from_rows(cls, rows, metadata=None) -> "EvalReport":
        rows = list(rows)
        if not rows:
            raise InsufficientDataError("no rows")
        first = rows[0]
        scenario = EvalScenario(min_goal_separation=float(first["d_g"]), episodes=len(rows),
                                attack_enabled=bool(int(first["attack"])),
                                seed=int(first["seed"]))
        return cls(
            scenario,
            [int(r["goals_adversarial"]) for r in rows],
            [int(r["goals_nominal"]) for r in rows],
            [[int(r["extreme_dim0"]), int(r["extreme_dim1"])] for r in rows],
            [float(r["adversarial_return"]) for r in rows],
            dict(metadata or {}),
        )


def extreme_action_count(actions, threshold=EXTREME_THRESHOLD) -> int:
    """Number of action components with magnitude at or above ``threshold``."""
    a = np.asarray(actions, dtype=np.float64)
    if a.size and np.max(np.abs(a)) > 1.0 + 1e-12:
        raise ContractViolation("actions must lie within [-1, 1]")
    return int(np.count_nonzero(np.abs(a) >= threshold))


def evaluate(scenario: EvalScenario, nominal_policy: nc.ParamSet,
             adversary_policy: nc.ParamSet | None = None,
             env_config: envs.EnvConfig | None = None,
             attack_config: AttackConfig | None = None) -> EvalReport:
    """Run the scenario's episodes and count goal arrivals."""
    cfg = scenario.env_config(env_config)
    if scenario.attack_enabled:
        if adversary_policy is None:
            raise ContractViolation("attack-enabled scenario needs an adversary policy")
        attack_config = dataclasses.replace(attack_config or AttackConfig(), env=cfg)
    nominal = FrozenController(nominal_policy)
    adversary = FrozenController(adversary_policy) if scenario.attack_enabled else None
    if adversary_policy is not None and scenario.attack_enabled:
        expected = (AdversarialEnv(attack_config, nominal_policy).obs_dim, 2)
        if (adversary_policy.in_dim, adversary_policy.out_dim) != expected:
            raise ContractViolation(
                f"adversary maps {adversary_policy.in_dim} -> {adversary_policy.out_dim}, "
                f"attack needs {expected[0]} -> {expected[1]}")

    report = EvalReport(scenario, metadata={
        "seed": scenario.seed,
        "config_hash": config_hash({"env": cfg.to_dict(),
                                    "scenario": dataclasses.asdict(scenario)}),
        "nominal": nominal_policy.checksum()[:16],
        "adversary": adversary_policy.checksum()[:16] if adversary is not None else None,
    })
    for e in range(scenario.episodes):
        seed = episode_seed(scenario.seed, EVAL_STREAM, e)
        if adversary is not None:
            env = AdversarialEnv(attack_config, nominal_policy)
            obs = env.reset(seed)
            policy = adversary
        else:
            env = envs.NavigationEnv(cfg)
            obs = env.reset(seed)
            policy = nominal
        n_adv = n_nom = 0
        extremes = np.zeros(2, dtype=int)
        adv_return = 0.0
        done = False
        while not done:
            obs, _, done, info = env.step(policy(obs))
            applied = np.asarray(info["applied_action"])
            extremes += np.abs(applied) >= EXTREME_THRESHOLD
            n_adv += info["adversarial_goal"]
            n_nom += info["nominal_goal"]
            adv_return += _adv_reward_from_info(info, attack_config)
        report.adversarial_goals.append(int(n_adv))
        report.nominal_goals.append(int(n_nom))
        report.extreme_actions.append(extremes.tolist())
        report.adversarial_returns.append(float(adv_return))
    return report


def _adv_reward_from_info(info, attack_config):
    ac = attack_config or AttackConfig()
    return adv_reward(info["d_adv_prev"], info["d_adv"], info["adversarial_goal"],
                      info["nominal_goal"], ac.penalty, ac.goal_bonus)


def evaluate_grid(nominal_policy, adversary_policy=None, env_config=None, attack_config=None,
                  dgs=DEFAULT_DG, seed=0, episodes=10, steps_per_episode=1000,
                  attack_enabled=None) -> dict:
    """One report per d_G value, keyed by d_G."""
    if attack_enabled is None:
        attack_enabled = adversary_policy is not None
    out = {}
    for dg in dgs:
        sc = EvalScenario(dg, episodes, steps_per_episode, attack_enabled, seed)
        out[dg] = evaluate(sc, nominal_policy, adversary_policy, env_config, attack_config)
    check_dg_monotonicity(out)
    return out


def check_dg_monotonicity(reports: dict) -> bool:
    """Warn (never fail) when adversarial success grows with d_G."""
    keys = sorted(reports)
    means = [reports[k].adversarial_mean for k in keys]
    ok = all(b <= a for a, b in zip(means, means[1:]))
    if not ok and any(reports[k].scenario.attack_enabled for k in keys):
        warnings.warn(f"adversarial success not non-increasing in d_G: "
                      f"{dict(zip(keys, means))}", RuntimeWarning, stacklevel=2)
    return ok


def robustness_correlation(pairs) -> float:
    """Spearman rank correlation of (extreme_count, final_adv_reward) pairs.

    Ties get average ranks; a constant column yields 0.
    """
    pairs = list(pairs)
    if len(pairs) < 5:
        raise InsufficientDataError(f"need at least 5 pairs, got {len(pairs)}")
    x = rankdata([p[0] for p in pairs], method="average")
    y = rankdata([p[1] for p in pairs], method="average")
    x = x - x.mean()
    y = y - y.mean()
    denom = math.sqrt(float(np.dot(x, x)) * float(np.dot(y, y)))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x, y) / denom)


def final_reward(curve, last=10) -> float:
    """Mean episode return over the last ``last`` episodes of a training curve."""
    if not curve:
        raise InsufficientDataError("empty curve")
    tail = curve[-last:]
    return float(np.mean([row["episode_return"] for row in tail]))


@dataclass
class DefenseRow:
    d_g: float
    undefended_attack: tuple
    defended_attack: tuple
    undefended_clean: tuple
    defended_clean: tuple
    adversarial_reduction: float
    nominal_retention: float


def _pooled(reports, attr):
    values = [v for r in reports for v in getattr(r, attr)]
    return float(np.mean(values)), float(np.std(values))


def defense_report(pre: dict, post: dict) -> list:
    """Compare undefended (``pre``) and defended (``post``) reports.

    Both arguments map ``d_G -> {"attack": [EvalReport...], "clean": [EvalReport...]}``
    with one report per seed, in matching seed order. Returns one
    :class:`DefenseRow` per d_G; each cell is ``(adv_mean, adv_std, nom_mean, nom_std)``.
    """
    if sorted(pre) != sorted(post):
        raise ContractViolation("pre and post cover different d_G values")
    rows = []
    for dg in sorted(pre):
        cells = {}
        for tag, src in (("undefended", pre[dg]), ("defended", post[dg])):
            for mode in ("attack", "clean"):
                cells[f"{tag}_{mode}"] = src[mode]
        for mode in ("attack", "clean"):
            pre_seeds = [r.scenario.seed for r in cells[f"undefended_{mode}"]]
            post_seeds = [r.scenario.seed for r in cells[f"defended_{mode}"]]
            if pre_seeds != post_seeds:
                raise ContractViolation(f"seed mismatch at d_G={dg}: {pre_seeds} vs {post_seeds}")
        summary = {k: (*_pooled(v, "adversarial_goals"), *_pooled(v, "nominal_goals"))
                   for k, v in cells.items()}
        pre_adv = summary["undefended_attack"][0]
        post_adv = summary["defended_attack"][0]
        pre_nom = summary["undefended_clean"][2]
        post_nom = summary["defended_clean"][2]
        rows.append(DefenseRow(
            dg, summary["undefended_attack"], summary["defended_attack"],
            summary["undefended_clean"], summary["defended_clean"],
            relative_reduction(pre_adv, post_adv),
            post_nom / pre_nom if pre_nom > 0 else float("nan"),
        ))
    return rows


def relative_reduction(before: float, after: float) -> float:
    if before <= 0:
        return 0.0
    return (before - after) / before


def format_defense_table(rows) -> str:
    head = ("d_G   goal       undefended+attack  defended+attack  "
            "undefended+clean  defended+clean")
    lines = [head, "-" * len(head)]

    def cell(c, i):
        return f"{c[i]:6.2f} ± {c[i + 1]:5.2f}"

    for r in rows:
        lines.append(f"{r.d_g:<5} adversary  {cell(r.undefended_attack, 0):>17}  "
                     f"{cell(r.defended_attack, 0):>15}  {'N.A.':>16}  {'N.A.':>14}")
        lines.append(f"{'':<5} nominal    {cell(r.undefended_attack, 2):>17}  "
                     f"{cell(r.defended_attack, 2):>15}  {cell(r.undefended_clean, 2):>16}  "
                     f"{cell(r.defended_clean, 2):>14}")
        lines.append(f"{'':<5} reduction in adversarial success {100 * r.adversarial_reduction:.1f}%, "
                     f"clean nominal retention {100 * r.nominal_retention:.1f}%")
    return "\n".join(lines)


def format_eval_table(blocks: dict) -> str:
    """Table-1-shaped text: per d_G an adversary row and a nominal row.

    ``blocks`` maps column label -> {d_G: [EvalReport, ...]}.
    """
    labels = list(blocks)
    dgs = sorted({dg for b in blocks.values() for dg in b})
    lines = ["Min d_G  Goal       " + "  ".join(f"{lab:>18}" for lab in labels)]
    for dg in dgs:
        for goal, attr in (("Adversary", "adversarial_goals"), ("Nominal", "nominal_goals")):
            cells = []
            for lab in labels:
                reps = blocks[lab].get(dg, [])
                if reps:
                    m, s = _pooled(reps, attr)
                    cells.append(f"{m:8.2f} ± {s:6.2f}")
                else:
                    cells.append(" " * 18)
            prefix = f"{dg:<8} " if goal == "Adversary" else " " * 9
            lines.append(f"{prefix}{goal:<10} " + "  ".join(f"{c:>18}" for c in cells))
    return "\n".join(lines)


__all__ = [
    "EvalScenario", "EvalReport", "evaluate", "evaluate_grid", "extreme_action_count",
    "robustness_correlation", "defense_report", "relative_reduction", "final_reward",
    "format_defense_table", "format_eval_table", "check_dg_monotonicity", "DEFAULT_DG",
    "STATE_UNAWARE",
]
