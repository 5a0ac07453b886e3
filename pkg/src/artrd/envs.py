"""Deterministic 2D goal-navigation environments (Point and Car analogs).

Each episode has a nominal goal and an adversarial goal. Reaching either
one regenerates both; episodes never terminate early and run for exactly
``max_steps`` steps.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import ConfigurationError, ContractViolation

ENV_KINDS = ("point", "car")
MAX_GOAL_TRIES = 10_000
TWO_PI = 2.0 * math.pi


@dataclass
class EnvConfig:
    env_kind: str = "point"
    arena_half_width: float = 3.0
    goal_radius: float = 0.3
    min_goal_separation: float = 0.5
    dt: float = 0.1
    max_steps: int = 1000
    pseudo_lidar_bins: int = 8
    thrust_gain: float = 1.0
    turn_gain: float = 2.5
    drag: float = 0.05
    wheel_gain: float = 1.0
    wheel_base: float = 0.4

    def __post_init__(self):
        self.env_kind = str(self.env_kind).lower()
        if self.env_kind not in ENV_KINDS:
            raise ConfigurationError(f"env_kind must be one of {ENV_KINDS}, got {self.env_kind!r}")
        if self.goal_radius <= 0:
            raise ConfigurationError("goal_radius must be > 0")
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")
        if self.arena_half_width <= 0:
            raise ConfigurationError("arena_half_width must be > 0")
        if self.min_goal_separation < 0:
            raise ConfigurationError("min_goal_separation must be >= 0")
        if self.min_goal_separation >= self.arena_diagonal:
            raise ConfigurationError(
                f"min_goal_separation {self.min_goal_separation} must be below the "
                f"arena diameter {self.arena_diagonal:.3f}"
            )
        if self.max_steps < 1 or self.pseudo_lidar_bins < 1:
            raise ConfigurationError("max_steps and pseudo_lidar_bins must be positive")
        if not 0.0 <= self.drag < 1.0:
            raise ConfigurationError("drag must be in [0, 1)")
        if self.wheel_base <= 0:
            raise ConfigurationError("wheel_base must be > 0")

    @property
    def arena_diagonal(self) -> float:
        return 2.0 * math.sqrt(2.0) * self.arena_half_width

    @property
    def obs_dim(self) -> int:
        return 6 + self.pseudo_lidar_bins

    act_dim = 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown env keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EnvState:
    x: float
    y: float
    heading: float
    linear_velocity: float
    angular_velocity: float
    nominal_goal: tuple
    adversarial_goal: tuple
    step: int
    arena_half_width: float
    rng: np.random.Generator = field(repr=False, compare=False)

    @property
    def position(self) -> tuple:
        return (self.x, self.y)

    def snapshot(self) -> tuple:
        """Hashable view of everything except the RNG (for equality checks)."""
        return (self.x, self.y, self.heading, self.linear_velocity,
                self.angular_velocity, self.nominal_goal, self.adversarial_goal,
                self.step)

    def copy(self) -> "EnvState":
        import copy

        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = copy.deepcopy(self.rng.bit_generator.state)
        return EnvState(self.x, self.y, self.heading, self.linear_velocity,
                        self.angular_velocity, self.nominal_goal,
                        self.adversarial_goal, self.step, self.arena_half_width, rng)


def normalize_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    theta = math.fmod(theta + math.pi, TWO_PI)
    if theta <= 0.0:
        theta += TWO_PI
    return theta - math.pi


def _clip1(a: float) -> float:
    return -1.0 if a < -1.0 else (1.0 if a > 1.0 else a)


def clamp_action(action) -> tuple:
    a = np.asarray(action, dtype=np.float64).ravel()
    if a.size != 2:
        raise ContractViolation(f"actions are 2-vectors, got {a.size} values")
    return _clip1(float(a[0])), _clip1(float(a[1]))


def _sample_goals(config: EnvConfig, rng: np.random.Generator, x: float, y: float):
    hw = config.arena_half_width
    keepout = 2.0 * config.goal_radius
    for _ in range(MAX_GOAL_TRIES):
        gx, gy, ax, ay = rng.uniform(-hw, hw, size=4)
        if math.hypot(gx - ax, gy - ay) < config.min_goal_separation:
            continue
        if math.hypot(gx - x, gy - y) < keepout or math.hypot(ax - x, ay - y) < keepout:
            continue
        return (float(gx), float(gy)), (float(ax), float(ay))
    raise ConfigurationError(
        f"could not place goals {config.min_goal_separation} apart in an arena of "
        f"half-width {hw} after {MAX_GOAL_TRIES} tries"
    )


def reset(config: EnvConfig, seed) -> tuple:
    """Fresh episode: agent at the origin, random heading, random goal pair."""
    rng = np.random.default_rng(seed)
    heading = normalize_angle(float(rng.uniform(-math.pi, math.pi)))
    nominal, adversarial = _sample_goals(config, rng, 0.0, 0.0)
    state = EnvState(0.0, 0.0, heading, 0.0, 0.0, nominal, adversarial, 0,
                     config.arena_half_width, rng)
    return state, build_observation(state, config)


def _integrate(state: EnvState, config: EnvConfig) -> None:
    dt = config.dt
    state.x += state.linear_velocity * math.cos(state.heading) * dt
    state.y += state.linear_velocity * math.sin(state.heading) * dt
    hw = state.arena_half_width
    state.x = min(max(state.x, -hw), hw)
    state.y = min(max(state.y, -hw), hw)
    state.step += 1


def step_point(state: EnvState, action, config: EnvConfig) -> EnvState:
    """Point robot: a[0] is forward thrust, a[1] is turn rate."""
    thrust, turn = clamp_action(action)
    state.angular_velocity = config.turn_gain * turn
    state.heading = normalize_angle(state.heading + state.angular_velocity * config.dt)
    state.linear_velocity = ((1.0 - config.drag) * state.linear_velocity
                             + config.thrust_gain * thrust * config.dt)
    _integrate(state, config)
    return state


def step_car(state: EnvState, action, config: EnvConfig) -> EnvState:
    """Differential drive: a[0] and a[1] are left and right wheel commands."""
    left, right = clamp_action(action)
    forward = config.wheel_gain * (left + right) / 2.0
    state.angular_velocity = config.wheel_gain * (right - left) / config.wheel_base
    state.heading = normalize_angle(state.heading + state.angular_velocity * config.dt)
    state.linear_velocity = (1.0 - config.drag) * state.linear_velocity + forward * config.dt
    _integrate(state, config)
    return state


def step(state: EnvState, action, config: EnvConfig) -> EnvState:
    if config.env_kind == "point":
        return step_point(state, action, config)
    return step_car(state, action, config)


def goal_distance(state: EnvState, goal) -> float:
    return math.hypot(goal[0] - state.x, goal[1] - state.y)


def progress_reward(d_prev: float, d_now: float, reached: bool, bonus: float = 1.0) -> float:
    return (d_prev - d_now) + (bonus if reached else 0.0)


def nominal_reward(prev_state: EnvState, state: EnvState, config: EnvConfig) -> float:
    """Distance progress toward the nominal goal plus 1.0 on arrival."""
    d_prev = goal_distance(prev_state, state.nominal_goal)
    d_now = goal_distance(state, state.nominal_goal)
    return progress_reward(d_prev, d_now, d_now <= config.goal_radius)


def on_goal_reached(state: EnvState, config: EnvConfig) -> EnvState:
    """Draw a new goal pair; only legal while the agent sits on a goal."""
    r = config.goal_radius
    if (goal_distance(state, state.nominal_goal) > r
            and goal_distance(state, state.adversarial_goal) > r):
        raise ContractViolation("on_goal_reached called while the agent is at neither goal")
    state.nominal_goal, state.adversarial_goal = _sample_goals(config, state.rng, state.x, state.y)
    return state


def goal_features(state: EnvState, goal, config: EnvConfig) -> tuple:
    """(compass_x, compass_y, distance) of a goal in the agent's body frame."""
    dx = goal[0] - state.x
    dy = goal[1] - state.y
    c, s = math.cos(state.heading), math.sin(state.heading)
    bx = c * dx + s * dy
    by = -s * dx + c * dy
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0, 0.0, 0.0
    return bx / dist, by / dist, dist


def lidar_bin(compass_x: float, compass_y: float, n_bins: int) -> int:
    bearing = math.atan2(compass_y, compass_x) % TWO_PI
    return int(bearing // (TWO_PI / n_bins)) % n_bins


def build_observation(state: EnvState, config: EnvConfig) -> np.ndarray:
    """Nominal observation: body velocity, turn rate, goal compass, distance, lidar."""
    cx, cy, dist = goal_features(state, state.nominal_goal, config)
    n_bins = config.pseudo_lidar_bins
    obs = np.zeros(6 + n_bins)
    obs[0] = state.linear_velocity
    obs[2] = state.angular_velocity
    obs[3] = cx
    obs[4] = cy
    obs[5] = dist
    if dist > 0.0:
        obs[6 + lidar_bin(cx, cy, n_bins)] = max(0.0, 1.0 - dist / config.arena_diagonal)
    return obs


class NavigationEnv:
    """Stateful single-agent wrapper used by the trainer and evaluator.

    ``step`` returns ``(obs, reward, done, info)``; ``info`` carries goal
    events, goal distances before/after the move and the applied action.
    """

    act_dim = 2

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.state = None

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def max_steps(self) -> int:
        return self.config.max_steps

    def reset(self, seed) -> np.ndarray:
        self.state, obs = reset(self.config, seed)
        return obs

    def observe(self) -> np.ndarray:
        return build_observation(self.state, self.config)

    def step(self, action):
        cfg = self.config
        s = self.state
        if s is None:
            raise ContractViolation("reset() must be called before step()")
        nom, adv = s.nominal_goal, s.adversarial_goal
        d_nom_prev = goal_distance(s, nom)
        d_adv_prev = goal_distance(s, adv)
        applied = clamp_action(action)
        step(s, applied, cfg)
        d_nom = goal_distance(s, nom)
        d_adv = goal_distance(s, adv)
        at_nom = d_nom <= cfg.goal_radius
        at_adv = d_adv <= cfg.goal_radius
        reward = progress_reward(d_nom_prev, d_nom, at_nom)
        if at_nom or at_adv:
            on_goal_reached(s, cfg)
        info = {
            "nominal_goal": at_nom,
            "adversarial_goal": at_adv,
            "d_nom_prev": d_nom_prev,
            "d_nom": d_nom,
            "d_adv_prev": d_adv_prev,
            "d_adv": d_adv,
            "applied_action": applied,
        }
        return build_observation(s, cfg), reward, s.step >= cfg.max_steps, info
