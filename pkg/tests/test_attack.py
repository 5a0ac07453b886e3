import math

import numpy as np
import pytest

from artrd import envs
from artrd import numcore as nc
from artrd.attack import (STATE_AWARE, STATE_UNAWARE, AdversarialEnv, AttackConfig,
                          FrozenController, adv_reset, adv_reward, adv_step, train_adversary)
from artrd.envs import EnvConfig, NavigationEnv
from artrd.exceptions import CheckpointError, ConfigurationError
from artrd.ppo import PpoConfig


def constant_policy(action, obs_dim=14):
    """Policy whose mean is ``action`` for every input."""
    dims = [obs_dim, 2]
    w = np.zeros(nc.n_weights(dims))
    w[-2:] = action
    return nc.ParamSet(dims, w, np.zeros(2))


def random_policy(seed, obs_dim=14, hidden=(16,)):
    return nc.init_params([obs_dim, *hidden, 2], np.random.default_rng(seed), act_dim=2,
                          output_gain=1.0)


def test_payload_lengths():
    nominal = random_policy(0)
    env, obs = adv_reset(AttackConfig(variant=STATE_UNAWARE), 0, nominal)
    assert obs.shape == (5,) and env.obs_dim == 5
    env, obs = adv_reset(AttackConfig(variant=STATE_AWARE), 0, nominal)
    assert obs.shape == (14 + 5,) and env.obs_dim == 19


def test_variant_aliases():
    assert AttackConfig(variant="StateUnaware").variant == STATE_UNAWARE
    assert AttackConfig(variant="state_aware").variant == STATE_AWARE
    with pytest.raises(ConfigurationError):
        AttackConfig(variant="omniscient")


def test_first_observation_deterministic():
    nominal = random_policy(1)
    _, a = adv_reset(AttackConfig(), 5, nominal)
    _, b = adv_reset(AttackConfig(), 5, nominal)
    np.testing.assert_array_equal(a, b)


def test_payload_contents():
    nominal = random_policy(2)
    cfg = AttackConfig(variant=STATE_AWARE)
    env, obs = adv_reset(cfg, 3, nominal)
    s = env.state
    nominal_obs = envs.build_observation(s, cfg.env)
    expected_action = nc.mlp_forward(nominal, nominal_obs)
    np.testing.assert_array_equal(obs[:14], nominal_obs)
    np.testing.assert_array_equal(obs[14:16], expected_action)
    cx, cy, d = envs.goal_features(s, s.adversarial_goal, cfg.env)
    np.testing.assert_array_equal(obs[16:], [cx, cy, d])
    assert math.hypot(cx, cy) == pytest.approx(1.0) and d >= 0


def test_zero_perturbation_matches_unattacked_rollout():
    nominal = random_policy(3)
    ctrl = FrozenController(nominal)
    cfg = AttackConfig(env=EnvConfig(max_steps=400))
    wrapper, _ = adv_reset(cfg, 21, nominal)
    plain = NavigationEnv(cfg.env)
    obs = plain.reset(21)
    for _ in range(400):
        _, _, done_a, info_a = adv_step(wrapper, np.zeros(2))
        obs, _, done_b, info_b = plain.step(ctrl(obs))
        assert wrapper.state.snapshot() == plain.state.snapshot()
        assert info_a["nominal_goal"] == info_b["nominal_goal"]
        assert done_a == done_b


def test_applied_action_is_clamped_sum():
    wrapper, _ = adv_reset(AttackConfig(), 0, constant_policy([0.8, 0.0]))
    _, _, _, info = wrapper.step([0.5, 0.0])
    np.testing.assert_allclose(info["applied_action"], [1.0, 0.0])
    _, _, _, info = wrapper.step([-3.0, 7.0])
    # delta clamps to [-1, 1] first: 0.8 - 1 = -0.2, 0 + 1 = 1
    np.testing.assert_allclose(info["applied_action"], [-0.2, 1.0])
    np.testing.assert_allclose(info["delta"], [-1.0, 1.0])


def test_saturated_mean_absorbs_perturbation():
    # the adversary sees the raw mean, and clamping happens only after delta is added
    wrapper, obs = adv_reset(AttackConfig(), 0, constant_policy([2.5, -0.3]))
    np.testing.assert_allclose(obs[:2], [2.5, -0.3])
    _, _, _, info = wrapper.step([-1.0, -1.0])
    np.testing.assert_allclose(info["applied_action"], [1.0, -1.0])
    np.testing.assert_allclose(info["nominal_action"], [2.5, -0.3])


def test_scripted_perturbations_match_resimulation():
    # a high-gain nominal, so raw means regularly leave [-1, 1]
    nominal = nc.init_params([14, 16, 2], np.random.default_rng(4), act_dim=2, output_gain=5.0)
    cfg = AttackConfig(env=EnvConfig(max_steps=300, min_goal_separation=1.0))
    rng = np.random.default_rng(8)
    deltas = rng.uniform(-1.5, 1.5, size=(300, 2))
    wrapper, _ = adv_reset(cfg, 17, nominal)
    got = [adv_step(wrapper, d)[1] for d in deltas]

    # oracle: drive the raw env functions and the reward formula by hand
    state, obs = envs.reset(cfg.env, 17)
    expected = []
    for d in deltas:
        a = nc.mlp_forward(nominal, obs)
        applied = np.clip(a + np.clip(d, -1, 1), -1, 1)
        goal_adv, goal_nom = state.adversarial_goal, state.nominal_goal
        d_prev = math.dist(state.position, goal_adv)
        envs.step(state, applied, cfg.env)
        d_now = math.dist(state.position, goal_adv)
        at_adv = d_now <= cfg.env.goal_radius
        at_nom = math.dist(state.position, goal_nom) <= cfg.env.goal_radius
        if at_adv:
            r = 1.0
        else:
            r = d_prev - d_now - (1.0 if at_nom else 0.0)
        expected.append(r)
        if at_adv or at_nom:
            envs.on_goal_reached(state, cfg.env)
        obs = envs.build_observation(state, cfg.env)
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_adv_reward_branches():
    assert adv_reward(0.5, 0.2, True, False) == 1
    assert adv_reward(0.5, 0.2, True, True) == 1
    assert adv_reward(2.0, 1.5, False, False) == pytest.approx(0.5)
    assert adv_reward(1.0, 1.0, False, True) == -1.0
    assert adv_reward(1.0, 1.2, False, False) == pytest.approx(-0.2)


def test_adversary_sees_no_nominal_parameters():
    nominal = random_policy(5)
    env = AdversarialEnv(AttackConfig(), nominal)
    reachable = list(vars(env).values()) + list(vars(env._env).values())
    assert not any(isinstance(v, nc.ParamSet) for v in reachable)
    assert not hasattr(FrozenController(nominal), "__dict__")
    obs = env.reset(0)
    assert isinstance(obs, np.ndarray) and obs.shape == (5,)


def test_frozen_controller_does_not_track_later_edits():
    nominal = random_policy(6)
    ctrl = FrozenController(nominal)
    x = np.ones(14)
    before = ctrl(x)
    nominal.weights[:] = 0
    np.testing.assert_array_equal(ctrl(x), before)


def test_dimension_mismatch():
    with pytest.raises(CheckpointError):
        AdversarialEnv(AttackConfig(), random_policy(0, obs_dim=9))


def test_train_adversary_leaves_nominal_untouched(tmp_path):
    nominal = random_policy(7)
    path = tmp_path / "nominal.ckpt"
    nc.save_checkpoint(path, nominal)
    raw = path.read_bytes()
    cfg = AttackConfig(env=EnvConfig(max_steps=64), nominal_checkpoint=str(path))
    ppo = PpoConfig(total_steps=256, update_interval=128, batch_size=64, n_envs=2,
                    policy_hidden=(8,), value_hidden=(8,), epochs_per_update=2)
    res = train_adversary(cfg, ppo, seed=0)
    assert path.read_bytes() == raw
    assert res.policy.in_dim == 5
    assert len(res.curve) == 4
    again = train_adversary(cfg, ppo, seed=0)
    assert again.curve == res.curve
