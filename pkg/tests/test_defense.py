import numpy as np
import pytest

from artrd import numcore as nc
from artrd.attack import AttackConfig
from artrd.defense import (DefenseScheme, FixedAdversaryEnv, normalize_scheme, run_scheme,
                           train_tandem, train_transfer_finetune, train_vs_fixed_adversary)
from artrd.envs import EnvConfig, NavigationEnv
from artrd.exceptions import ConfigurationError, ContractViolation
from artrd.ppo import PpoConfig, train

SMALL_ENV = EnvConfig(max_steps=64)
SMALL_PPO = PpoConfig(total_steps=512, update_interval=128, batch_size=64, n_envs=2,
                      policy_hidden=(8,), value_hidden=(8,), epochs_per_update=2)


def zero_adversary():
    dims = [5, 8, 2]
    return nc.ParamSet(dims, np.zeros(nc.n_weights(dims)), np.zeros(2))


def constant_adversary(delta):
    dims = [5, 2]
    w = np.zeros(nc.n_weights(dims))
    w[-2:] = delta
    return nc.ParamSet(dims, w, np.zeros(2))


def test_scheme_names_and_requirements():
    assert normalize_scheme("TransferFineTune") == "finetune"
    assert normalize_scheme("FixedAdvFromScratch") == "fixed"
    assert normalize_scheme("TandemFromScratch") == "tandem"
    with pytest.raises(ConfigurationError):
        normalize_scheme("curriculum")
    with pytest.raises(ConfigurationError):
        DefenseScheme("finetune", adversary_checkpoint="a.ckpt").validate()
    with pytest.raises(ConfigurationError):
        DefenseScheme("fixed").validate()
    DefenseScheme("tandem").validate()
    with pytest.raises(ConfigurationError):
        DefenseScheme("tandem", cadence=0)


def test_perturbed_env_adds_delta():
    env = FixedAdversaryEnv(AttackConfig(env=SMALL_ENV), constant_adversary([0.5, -0.25]))
    env.reset(0)
    _, _, _, info = env.step([0.8, 2.0])
    np.testing.assert_allclose(info["nominal_action"], [0.8, 2.0])
    # the sum is clamped, so a command far past the bound absorbs the perturbation
    np.testing.assert_allclose(info["applied_action"], [1.0, 1.0])
    _, _, _, info = env.step([0.8, 1.0])
    np.testing.assert_allclose(info["applied_action"], [1.0, 0.75])


def test_perturbed_env_rejects_state_aware_adversary():
    dims = [19, 2]
    with pytest.raises(ContractViolation):
        FixedAdversaryEnv(AttackConfig(), nc.ParamSet(dims, np.zeros(nc.n_weights(dims))))


def test_zero_adversary_reduces_to_plain_training():
    cfg = AttackConfig(env=SMALL_ENV)
    plain = train(lambda i: NavigationEnv(SMALL_ENV), SMALL_PPO, seed=4)
    adv = zero_adversary()
    before = nc.dumps_checkpoint(adv)
    defended = train_vs_fixed_adversary(cfg, SMALL_PPO, 4, adv)
    assert defended.curve == plain.curve
    assert defended.policy == plain.policy and defended.value == plain.value
    assert nc.dumps_checkpoint(adv) == before


def test_finetune_zero_steps_returns_input():
    rng = np.random.default_rng(0)
    pol = nc.init_params([14, 8, 2], rng, act_dim=2, output_gain=1.0)
    val = nc.init_params([14, 8, 1], rng)
    cfg = AttackConfig(env=SMALL_ENV)
    ppo = PpoConfig(total_steps=0, policy_hidden=(8,), value_hidden=(8,))
    res = train_transfer_finetune(cfg, ppo, 0, pol, constant_adversary([0.3, 0.3]),
                                  nominal_value=val, extreme_episodes=0)
    assert nc.dumps_checkpoint(res.policy, res.value) == nc.dumps_checkpoint(pol, val)
    assert res.policy is not pol


def test_finetune_changes_policy_and_reports_extremes():
    rng = np.random.default_rng(1)
    pol = nc.init_params([14, 8, 2], rng, act_dim=2, output_gain=1.0)
    snapshot = pol.copy()
    adv = constant_adversary([0.4, -0.4])
    res = train_transfer_finetune(AttackConfig(env=SMALL_ENV), SMALL_PPO, 2, pol, adv,
                                  extreme_episodes=2)
    assert pol == snapshot
    assert res.policy != pol
    assert len(res.extreme_pre) == 2 and len(res.extreme_post) == 2
    assert all(0 <= c <= 64 for c in res.extreme_pre + res.extreme_post)
    rows = res.extreme_rows(2)
    assert [r["phase"] for r in rows] == ["pre", "post"]


@pytest.mark.parametrize("cadence", [1, 2])
def test_tandem_alternates_updates(cadence):
    ppo = PpoConfig(total_steps=128 * 6, update_interval=128, batch_size=64, n_envs=2,
                    policy_hidden=(8,), value_hidden=(8,), epochs_per_update=1)
    res = train_tandem(AttackConfig(env=SMALL_ENV), ppo, seed=0, cadence=cadence)
    n_nom, n_adv = res.update_counts
    assert n_nom + n_adv == 6
    assert abs(n_nom - n_adv) <= cadence
    nom_steps = [d["step"] for d in res.nominal.diagnostics]
    expected = [128 * (u + 1) for u in range(6) if (u // cadence) % 2 == 0]
    assert nom_steps == expected
    # both curves describe the same shared episodes
    assert [r["step"] for r in res.nominal.curve] == [r["step"] for r in res.adversary.curve]
    assert ([r["goals_nominal"] for r in res.nominal.curve]
            == [r["goals_nominal"] for r in res.adversary.curve])


def test_tandem_deterministic():
    a = train_tandem(AttackConfig(env=SMALL_ENV), SMALL_PPO, seed=3)
    b = train_tandem(AttackConfig(env=SMALL_ENV), SMALL_PPO, seed=3)
    assert a.nominal.curve == b.nominal.curve
    assert a.adversary.curve == b.adversary.curve
    assert a.nominal.policy == b.nominal.policy


def test_run_scheme_from_checkpoints(tmp_path):
    adv_path = tmp_path / "adv.ckpt"
    nc.save_checkpoint(adv_path, zero_adversary())
    scheme = DefenseScheme("fixed", adversary_checkpoint=str(adv_path))
    res = run_scheme(scheme, AttackConfig(env=SMALL_ENV), SMALL_PPO, 4)
    plain = train(lambda i: NavigationEnv(SMALL_ENV), SMALL_PPO, seed=4)
    assert res.curve == plain.curve
