import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from artrd.estimators import AdversaryPolicy, DefendedPolicy, NominalPolicy
from artrd.exceptions import ContractViolation

TINY = dict(total_steps=256, n_envs=2, policy_hidden=(8,), value_hidden=(8,))


@pytest.fixture(scope="module")
def nominal():
    return NominalPolicy(seed=1, **TINY).fit()


def test_params_and_clone():
    est = NominalPolicy(env_kind="car", total_steps=10)
    params = est.get_params()
    assert params["env_kind"] == "car" and params["total_steps"] == 10
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(seed=7)
    assert est.seed == 7


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        NominalPolicy().predict(np.zeros((1, 14)))


def test_fit_predict_shapes(nominal):
    rng = np.random.default_rng(0)
    actions = nominal.predict(rng.normal(size=(5, 14)))
    assert actions.shape == (5, 2)
    assert np.all(np.abs(actions) <= 1.0)
    with pytest.raises(ContractViolation):
        nominal.predict(np.zeros((2, 13)))
    with pytest.raises(ValueError):
        nominal.predict(np.full((1, 14), np.nan))
    assert nominal.score(episodes=1) >= 0.0


def test_fit_is_deterministic(nominal):
    again = clone(nominal).fit()
    np.testing.assert_array_equal(again.policy_.weights, nominal.policy_.weights)


def test_adversary_and_defense(nominal):
    adv = AdversaryPolicy(nominal=nominal.policy_, seed=2, **TINY).fit()
    assert adv.predict(np.zeros((3, 5))).shape == (3, 2)
    assert adv.score(episodes=1) >= 0.0
    defended = DefendedPolicy(scheme="transfer", nominal=(nominal.policy_, nominal.value_),
                              adversary=(adv.policy_, adv.value_), seed=3, **TINY).fit()
    assert defended.predict(np.zeros((1, 14))).shape == (1, 2)
    tandem = DefendedPolicy(scheme="tandem", seed=3, **TINY).fit()
    assert tandem.adversary_.in_dim == 5


def test_missing_inputs():
    with pytest.raises(ContractViolation):
        AdversaryPolicy(**TINY).fit()
    with pytest.raises(ContractViolation):
        DefendedPolicy(scheme="fixed", **TINY).fit()
