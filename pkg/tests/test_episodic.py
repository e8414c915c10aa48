import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from altmarl.episodic import (
    EpisodicMDP,
    exact_finite_horizon_dp,
    occupancy,
    policy_value,
    state_action_to_state_reward,
    stochastic_policy_value,
)


def random_mdp(rng, S=3, A=2, H=3):
    return EpisodicMDP(rng.dirichlet(np.ones(S), size=(S, A)), rng.random((H, S, A)), rng.dirichlet(np.ones(S)))


def test_dp_matches_exhaustive_policy_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(5):
        mdp = random_mdp(rng, S=3, A=2, H=2)
        best = max(
            policy_value(mdp, np.reshape(p, (2, 3)))
            for p in itertools.product(range(2), repeat=6)
        )
        value, policy, _ = exact_finite_horizon_dp(mdp)
        assert value == pytest.approx(best, abs=1e-12)
        assert policy_value(mdp, policy) == pytest.approx(value, abs=1e-12)


def test_one_step_and_deterministic_chain():
    mdp = EpisodicMDP(np.ones((1, 3, 1)), np.array([[[0.2, 0.9, 0.4]]]), [1.0])
    assert exact_finite_horizon_dp(mdp)[0] == pytest.approx(0.9)
    rewards = np.array([1.0, 2.5, 0.5, 4.0])
    chain = EpisodicMDP(np.ones((1, 1, 1)), rewards[:, None, None], [1.0])
    assert exact_finite_horizon_dp(chain)[0] == pytest.approx(rewards.sum())


def test_stochastic_value_and_occupancy(rng):
    mdp = random_mdp(rng, S=4, A=3, H=5)
    policy = rng.integers(3, size=(5, 4))
    one_hot = np.eye(3)[policy]
    assert stochastic_policy_value(mdp, one_hot) == pytest.approx(policy_value(mdp, policy))
    d = occupancy(mdp, policy)
    assert_allclose(d.sum(axis=1), 1.0)
    value = sum(d[t] @ mdp.reward[t, np.arange(4), policy[t]] for t in range(5))
    assert value == pytest.approx(policy_value(mdp, policy))


def test_validation():
    with pytest.raises(ValueError):
        EpisodicMDP(np.full((2, 1, 2), 0.4), np.zeros((1, 2, 1)), [1, 0])
    with pytest.raises(ValueError):
        EpisodicMDP(np.full((2, 1, 2), 0.5), np.zeros((1, 2, 1)), [1, 0], support=np.zeros((2, 1, 2), bool))


def test_reduction_of_trivial_mdp():
    mdp = EpisodicMDP(np.ones((1, 1, 1)), np.full((2, 1, 1), 3.0), [1.0])
    red = state_action_to_state_reward(mdp)
    assert red.n_states == 2 and red.n_actions == 2 and red.horizon == 4
    assert exact_finite_horizon_dp(red)[0] == pytest.approx(6.0)


def test_reduction_preserves_optimal_value_and_zero_deciding_reward(rng):
    for _ in range(5):
        mdp = random_mdp(rng, S=3, A=2, H=4)
        red = state_action_to_state_reward(mdp)
        deciding = np.arange(3) * 3 + 2
        assert np.all(red.reward[:, deciding, :] == 0)
        # committed states pay the same whatever the action
        assert np.all(red.reward[:, :, :1] == red.reward)
        assert exact_finite_horizon_dp(red)[0] == pytest.approx(exact_finite_horizon_dp(mdp)[0], abs=1e-12)


def test_reduction_preserves_policy_values(rng):
    mdp = random_mdp(rng, S=2, A=2, H=3)
    red = state_action_to_state_reward(mdp)
    for p in itertools.product(range(2), repeat=6):
        pol = np.reshape(p, (3, 2))
        embedded = np.zeros((6, red.n_states), dtype=int)
        for t in range(3):
            for s in range(2):
                embedded[2 * t, s * 3 + 2] = pol[t, s]
        assert policy_value(red, embedded) == pytest.approx(policy_value(mdp, pol), abs=1e-12)
