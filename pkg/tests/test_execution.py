import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from altmarl.execution import (
    PolicyPair,
    evaluate,
    execute,
    fixed_initial,
    iid_initial,
    sample_subset,
    unshifted_return,
)
from altmarl.model import GlobalPolicy, LocalPolicy, ModelSpec, Parameterization, validate_model
from altmarl.oracles import JointSystem

from conftest import random_model

STD = Parameterization.STANDARD


def uniform_pair(model, k, param=STD):
    return PolicyPair(
        GlobalPolicy.uniform(param, k, model.n_sg, model.n_sl, model.n_ag),
        LocalPolicy.uniform(model.n_sl, model.n_sg, model.n_al),
    )


def test_subset_sampling_is_uniform():
    rng = np.random.default_rng(0)
    n, k, draws = 10, 3, 100_000
    subsets = list(itertools.combinations(range(n), k))
    index = {s: i for i, s in enumerate(subsets)}
    counts = np.zeros(len(subsets))
    for _ in range(draws):
        s = sample_subset(n, k, rng)
        assert len(set(s.tolist())) == k and np.all(np.diff(s) > 0)
        counts[index[tuple(s.tolist())]] += 1
    p = 1 / len(subsets)
    sd = math.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) <= 5 * sd)


def test_subset_sampling_validates():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_subset(3, 4, rng)
    with pytest.raises(ValueError):
        sample_subset(3, 0, rng)
    assert_array_equal(sample_subset(4, 4, rng), np.arange(4))


def test_gamma_zero_return_is_first_reward(small_model):
    # gamma = 0 sits outside the validated range; the executor still handles it
    d = small_model.to_dict()
    d["gamma"] = 0.0
    model = ModelSpec.from_dict(d)
    traj = execute(model, uniform_pair(model, 2), 5, fixed_initial(0, [0, 1, 1]), np.random.default_rng(1))
    assert traj.discounted_return == pytest.approx(traj.rewards[0])


def test_constant_reward_gives_geometric_sum():
    n_sg, n_sl, n_ag, n_al = 2, 2, 2, 2
    rng = np.random.default_rng(0)
    model = validate_model(
        ModelSpec(4, n_sg, n_sl, n_ag, n_al, 0.9, rng.dirichlet(np.ones(2), size=(2, 2)), rng.dirichlet(np.ones(2), size=(2, 2, 2)), np.full((2, 2), 0.5), np.full((2, 2, 2), 0.25))
    )
    report = evaluate(model, uniform_pair(model, 2), 20, 5, iid_initial([0.5, 0.5], [0.5, 0.5], 4), seed=3)
    assert report.mean_return == pytest.approx(0.75 * (1 - 0.9**20) / 0.1)
    assert report.stderr == pytest.approx(0.0, abs=1e-12)


def test_returns_are_bounded_and_deterministic(small_model):
    pair = uniform_pair(small_model, 2)
    init = iid_initial([0.5, 0.5], [0.5, 0.5], small_model.n_agents)
    a = execute(small_model, pair, 30, init, np.random.default_rng(5))
    b = execute(small_model, pair, 30, init, np.random.default_rng(5))
    assert_array_equal(a.histograms, b.histograms)
    assert a.discounted_return == b.discounted_return
    assert 0 <= a.discounted_return <= small_model.r_max / (1 - small_model.gamma)
    assert np.all(a.histograms.sum(axis=1) == small_model.n_agents)
    r1 = evaluate(small_model, pair, 10, 7, init, seed=9)
    r2 = evaluate(small_model, pair, 10, 7, init, seed=9)
    assert r1.mean_return == r2.mean_return and r1.stderr == r2.stderr


def test_single_rollout_has_zero_stderr(small_model):
    init = iid_initial([0.5, 0.5], [0.5, 0.5], small_model.n_agents)
    assert evaluate(small_model, uniform_pair(small_model, 1), 5, 1, init, seed=0).stderr == 0.0


def test_agent_relabelling_does_not_change_the_law(small_model):
    """Exchangeability: permuting agents leaves the mean return unchanged within noise."""
    pair = uniform_pair(small_model, 2)
    a = evaluate(small_model, pair, 10, 3000, fixed_initial(0, [0, 0, 1]), seed=1)
    b = evaluate(small_model, pair, 10, 3000, fixed_initial(0, [1, 0, 0]), seed=2)
    assert abs(a.mean_return - b.mean_return) <= 4 * math.hypot(a.stderr, b.stderr)


def test_monte_carlo_matches_exact_joint_value(small_model):
    rng = np.random.default_rng(2)
    pi_g = GlobalPolicy(STD, 2, rng.dirichlet(np.ones(2), size=(2, 4)))
    pi_l = LocalPolicy(rng.dirichlet(np.ones(2), size=(2, 2)))
    pair = PolicyPair(pi_g, pi_l)
    system = JointSystem(small_model)
    exact = system.value(pair, system.initial_from([1.0, 0.0], [0.5, 0.5]), horizon=3)
    report = evaluate(small_model, pair, 3, 20_000, iid_initial([1.0, 0.0], [0.5, 0.5], 3), seed=4)
    assert abs(report.mean_return - exact) <= 3 * report.stderr


def test_execution_validates_inputs(small_model):
    pair = uniform_pair(small_model, 2)
    with pytest.raises(ValueError):
        execute(small_model, pair, 0, fixed_initial(0, [0, 0, 1]), np.random.default_rng(0))
    with pytest.raises(ValueError):
        execute(small_model, pair, 3, fixed_initial(0, [0, 0]), np.random.default_rng(0))
    with pytest.raises(ValueError):
        evaluate(small_model, uniform_pair(small_model, 4), 3, 2, fixed_initial(0, [0, 0, 1]), 0)


def test_trajectory_dump_and_unshift(small_model):
    traj = execute(small_model, uniform_pair(small_model, 1), 4, fixed_initial(1, [0, 1, 1]), np.random.default_rng(0))
    lines = traj.dump().splitlines()
    assert len(lines) == 5 and lines[1].startswith("0\t1\t1,2\t")
    assert unshifted_return(10.0, 1.0, 0.5, 2) == pytest.approx(8.5)
