import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from altmarl.alternating import (
    TRACE_COLUMNS,
    AlternatingConfig,
    Decision,
    LLearnConfig,
    alternating_marl,
    l_learn,
    local_epsilon,
    nsteps_potential,
    nsteps_theorem,
    tolerance_eta,
    update_rule,
)
from altmarl.chained import build_chained
from altmarl.episodic import stochastic_policy_value
from altmarl.execution import iid_initial
from altmarl.model import GlobalPolicy, LocalPolicy, ModelSpec, Parameterization, validate_model
from altmarl.oracles import deterministic_local_policies
from altmarl.warehouse import WarehouseParams, build_warehouse

from conftest import random_model


def test_eta_example():
    eta = tolerance_eta(25, 0.95, 14.5, 5, 5)
    expected = 29 / 0.0025 * (math.sqrt(math.log(250) / 50) + 1)
    assert eta == pytest.approx(expected, rel=1e-12)
    assert eta == pytest.approx(15455, abs=1)


def test_eta_is_monotone_in_k_and_linear_in_reward():
    ks = np.unique(np.geomspace(1, 1e6, 400).astype(int))
    etas = np.array([tolerance_eta(int(k), 0.9, 1.0, 3, 2) for k in ks])
    assert np.all(np.diff(etas) < 0)
    assert etas[-1] < 0.2 * etas[0]
    assert tolerance_eta(7, 0.9, 2.0, 3, 2) == pytest.approx(2 * tolerance_eta(7, 0.9, 1.0, 3, 2))
    with pytest.raises(ValueError):
        tolerance_eta(0, 0.9, 1.0, 3, 2)


def test_update_rule_branches():
    eta = 0.5
    old = np.array([1.0, 2.0, 3.0])
    assert update_rule(old + 3 * eta, old, eta) is Decision.ACCEPT
    assert update_rule(old - np.array([0, 3 * eta, 0]), old, eta) is Decision.REJECT
    assert update_rule(old + np.array([eta, -eta, 1.9 * eta]), old, eta) is Decision.TERMINATE
    # accept needs every coordinate; a mixed vector with no big drop terminates
    assert update_rule(old + np.array([3 * eta, 0.0, 3 * eta]), old, eta) is Decision.TERMINATE
    assert update_rule(5.0, 0.0, 1.0) is Decision.ACCEPT
    with pytest.raises(ValueError):
        update_rule(np.zeros(2), np.zeros(3), eta)
    with pytest.raises(ValueError):
        update_rule(1.0, 0.0, 0.0)


def test_iteration_budgets():
    assert nsteps_theorem(2, 2, 2, 2, 1) == 2 * 4 * 2 * 2 * min(4, 4)
    assert nsteps_theorem(5, 5, 5, 5, 50) == 2 * 25 * 25 * 25 * 50**5
    assert nsteps_potential(2, 2, 2, 2, 3, 0.1, 1.0, 0.9) == pytest.approx(100.0)
    assert nsteps_potential(2, 2, 2, 2, 1, 1e-9, 1.0, 0.9) == 4 * 4 * 2 * 2


def test_config_validation():
    with pytest.raises(ValueError):
        AlternatingConfig(k=2, m=3, n_steps=0)
    with pytest.raises(ValueError):
        AlternatingConfig(k=2, m=3, eta=0.0)
    with pytest.raises(ValueError):
        AlternatingConfig(k=2, m=3, delta=1.0)
    cfg = AlternatingConfig(k=2, m=3, n_steps=5, delta=0.2)
    assert cfg.delta_learn == pytest.approx(0.01)


def test_local_epsilon():
    assert local_epsilon(25) == pytest.approx(0.2)


def single_action_game():
    rng = np.random.default_rng(0)
    return validate_model(
        ModelSpec(3, 2, 2, 1, 1, 0.9, rng.dirichlet(np.ones(2), size=(2, 1)), rng.dirichlet(np.ones(2), size=(2, 2, 1)), rng.random((2, 1)), rng.random((2, 2, 1)))
    )


def test_single_local_action_returns_the_unique_policy():
    model = single_action_game()
    pi_g = GlobalPolicy.uniform(Parameterization.STANDARD, 1, 2, 2, 1)
    pi_l, report = l_learn(model, pi_g, 1, 0.1, np.random.default_rng(0))
    assert np.all(pi_l.dist == 1.0) and report.path == "trivial"


def test_degenerate_game_terminates_at_first_iteration():
    model = single_action_game()
    pair, trace = alternating_marl(model, AlternatingConfig(k=2, m=5, n_steps=4, eval_horizon=10, eval_rollouts=5))
    assert trace.termination == "nash" and trace.iterations == 1
    assert trace.records[0].decision is Decision.TERMINATE
    assert np.all(pair.pi_g.dist == 1.0) and np.all(pair.pi_l.dist == 1.0)
    assert trace.eta == trace.eta_formula


def test_l_learn_close_to_exhaustive_best_response(small_model):
    """Dense path: projected policy vs the best of all deterministic local policies."""
    rng = np.random.default_rng(4)
    pi_g = GlobalPolicy(Parameterization.STANDARD, 1, rng.dirichlet(np.ones(2), size=(2, 2)))
    cfg = LLearnConfig(ucfh_m=10, max_episodes=3000)
    pi_l, report = l_learn(small_model, pi_g, 1, 0.1, np.random.default_rng(0), cfg=cfg)
    assert report.path == "dense"
    chain = build_chained(small_model, pi_g, report.horizon, reward_scale=small_model.n_agents)
    best = max(stochastic_policy_value(chain.mdp, chain.local_policy_table(p)) for p in deterministic_local_policies(2, 2, 2))
    assert report.value == pytest.approx(stochastic_policy_value(chain.mdp, chain.local_policy_table(pi_l)))
    assert report.value >= best - report.epsilon


def test_l_learn_tagged_fallback():
    model = random_model(np.random.default_rng(1), n_agents=8)
    pi_g = GlobalPolicy.uniform(Parameterization.MEAN_FIELD, 7, 2, 2, 2)
    cfg = LLearnConfig(ucfh_m=4, max_episodes=40, dense_max_states=10, extract_episodes=10)
    pi_l, report = l_learn(model, pi_g, 7, 0.1, np.random.default_rng(0), cfg=cfg)
    assert report.path == "tagged" and pi_l.deterministic
    assert report.episodes <= 40
    with pytest.raises(ValueError):
        l_learn(model, GlobalPolicy.uniform(Parameterization.STANDARD, 7, 2, 2, 2), 7, 0.1, np.random.default_rng(0))


@pytest.fixture(scope="module")
def desk_run():
    model = build_warehouse(WarehouseParams(n_zones=3, n_agents=100))
    init = iid_initial(np.full(3, 1 / 3), np.full(3, 1 / 3), 100)
    cfg = AlternatingConfig(
        k=8, m=30, n_steps=3, eta=0.05, seed=0, eval_horizon=30, eval_rollouts=20,
        local=LLearnConfig(ucfh_m=8, max_episodes=200, extract_episodes=20),
    )
    pair, trace = alternating_marl(model, cfg, initial=init)
    return model, cfg, pair, trace


def test_trace_is_consistent_with_the_update_rule(desk_run):
    _, cfg, _, trace = desk_run
    assert trace.eta == 0.05 and trace.eta_formula > 1000
    assert 1 <= trace.iterations <= cfg.n_steps
    v_old = 0.0
    for rec in trace.records:
        assert rec.v_old == v_old
        assert update_rule(rec.v_new, rec.v_old, rec.eta) is rec.decision
        if rec.decision is Decision.ACCEPT:
            v_old = rec.v_new
    if trace.termination == "nash":
        assert trace.records[-1].decision is Decision.TERMINATE
    else:
        assert all(r.decision is not Decision.TERMINATE for r in trace.records)


def test_accepted_values_increase(desk_run):
    _, _, _, trace = desk_run
    vals = trace.accepted_values()
    assert len(vals) >= 1
    assert all(b > a + 2 * trace.eta for a, b in zip(vals, vals[1:]))


def test_final_pair_not_worse_than_start(desk_run):
    _, _, _, trace = desk_run
    assert trace.final_value >= trace.initial_value - 2 * trace.eta


def test_trace_text_export(desk_run):
    _, _, _, trace = desk_run
    lines = trace.to_text().splitlines()
    assert lines[0].split("\t") == list(TRACE_COLUMNS)
    assert len(lines) == len(trace.records) + 1
    assert lines[1].split("\t")[2] in {"accept", "reject", "terminate"}


def test_runs_are_reproducible():
    model = random_model(np.random.default_rng(2), n_agents=4)
    cfg = AlternatingConfig(k=2, m=5, n_steps=2, eta=0.01, eval_horizon=10, eval_rollouts=5, local=LLearnConfig(max_episodes=50))
    a, ta = alternating_marl(model, cfg)
    b, tb = alternating_marl(model, cfg)
    assert_allclose(a.pi_g.dist, b.pi_g.dist)
    assert_allclose(a.pi_l.dist, b.pi_l.dist)
    assert [r.v_new for r in ta.records] == [r.v_new for r in tb.records]
