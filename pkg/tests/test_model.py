import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from altmarl.model import (
    GlobalPolicy,
    LocalPolicy,
    ModelSpec,
    ModelValidationError,
    Parameterization,
    choose_parameterization,
    enumerate_histograms,
    histogram_of,
    key_space,
    load_model,
    n_histograms,
    policy_guided_kernel,
    save_model,
    surrogate_local_reward,
    tv_distance,
    validate_model,
)
from altmarl.warehouse import WarehouseParams, build_warehouse
from conftest import random_model


def _replace(model, **kw):
    d = {f: getattr(model, f) for f in ModelSpec.__dataclass_fields__}
    d.update(kw)
    return ModelSpec(**d)


def test_warehouse_model_is_valid():
    validate_model(build_warehouse(WarehouseParams()))


def test_non_stochastic_row_reported(small_model):
    pg = np.array(small_model.pg, copy=True)
    pg[1, 0] *= 0.9
    with pytest.raises(ModelValidationError, match=r"non-stochastic row: pg\[1, 0\]"):
        validate_model(_replace(small_model, pg=pg))


def test_negative_reward_reported(small_model):
    rl = np.array(small_model.rl, copy=True)
    rl[0, 1, 1] = -0.3
    with pytest.raises(ModelValidationError, match=r"negative reward: rl\[0, 1, 1\] = -0.3"):
        validate_model(_replace(small_model, rl=rl))


def test_zero_cardinality_and_dimension_mismatch(small_model):
    with pytest.raises(ModelValidationError, match="zero cardinality"):
        validate_model(_replace(small_model, n_agents=0))
    with pytest.raises(ModelValidationError, match="dimension mismatch"):
        validate_model(_replace(small_model, rg=np.ones((3, 2))))


def test_model_json_round_trip(tmp_path, small_model):
    path = tmp_path / "model.json"
    save_model(small_model, path)
    loaded = load_model(path)
    for name in ("pg", "pl", "rg", "rl"):
        assert_array_equal(getattr(loaded, name), getattr(small_model, name))
    assert loaded.gamma == small_model.gamma and loaded.n_agents == small_model.n_agents


def test_r_max():
    m = build_warehouse(WarehouseParams())
    assert m.r_max == pytest.approx(4.0 + 10.0 + 0.5 + 0.3)


# -- policy-guided kernel and surrogate reward ------------------------------


def test_guided_kernel_one_hot_reproduces_rows(small_model):
    acts = np.array([[1, 0], [0, 1]])
    pi = LocalPolicy.from_actions(acts, 2)
    kern = policy_guided_kernel(small_model.pl, pi)
    for s, g in itertools.product(range(2), range(2)):
        assert_array_equal(kern[s, g], small_model.pl[s, g, acts[s, g]])


def test_guided_kernel_uniform_is_mean(small_model):
    kern = policy_guided_kernel(small_model.pl, LocalPolicy.uniform(2, 2, 2))
    assert_allclose(kern, small_model.pl.mean(axis=2), atol=1e-15)


def test_warehouse_guided_row_and_surrogate_reward():
    p = WarehouseParams()
    m = build_warehouse(p)
    pi = LocalPolicy.uniform(5, 5, 3)
    assert_allclose(policy_guided_kernel(m.pl, pi)[0, 0], m.pl[0, 0].mean(axis=0), atol=1e-15)
    rbar = surrogate_local_reward(m.rl, pi) - p.reward_shift
    assert rbar[3, 3] == pytest.approx(10.0 + 0.2 / 3)


def test_surrogate_reward_action_independent(small_model):
    rl = np.repeat(small_model.rl[:, :, :1], 2, axis=2)
    pi = LocalPolicy(np.random.default_rng(0).dirichlet([1, 1], size=(2, 2)))
    assert_allclose(surrogate_local_reward(rl, pi), rl[:, :, 0])


def test_guided_kernel_dimension_mismatch(small_model):
    with pytest.raises(ValueError):
        policy_guided_kernel(small_model.pl, LocalPolicy.uniform(3, 2, 2))


# -- histograms and keys ----------------------------------------------------


def test_histogram_examples():
    h = histogram_of((0, 0, 1, 2), 3)
    assert_array_equal(h.counts, [2, 1, 1])
    assert_allclose(h.frequencies, [0.5, 0.25, 0.25])
    assert_array_equal(histogram_of((0, 0), 2).counts, [2, 0])
    with pytest.raises(ValueError):
        histogram_of((), 2)
    with pytest.raises(ValueError):
        histogram_of((0, 3), 3)


def test_enumerate_histograms_examples():
    assert [tuple(h.counts) for h in enumerate_histograms(2, 2)] == [(2, 0), (1, 1), (0, 2)]
    assert len(enumerate_histograms(2, 3)) == 6
    ones = [tuple(h.counts) for h in enumerate_histograms(1, 5)]
    assert sorted(ones) == sorted(tuple(r) for r in np.eye(5, dtype=int))


@pytest.mark.parametrize("k", range(1, 11))
@pytest.mark.parametrize("n_sl", range(1, 6))
def test_histogram_count_formula(k, n_sl):
    hs = enumerate_histograms(k, n_sl)
    assert len(hs) == math.comb(k + n_sl - 1, n_sl - 1) == n_histograms(k, n_sl)
    assert len({tuple(h.counts) for h in hs}) == len(hs)
    assert all(sum(h.counts) == k for h in hs)


def test_tv_examples():
    assert tv_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert tv_distance([1, 0], [0, 1]) == 1.0
    assert tv_distance([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        tv_distance([1, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        tv_distance([0.5, 0.6], [1, 0])


@pytest.mark.parametrize("k,n_sl", [(k, n) for k in range(1, 5) for n in range(1, 4)])
def test_tv_is_metric_on_simplex_grid(k, n_sl):
    fs = [h.frequencies for h in enumerate_histograms(k, n_sl)]
    for a, b in itertools.product(fs, fs):
        d = tv_distance(a, b)
        assert d == tv_distance(b, a)
        assert (d == 0) == bool(np.array_equal(a, b))
        assert 0 <= d <= 1
        for c in fs:
            assert d <= tv_distance(a, c) + tv_distance(c, b) + 1e-15


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_histogram_and_key_are_permutation_invariant(states, rnd):
    perm = list(states)
    rnd.shuffle(perm)
    assert_array_equal(histogram_of(states, 4).counts, histogram_of(perm, 4).counts)
    keys = key_space(Parameterization.MEAN_FIELD, len(states), 4)
    assert keys.key_of(states) == keys.key_of(perm)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.data())
def test_key_of_matches_vectorised_index(k, n_sl, data):
    states = data.draw(st.lists(st.integers(0, n_sl - 1), min_size=k, max_size=k))
    for par in Parameterization:
        keys = key_space(par, k, n_sl)
        assert keys.key_of(states) == int(keys.index_of_tuples(np.array([states]))[0])
        # the canonical tuple of a key maps back to the same key
        idx = keys.key_of(states)
        assert keys.key_of(keys.tuples[idx]) == idx


def test_standard_keys_row_major():
    keys = key_space(Parameterization.STANDARD, 3, 2)
    assert keys.key_of((1, 0, 0)) == 4
    assert keys.key_of((0, 0, 1)) == 1


def test_parameterization_rule():
    # |S_l|^k <= |S_l| k^|S_l| selects the tuple table
    assert choose_parameterization(2, 2) is Parameterization.STANDARD
    assert choose_parameterization(3, 8) is Parameterization.MEAN_FIELD
    assert choose_parameterization(5, 1) is Parameterization.STANDARD
    assert choose_parameterization(2, 30) is Parameterization.MEAN_FIELD


# -- policies ---------------------------------------------------------------


def test_local_policy_validation():
    with pytest.raises(ValueError):
        LocalPolicy(np.full((2, 2, 2), 0.6))
    pi = LocalPolicy.from_actions(np.array([[0, 1], [1, 0]]), 2)
    assert pi.deterministic
    assert not LocalPolicy.uniform(2, 2, 2).deterministic
    assert_array_equal(pi.actions(), [[0, 1], [1, 0]])


def test_global_policy_probs_uses_key():
    pi = GlobalPolicy.from_actions(Parameterization.MEAN_FIELD, 2, np.array([[0, 1, 0], [1, 1, 1]]), 2)
    assert_array_equal(pi.probs(0, (1, 0)), [0, 1])
    assert_array_equal(pi.probs(0, (0, 0)), [1, 0])
