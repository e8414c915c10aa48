"""Executing a joint policy on the full n-agent system.

At every step the global agent observes a fresh uniformly random subset of
``k`` local agents, acts on its key, every local agent acts on its own state
and the global state, and the whole population transitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import GlobalPolicy, LocalPolicy, ModelSpec, Parameterization

#: ``initial(rng) -> (s_g, local_states)``
InitialSampler = Callable[[np.random.Generator], tuple[int, np.ndarray]]


@dataclass(frozen=True)
class PolicyPair:
    pi_g: GlobalPolicy
    pi_l: LocalPolicy


@dataclass
class Trajectory:
    global_states: np.ndarray  # (H,)
    histograms: np.ndarray  # (H, n_sl) counts over all n agents
    subsets: np.ndarray  # (H, k) sampled agent indices, ascending
    global_actions: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)
    discounted_return: float
    gamma: float

    @property
    def modes(self) -> np.ndarray:
        """Most populated zone per step (lowest index on ties)."""
        return self.histograms.argmax(axis=1)

    @property
    def mode_rate(self) -> float:
        return float(np.mean(self.global_actions == self.modes))

    def dump(self) -> str:
        """Delimited text: step, s_g, histogram, a_g, reward."""
        lines = ["step\ts_g\thistogram\ta_g\treward"]
        for t in range(len(self.rewards)):
            hist = ",".join(str(int(c)) for c in self.histograms[t])
            lines.append(f"{t}\t{self.global_states[t]}\t{hist}\t{self.global_actions[t]}\t{self.rewards[t]:.10g}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EvalReport:
    mean_return: float
    stderr: float
    rollouts: int
    horizon: int
    seed: int
    mode_rate: float = float("nan")
    returns: np.ndarray = field(default=None, repr=False, compare=False)


def fixed_initial(s_g: int, local_states) -> InitialSampler:
    local_states = np.asarray(local_states, dtype=np.int64)

    def draw(rng):
        return int(s_g), local_states.copy()

    return draw


def iid_initial(p_sg, p_sl, n_agents: int) -> InitialSampler:
    """Global state from ``p_sg``, every local state i.i.d. from ``p_sl``."""
    p_sg = np.asarray(p_sg, dtype=float)
    p_sl = np.asarray(p_sl, dtype=float)

    def draw(rng):
        return int(rng.choice(len(p_sg), p=p_sg)), rng.choice(len(p_sl), size=n_agents, p=p_sl)

    return draw


def sample_subset(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform k-subset of ``range(n)`` by a partial Fisher-Yates shuffle, sorted."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    perm = np.arange(n)
    picks = rng.integers(np.arange(k), n)  # picks[i] uniform on [i, n)
    for i in range(k):
        j = picks[i]
        perm[i], perm[j] = perm[j], perm[i]
    return np.sort(perm[:k])


def _cdf(probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    return cdf / cdf[..., -1:]


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw, one per row."""
    u = np.asarray(u)
    return np.minimum((cdf_rows <= u[..., None]).sum(axis=-1), cdf_rows.shape[-1] - 1)


class _Executor:
    """Precomputed tables shared by all rollouts of one policy pair."""

    def __init__(self, model: ModelSpec, pair: PolicyPair):
        self.model = model
        self.pi_g = pair.pi_g
        self.keys = pair.pi_g.keys
        if self.keys.n_sl != model.n_sl:
            raise ValueError("global policy key space does not match the model")
        self.k = pair.pi_g.k
        if self.k > model.n_agents:
            raise ValueError(f"k={self.k} exceeds n_agents={model.n_agents}")
        self.pg_cdf = _cdf(np.asarray(model.pg))
        self.pl_cdf = _cdf(np.asarray(model.pl))
        self.pil_cdf = _cdf(pair.pi_l.dist)
        self.pig_cdf = _cdf(pair.pi_g.dist)
        self.rg = np.asarray(model.rg)
        self.rl = np.asarray(model.rl)

    def rollout(self, horizon: int, initial: InitialSampler, rng: np.random.Generator) -> Trajectory:
        model, k = self.model, self.k
        n, n_sl = model.n_agents, model.n_sl
        s_g, states = initial(rng)
        states = np.asarray(states, dtype=np.int64).copy()
        if len(states) != n:
            raise ValueError(f"initial state has {len(states)} agents, model has {n}")
        sg_hist = np.empty(horizon, dtype=np.int64)
        hists = np.empty((horizon, n_sl), dtype=np.int64)
        subsets = np.empty((horizon, k), dtype=np.int64)
        actions = np.empty(horizon, dtype=np.int64)
        rewards = np.empty(horizon)
        ret, disc = 0.0, 1.0
        for t in range(horizon):
            delta = sample_subset(n, k, rng)
            key = self.keys.key_of(states[delta])
            a_g = int(_draw(self.pig_cdf[s_g, key], rng.random()))
            a_l = _draw(self.pil_cdf[states, s_g], rng.random(n))
            r = self.rg[s_g, a_g] + self.rl[states, s_g, a_l].mean()
            sg_hist[t], actions[t], rewards[t] = s_g, a_g, r
            hists[t] = np.bincount(states, minlength=n_sl)
            subsets[t] = delta
            ret += disc * r
            disc *= model.gamma
            next_states = _draw(self.pl_cdf[states, s_g, a_l], rng.random(n))
            s_g = int(_draw(self.pg_cdf[s_g, a_g], rng.random()))
            states = next_states
        return Trajectory(sg_hist, hists, subsets, actions, rewards, ret, model.gamma)


def execute(model: ModelSpec, pair: PolicyPair, horizon: int, initial: InitialSampler, rng: np.random.Generator) -> Trajectory:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return _Executor(model, pair).rollout(horizon, initial, rng)


def rollout_rng(seed: int, r: int) -> np.random.Generator:
    """Independent generator for rollout ``r`` of an evaluation seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(r)]))


def evaluate(
    model: ModelSpec,
    pair: PolicyPair,
    horizon: int,
    rollouts: int,
    initial: InitialSampler,
    seed: int,
) -> EvalReport:
    """Monte-Carlo mean and standard error of the discounted return."""
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    ex = _Executor(model, pair)
    returns = np.empty(rollouts)
    rates = np.empty(rollouts)
    for r in range(rollouts):
        traj = ex.rollout(horizon, initial, rollout_rng(seed, r))
        returns[r] = traj.discounted_return
        rates[r] = traj.mode_rate
    se = float(returns.std(ddof=1) / math.sqrt(rollouts)) if rollouts > 1 else 0.0
    return EvalReport(float(returns.mean()), se, rollouts, horizon, seed, float(rates.mean()), returns)


def unshifted_return(value: float, shift: float, gamma: float, horizon: int) -> float:
    """Undo a constant per-step local reward shift on a discounted return."""
    return value - shift * (1.0 - gamma**horizon) / (1.0 - gamma)
