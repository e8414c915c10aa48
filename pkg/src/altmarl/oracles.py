"""Brute-force reference computations for small instances.

Everything here enumerates states or trajectories explicitly and is meant
for verifying the faster code paths, not for production use.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .execution import PolicyPair
from .model import GlobalPolicy, LocalPolicy, ModelSpec

#: refuse joint state spaces larger than this
MAX_JOINT_STATES = 20_000


def macro_tagged_value(
    model: ModelSpec,
    pi_g: GlobalPolicy,
    pi_l: LocalPolicy,
    H: int,
    initial: dict,
    reward_scale: float = 1.0,
) -> float:
    """Truncated discounted local reward of replica 1 in the k-agent system.

    Enumerates every macro trajectory of ``(s_g, s_1..s_k)`` for ``H`` steps
    (all global actions, global successors, local actions and local
    successors) and sums ``gamma^t r_l(s_1, s_g, a_1) * reward_scale / n``.

    ``initial`` maps ``(s_g, replicas)`` to probabilities.
    """
    pg, pl, rl = np.asarray(model.pg), np.asarray(model.pl), np.asarray(model.rl)
    keys = pi_g.keys
    scale = reward_scale / model.n_agents
    n_al, n_sl = model.n_al, model.n_sl

    def rec(t: int, s_g: int, reps: tuple, prob: float) -> float:
        if t == H:
            return 0.0
        total = 0.0
        # replica 1's stage reward
        for a in range(n_al):
            total += prob * pi_l.dist[reps[0], s_g, a] * model.gamma**t * rl[reps[0], s_g, a] * scale
        if t + 1 == H:
            return total
        a_dist = pi_g.dist[s_g, keys.key_of(reps)]
        per_agent = [
            [(a, s2, pi_l.dist[s, s_g, a] * pl[s, s_g, a, s2]) for a in range(n_al) for s2 in range(n_sl)]
            for s in reps
        ]
        for a_g in range(model.n_ag):
            if a_dist[a_g] == 0.0:
                continue
            for g2 in range(model.n_sg):
                pgg = a_dist[a_g] * pg[s_g, a_g, g2]
                if pgg == 0.0:
                    continue
                for combo in itertools.product(*per_agent):
                    p = pgg
                    for _, _, q in combo:
                        p *= q
                    if p == 0.0:
                        continue
                    total += rec(t + 1, g2, tuple(c[1] for c in combo), prob * p)
        return total

    return sum(rec(0, g, tuple(reps), p) for (g, reps), p in initial.items() if p > 0)


class JointSystem:
    """Exact joint-state Markov chain of the full n-agent game under a policy pair.

    Joint state index: ``s_g * n_sl**n + sum_i s_i * n_sl**(n-1-i)``.
    """

    def __init__(self, model: ModelSpec):
        n, n_sl, n_sg = model.n_agents, model.n_sl, model.n_sg
        size = n_sg * n_sl**n
        if size > MAX_JOINT_STATES:
            raise MemoryError(f"joint state space of size {size} exceeds the guard")
        self.model = model
        self.locals = np.array(list(itertools.product(range(n_sl), repeat=n)), dtype=np.int64)
        self.n_joint = size

    def chain(self, pair: PolicyPair) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(M, r)``: joint transition matrix and expected stage reward."""
        model = self.model
        pg, pl = np.asarray(model.pg), np.asarray(model.pl)
        rg, rl = np.asarray(model.rg), np.asarray(model.rl)
        n, n_sl, n_sg = model.n_agents, model.n_sl, model.n_sg
        k = pair.pi_g.k
        keys = pair.pi_g.keys
        subsets = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64)
        L = len(self.locals)
        guided = np.einsum("xga,xgay->xgy", pair.pi_l.dist, pl)
        local_r = np.einsum("xga,xga->xg", pair.pi_l.dist, rl)
        M = np.zeros((self.n_joint, self.n_joint))
        r = np.zeros(self.n_joint)
        for g in range(n_sg):
            # probability of each global action, averaged over sampled subsets
            key_idx = keys.index_of_tuples(self.locals[:, subsets])  # (L, n_subsets)
            a_prob = pair.pi_g.dist[g, key_idx].mean(axis=1)  # (L, n_ag)
            g_next = a_prob @ pg[g]  # (L, n_sg)
            # product kernel over agents
            local_T = np.ones((L, L))
            for i in range(n):
                local_T *= guided[self.locals[:, i][:, None], g, self.locals[:, i][None, :]]
            rows = slice(g * L, (g + 1) * L)
            for g2 in range(n_sg):
                M[rows, g2 * L : (g2 + 1) * L] = g_next[:, g2][:, None] * local_T
            r[rows] = a_prob @ rg[g] + local_r[self.locals, g].mean(axis=1)
        return M, r

    def value(self, pair: PolicyPair, initial: np.ndarray, horizon: int | None = None) -> float:
        """Discounted value from the joint distribution ``initial``.

        Infinite-horizon when ``horizon`` is ``None``, else the sum of the
        first ``horizon`` discounted stage rewards.
        """
        M, r = self.chain(pair)
        gamma = self.model.gamma
        if horizon is None:
            v = np.linalg.solve(np.eye(self.n_joint) - gamma * M, r)
        else:
            v = np.zeros(self.n_joint)
            for _ in range(horizon):
                v = r + gamma * M @ v
        return float(np.asarray(initial) @ v)

    def initial_from(self, p_sg: np.ndarray, p_sl: np.ndarray) -> np.ndarray:
        """Product initial distribution: ``s_g ~ p_sg``, each ``s_i ~ p_sl``."""
        local = np.prod(np.asarray(p_sl)[self.locals], axis=1)
        return np.kron(np.asarray(p_sg), local)


def deterministic_global_policies(template: GlobalPolicy, n_ag: int):
    """Every deterministic policy on the template's key space."""
    n_sg, n_keys, _ = template.dist.shape
    for acts in itertools.product(range(n_ag), repeat=n_sg * n_keys):
        yield GlobalPolicy.from_actions(template.parameterization, template.k, np.reshape(acts, (n_sg, n_keys)), n_ag)


def deterministic_local_policies(n_sl: int, n_sg: int, n_al: int):
    for acts in itertools.product(range(n_al), repeat=n_sl * n_sg):
        yield LocalPolicy.from_actions(np.reshape(acts, (n_sl, n_sg)), n_al)


def best_deviations(system: JointSystem, pair: PolicyPair, initial: np.ndarray) -> dict:
    """Largest unilateral gains over all deterministic deviations of each player."""
    model = system.model
    base = system.value(pair, initial)
    best_g = max(system.value(PolicyPair(g, pair.pi_l), initial) for g in deterministic_global_policies(pair.pi_g, model.n_ag))
    best_l = max(
        system.value(PolicyPair(pair.pi_g, l), initial)
        for l in deterministic_local_policies(model.n_sl, model.n_sg, model.n_al)
    )
    return {"value": base, "global_gain": best_g - base, "local_gain": best_l - base}


def n_joint_states(model: ModelSpec) -> int:
    return model.n_sg * model.n_sl**model.n_agents


def subset_count(n: int, k: int) -> int:
    return math.comb(n, k)
