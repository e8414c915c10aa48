"""Episodic proxy MDPs for learning the shared local policy.

One macro step of the game is serialised into a short chain of micro steps
so that a single-action learner can choose the local action of every
sampled agent in turn:

* the k-chained MDP keeps the full tuple of ``k`` replica states and lets
  replica ``j`` act at stage ``j``;
* the mean-field chained MDP keeps a tagged agent plus the histogram of the
  other ``k - 1`` agents, and moves one histogram bin per stage.

In both, the global action and the next global state are drawn at the start
of the chain, before any local state changes, and committed at its end.
Discounting lives in the time-indexed rewards, so the episodic learner
maximises an undiscounted sum.

Dense constructions enumerate the reachable micro states.  For sizes where
that is impossible, :class:`TaggedAgentEnv` simulates the same chain with
the non-tagged agents following a fixed incumbent policy, and exposes only
the tagged agent's ``(s_l, s_g)`` as the learner's state.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .episodic import EpisodicMDP, occupancy
from .model import GlobalPolicy, LocalPolicy, ModelSpec, Parameterization

BOTTOM = -1
#: default cap on the number of reachable micro states of a dense chain
MAX_MICRO_STATES = 20_000


# ---------------------------------------------------------------------------
# Horizon truncation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HorizonSpec:
    gamma: float
    epsilon: float
    r_inf: float

    @property
    def H(self) -> int:
        return effective_horizon(self.gamma, self.epsilon, self.r_inf)


def effective_horizon(gamma: float, epsilon: float, r_inf: float) -> int:
    """Smallest ``H >= 1`` with ``H >= ln(r_inf / (eps (1-gamma))) / (1-gamma)``.

    Truncating a discounted return of per-step rewards in ``[0, r_inf]``
    after step ``H`` loses at most ``epsilon``.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if epsilon <= 0 or r_inf <= 0:
        raise ValueError("epsilon and r_inf must be positive")
    h = math.log(r_inf / (epsilon * (1.0 - gamma))) / (1.0 - gamma)
    return max(1, math.ceil(h - 1e-12))


def truncation_tail(gamma: float, H: int, r_inf: float) -> float:
    """Upper bound ``gamma^(H+1) r_inf / (1 - gamma)`` on the discarded tail."""
    return gamma ** (H + 1) * r_inf / (1.0 - gamma)


# ---------------------------------------------------------------------------
# Dense chains
# ---------------------------------------------------------------------------


@dataclass
class ChainedMDP:
    """A dense chained MDP plus the bookkeeping needed to read it back.

    ``acting[s]`` is ``(s_l, s_g)`` of the agent(s) whose action the learner
    picks in micro state ``s``, or ``None`` when the action has no effect.
    ``chain_length`` is the number of micro steps per macro step.
    """

    mdp: EpisodicMDP
    states: list
    acting: list
    kind: str
    chain_length: int
    k: int
    reward_scale: float
    n_sl: int
    n_sg: int
    index: dict = field(repr=False, default=None)

    @property
    def horizon(self) -> int:
        return self.mdp.horizon

    @property
    def macro_horizon(self) -> int:
        return self.mdp.horizon // self.chain_length

    def local_policy_table(self, pi_l: LocalPolicy) -> np.ndarray:
        """Micro policy ``(S, A)`` that plays ``pi_l`` for whoever is acting."""
        S, A = self.mdp.n_states, self.mdp.n_actions
        out = np.zeros((S, A))
        out[:, 0] = 1.0
        for s, act in enumerate(self.acting):
            if act is not None:
                out[s] = pi_l.dist[act[0], act[1]]
        return out

    def encode(self, state) -> int:
        return self.index[state]


def _bfs(initial: dict, step, n_actions: int, max_states: int):
    """Enumerate states reachable from ``initial`` under any action."""
    seen = {s: None for s in initial}
    queue = deque(initial)
    edges = {}
    while queue:
        s = queue.popleft()
        rows = []
        for a in range(n_actions):
            nxt = step(s, a)
            rows.append(nxt)
            for t in nxt:
                if t not in seen:
                    seen[t] = None
                    if len(seen) > max_states:
                        raise MemoryError(f"chained MDP has more than {max_states} reachable micro states")
                    queue.append(t)
        edges[s] = rows
    states = sorted(seen)
    index = {s: i for i, s in enumerate(states)}
    S = len(states)
    P = np.zeros((S, n_actions, S))
    for s, rows in edges.items():
        i = index[s]
        for a, nxt in enumerate(rows):
            for t, p in nxt.items():
                P[i, a, index[t]] += p
    return states, index, P


def _discounts(gamma: float, H: int, chain: int) -> np.ndarray:
    tau = np.arange(H * chain)
    return gamma ** (tau // chain)


def _add(dist: dict, key, p: float) -> None:
    if p > 0.0:
        dist[key] = dist.get(key, 0.0) + p


def _default_initial_tuples(model: ModelSpec, k: int) -> dict:
    """Uniform over global states and over k-tuples of local states."""
    tuples = list(itertools.product(range(model.n_sl), repeat=k))
    p = 1.0 / (model.n_sg * len(tuples))
    return {(g, t): p for g in range(model.n_sg) for t in tuples}


def build_k_chained(
    model: ModelSpec,
    pi_g: GlobalPolicy,
    k: int,
    H: int,
    *,
    initial: dict | None = None,
    reward_scale: float = 1.0,
    max_states: int = MAX_MICRO_STATES,
) -> ChainedMDP:
    """k-chained MDP for the best response to a tuple-keyed global policy.

    Micro state ``(j, s_g, pending, replicas)`` with ``j`` in ``1..k`` and
    ``pending`` the cached next global state (``-1`` for none).  The reward
    of acting ``a`` at micro step ``tau`` is
    ``1{j=1} gamma^(tau // k) r_l(s_1, s_g, a) * reward_scale / n``.

    Parameters
    ----------
    initial : dict, optional
        ``{(s_g, replicas): prob}``; uniform when omitted.
    """
    if pi_g.parameterization is not Parameterization.STANDARD:
        raise ValueError("the k-chained MDP needs a tuple-keyed (standard) global policy")
    if pi_g.k != k:
        raise ValueError(f"global policy uses k={pi_g.k}, chain built for k={k}")
    if H < 1:
        raise ValueError("H must be >= 1")
    pg, pl = np.asarray(model.pg), np.asarray(model.pl)
    keys = pi_g.keys
    n_sg, n_sl = model.n_sg, model.n_sl

    def step(state, a):
        j, s_g, pend, reps = state
        if pend == BOTTOM:
            probs = pi_g.dist[s_g, keys.key_of(reps)] @ pg[s_g]
            pend_dist = {g: float(probs[g]) for g in range(n_sg) if probs[g] > 0}
        else:
            pend_dist = {pend: 1.0}
        out: dict = {}
        for s_next in range(n_sl):
            p_l = pl[reps[j - 1], s_g, a, s_next]
            if p_l == 0.0:
                continue
            new_reps = reps[: j - 1] + (s_next,) + reps[j:]
            for g_next, p_g in pend_dist.items():
                if j < k:
                    _add(out, (j + 1, s_g, g_next, new_reps), p_l * p_g)
                else:
                    _add(out, (1, g_next, BOTTOM, new_reps), p_l * p_g)
        return out

    init = _default_initial_tuples(model, k) if initial is None else initial
    init_states = {(1, g, BOTTOM, tuple(t)): p for (g, t), p in init.items() if p > 0}
    states, index, P = _bfs(init_states, step, model.n_al, max_states)
    S = len(states)
    base = np.zeros((S, model.n_al))
    acting = []
    for i, (j, s_g, pend, reps) in enumerate(states):
        acting.append((reps[j - 1], s_g))
        if j == 1:
            base[i] = np.asarray(model.rl)[reps[0], s_g] * reward_scale / model.n_agents
    reward = _discounts(model.gamma, H, k)[:, None, None] * base[None]
    p0 = np.zeros(S)
    for st, p in init_states.items():
        p0[index[st]] += p
    mdp = EpisodicMDP(P, reward, p0 / p0.sum(), labels=states)
    return ChainedMDP(mdp, states, acting, "k_chained", k, k, reward_scale, n_sl, n_sg, index)


def _multinomial_outcomes(c: int, probs: np.ndarray) -> list:
    """All ``(counts, prob)`` outcomes of ``Multinomial(c, probs)``."""
    n = len(probs)
    out = []
    for counts in itertools.product(range(c + 1), repeat=n):
        if sum(counts) != c:
            continue
        logp = math.lgamma(c + 1)
        zero = False
        for cnt, p in zip(counts, probs):
            if cnt == 0:
                continue
            if p <= 0.0:
                zero = True
                break
            logp += cnt * math.log(p) - math.lgamma(cnt + 1)
        if not zero:
            out.append((counts, math.exp(logp)))
    return out


def _default_initial_meanfield(model: ModelSpec, k: int) -> dict:
    """Uniform global state; tagged and other agents i.i.d. uniform."""
    out: dict = {}
    unif = np.full(model.n_sl, 1.0 / model.n_sl)
    others = _multinomial_outcomes(k - 1, unif) if k > 1 else [((0,) * model.n_sl, 1.0)]
    for g in range(model.n_sg):
        for s in range(model.n_sl):
            for counts, p in others:
                _add(out, (g, s, tuple(counts)), p / (model.n_sg * model.n_sl))
    return out


def build_meanfield_chained(
    model: ModelSpec,
    pi_g: GlobalPolicy,
    k: int,
    H: int,
    *,
    initial: dict | None = None,
    reward_scale: float = 1.0,
    max_states: int = MAX_MICRO_STATES,
) -> ChainedMDP:
    """Histogram-chained MDP for the best response to a histogram-keyed policy.

    Micro state ``(j, s_g, pending_g, s_tag, pending_tag, F, F_acc)`` with
    ``j`` in ``0..n_sl``, ``F`` the counts of the other ``k - 1`` sampled
    agents and ``F_acc`` the counts already moved in this chain.  Stage 0
    queries the global policy on ``F + e_{s_tag}``, caches both pending
    transitions and pays the only reward; stage ``u`` moves the agents in
    bin ``u - 1`` with the chosen action; the last stage commits.

    Parameters
    ----------
    initial : dict, optional
        ``{(s_g, s_tag, F): prob}``; defaults to a uniform global state and
        i.i.d. uniform local states.
    """
    if pi_g.parameterization is not Parameterization.MEAN_FIELD:
        raise ValueError("the mean-field chained MDP needs a histogram-keyed global policy")
    if pi_g.k != k:
        raise ValueError(f"global policy uses k={pi_g.k}, chain built for k={k}")
    if H < 1:
        raise ValueError("H must be >= 1")
    pg, pl = np.asarray(model.pg), np.asarray(model.pl)
    keys = pi_g.keys
    n_sg, n_sl = model.n_sg, model.n_sl
    zero = (0,) * n_sl
    eye = np.eye(n_sl, dtype=np.int64)
    outcome_cache: dict = {}

    def outcomes(c, u, s_g, a):
        key = (c, u, s_g, a)
        if key not in outcome_cache:
            outcome_cache[key] = _multinomial_outcomes(c, pl[u, s_g, a])
        return outcome_cache[key]

    def step(state, a):
        j, s_g, pg_pend, s_tag, tag_pend, F, acc = state
        out: dict = {}
        if j == 0:
            counts = np.asarray(F) + eye[s_tag]
            probs = pi_g.dist[s_g, keys.index_of_counts(counts[None])[0]] @ pg[s_g]
            for g_next in range(n_sg):
                if probs[g_next] == 0.0:
                    continue
                for s_next in range(n_sl):
                    p = probs[g_next] * pl[s_tag, s_g, a, s_next]
                    _add(out, (1, s_g, g_next, s_tag, s_next, F, acc), p)
            return out
        u = j - 1
        for moved, p in outcomes(F[u], u, s_g, a):
            new_acc = tuple(x + y for x, y in zip(acc, moved))
            if j < n_sl:
                _add(out, (j + 1, s_g, pg_pend, s_tag, tag_pend, F, new_acc), p)
            else:
                _add(out, (0, pg_pend, BOTTOM, tag_pend, BOTTOM, new_acc, zero), p)
        return out

    init = _default_initial_meanfield(model, k) if initial is None else initial
    init_states = {(0, g, BOTTOM, s, BOTTOM, tuple(F), zero): p for (g, s, F), p in init.items() if p > 0}
    states, index, P = _bfs(init_states, step, model.n_al, max_states)
    S = len(states)
    chain = n_sl + 1
    base = np.zeros((S, model.n_al))
    acting = []
    for i, (j, s_g, _, s_tag, _, F, _) in enumerate(states):
        if j == 0:
            acting.append((s_tag, s_g))
            base[i] = np.asarray(model.rl)[s_tag, s_g] * reward_scale / model.n_agents
        elif F[j - 1] > 0:
            acting.append((j - 1, s_g))
        else:
            acting.append(None)
    reward = _discounts(model.gamma, H, chain)[:, None, None] * base[None]
    p0 = np.zeros(S)
    for st, p in init_states.items():
        p0[index[st]] += p
    mdp = EpisodicMDP(P, reward, p0 / p0.sum(), labels=states)
    return ChainedMDP(mdp, states, acting, "mean_field", chain, k, reward_scale, n_sl, n_sg, index)


def build_chained(model: ModelSpec, pi_g: GlobalPolicy, H: int, **kwargs) -> ChainedMDP:
    """Pick the construction that matches the global policy's key space."""
    if pi_g.parameterization is Parameterization.STANDARD:
        return build_k_chained(model, pi_g, pi_g.k, H, **kwargs)
    return build_meanfield_chained(model, pi_g, pi_g.k, H, **kwargs)


# ---------------------------------------------------------------------------
# Reading a shared local policy back out of a micro policy
# ---------------------------------------------------------------------------


@dataclass
class ExtractionReport:
    unvisited: list  # (s_l, s_g) pairs that defaulted to action 0
    conflicts: list  # (s_l, s_g) pairs whose top vote was tied
    disagreement: float  # visitation mass voting against the chosen action


def extract_local_policy(
    micro_policy: np.ndarray,
    chain: ChainedMDP,
    weights: np.ndarray | None = None,
    n_al: int | None = None,
) -> tuple[LocalPolicy, ExtractionReport]:
    """Project a time-indexed micro policy onto a shared local policy.

    Every (micro step, micro state) in which some agent acts votes for the
    action the micro policy takes there, weighted by ``weights[tau, s]``
    (the micro policy's own visitation probabilities when omitted).  Each
    ``(s_l, s_g)`` takes the heaviest action, lowest index on ties.
    """
    micro_policy = np.asarray(micro_policy)
    n_al = chain.mdp.n_actions if n_al is None else n_al
    if weights is None:
        weights = occupancy(chain.mdp, micro_policy)
    votes = np.zeros((chain.n_sl, chain.n_sg, n_al))
    for s, act in enumerate(chain.acting):
        if act is None:
            continue
        np.add.at(votes[act[0], act[1]], micro_policy[:, s], weights[:, s])
    return _votes_to_policy(votes)


def _votes_to_policy(votes: np.ndarray) -> tuple[LocalPolicy, ExtractionReport]:
    n_sl, n_sg, n_al = votes.shape
    actions = votes.argmax(axis=2)
    unvisited, conflicts = [], []
    total = votes.sum()
    against = 0.0
    for s in range(n_sl):
        for g in range(n_sg):
            row = votes[s, g]
            top = row.max()
            if top <= 0.0:
                unvisited.append((s, g))
                continue
            if np.sum(np.isclose(row, top, rtol=1e-12, atol=0.0)) > 1:
                conflicts.append((s, g))
            against += row.sum() - top
    disagreement = float(against / total) if total > 0 else 0.0
    return LocalPolicy.from_actions(actions, n_al), ExtractionReport(unvisited, conflicts, disagreement)


# ---------------------------------------------------------------------------
# Generative chain with a tagged learner and an incumbent population
# ---------------------------------------------------------------------------


def _cdf(probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    return cdf / cdf[..., -1:]


def _pick(cdf_row: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf_row, u, side="right")), len(cdf_row) - 1)


class TaggedAgentEnv:
    """Chained best-response environment seen through the tagged agent.

    One episode step is one full chain (one macro step).  The learner picks
    the tagged agent's action; the other ``k - 1`` sampled agents follow the
    fixed incumbent local policy, and the global agent acts on the key formed
    by the tagged agent together with the others.  The learner's state is
    ``s_l * n_sg + s_g``; the hidden composition of the others is carried
    inside the simulator.

    Rewards are known: ``gamma^t r_l(s_l, s_g, a) * reward_scale / n``.
    """

    def __init__(
        self,
        model: ModelSpec,
        pi_g: GlobalPolicy,
        incumbent: LocalPolicy,
        H: int,
        initial,
        *,
        reward_scale: float = 1.0,
    ):
        self.model = model
        self.pi_g = pi_g
        self.keys = pi_g.keys
        self.k = pi_g.k
        self.initial = initial
        self.n_sl, self.n_sg = model.n_sl, model.n_sg
        self.n_states = self.n_sl * self.n_sg
        self.n_actions = model.n_al
        self.horizon = H
        self.reward_scale = reward_scale
        self._pg = np.asarray(model.pg)
        self._pl = np.asarray(model.pl)
        guided = np.einsum("xga,xgay->xgy", incumbent.dist, self._pl)
        self._pg_cdf = _cdf(self._pg)
        self._pl_cdf = _cdf(self._pl)
        self._pig_cdf = _cdf(pi_g.dist)
        self._guided_cdf = _cdf(guided)
        rl = np.asarray(model.rl) * reward_scale / model.n_agents  # (n_sl, n_sg, n_al)
        disc = model.gamma ** np.arange(H)
        self.reward = disc[:, None, None] * rl.reshape(self.n_states, self.n_actions)[None]
        reach_g = (self._pg > 0).any(axis=1)  # (n_sg, n_sg')
        sup_l = self._pl > 0  # (n_sl, n_sg, n_al, n_sl')
        sup = sup_l[:, :, :, :, None] & reach_g[None, :, None, None, :]
        self.support = sup.reshape(self.n_states, self.n_actions, self.n_states)
        self._others = None
        self._sg = None

    def reset(self, rng: np.random.Generator) -> int:
        s_g, states = self.initial(rng)
        states = np.asarray(states)
        pick = rng.choice(len(states), size=self.k, replace=False)
        sampled = states[np.sort(pick)]
        tag = int(sampled[0])
        self._others = sampled[1:].copy()
        self._sg = int(s_g)
        return tag * self.n_sg + self._sg

    def step(self, s: int, a: int, rng: np.random.Generator) -> int:
        tag, s_g = divmod(int(s), self.n_sg)
        if s_g != self._sg:
            raise RuntimeError("step called with a state that is not the current state")
        key = self.keys.key_of(np.concatenate(([tag], self._others)))
        u = rng.random(3 + len(self._others))
        a_g = _pick(self._pig_cdf[s_g, key], u[0])
        g_next = _pick(self._pg_cdf[s_g, a_g], u[1])
        tag_next = _pick(self._pl_cdf[tag, s_g, a], u[2])
        if len(self._others):
            cdf = self._guided_cdf[self._others, s_g]
            self._others = np.minimum((cdf <= u[3:, None]).sum(axis=1), self.n_sl - 1)
        self._sg = g_next
        return tag_next * self.n_sg + g_next


def extract_from_tagged(policy: np.ndarray, env: TaggedAgentEnv, visits: np.ndarray) -> tuple[LocalPolicy, ExtractionReport]:
    """Visitation-weighted projection of a tagged-agent policy ``(H, S)``.

    ``visits[tau, s]`` are (estimated) visitation weights of the learner's
    states.
    """
    n_sl, n_sg, n_al = env.n_sl, env.n_sg, env.n_actions
    votes = np.zeros((n_sl, n_sg, n_al))
    for s in range(env.n_states):
        np.add.at(votes[s // n_sg, s % n_sg], policy[:, s], visits[:, s])
    return _votes_to_policy(votes)
