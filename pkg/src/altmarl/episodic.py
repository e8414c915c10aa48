"""Finite-horizon MDPs with time-indexed state-action rewards.

Steps are indexed ``tau = 0..H-1``; the reward of taking ``a`` in ``s`` at
step ``tau`` is ``reward[tau, s, a]``.  Transitions are stationary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: refuse to build dense backward-induction tables beyond this many entries
MAX_DENSE_ENTRIES = 50_000_000


@dataclass
class EpisodicMDP:
    """Dense episodic MDP.

    Attributes
    ----------
    transition : ndarray, shape (S, A, S)
    reward : ndarray, shape (H, S, A)
    initial_dist : ndarray, shape (S,)
    support : ndarray of bool, shape (S, A, S)
        Successors the learner is told are possible.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    support: np.ndarray = None
    labels: list = field(default=None, repr=False)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        self.initial_dist = np.asarray(self.initial_dist, dtype=float)
        S, A, S2 = self.transition.shape
        if S != S2:
            raise ValueError("transition must have shape (S, A, S)")
        if self.reward.ndim != 3 or self.reward.shape[1:] != (S, A):
            raise ValueError(f"reward shape {self.reward.shape} does not match (H, {S}, {A})")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(-1) - 1) > 1e-9):
            raise ValueError("transition rows must be probability vectors")
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("rewards must be finite")
        if self.initial_dist.shape != (S,) or abs(self.initial_dist.sum() - 1) > 1e-9:
            raise ValueError("initial_dist must be a probability vector over states")
        if self.support is None:
            self.support = self.transition > 0
        self.support = np.asarray(self.support, dtype=bool)
        if np.any(self.transition[~self.support] > 0):
            raise ValueError("support misses successors with positive probability")
        self._cdf = None

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def horizon(self) -> int:
        return self.reward.shape[0]

    def reset(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self.initial_dist))

    def step(self, s: int, a: int, rng: np.random.Generator) -> int:
        if self._cdf is None:
            cdf = np.cumsum(self.transition, axis=-1)
            self._cdf = cdf / cdf[..., -1:]
        row = self._cdf[s, a]
        return int(min(np.searchsorted(row, rng.random(), side="right"), self.n_states - 1))

    def to_dict(self) -> dict:
        S, A, H = self.n_states, self.n_actions, self.horizon
        return {
            "n_states": S,
            "n_actions": A,
            "horizon": H,
            "transition": self.transition.ravel().tolist(),
            "reward": self.reward.ravel().tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }


def _guard(mdp) -> None:
    S, A = mdp.n_states, mdp.n_actions
    if S * A * S > MAX_DENSE_ENTRIES:
        raise MemoryError(f"dense backward induction over {S} states exceeds the size guard")


def exact_finite_horizon_dp(mdp: EpisodicMDP):
    """Optimal value and time-indexed policy by backward induction.

    Returns
    -------
    value : float
        Optimal expected return from the initial distribution.
    policy : ndarray, shape (H, S)
        Greedy actions, lowest index on ties.
    v : ndarray, shape (H + 1, S)
        Optimal values-to-go.
    """
    _guard(mdp)
    H, S = mdp.horizon, mdp.n_states
    v = np.zeros((H + 1, S))
    policy = np.zeros((H, S), dtype=np.int64)
    for tau in range(H - 1, -1, -1):
        q = mdp.reward[tau] + mdp.transition @ v[tau + 1]
        policy[tau] = q.argmax(axis=1)
        v[tau] = q.max(axis=1)
    return float(mdp.initial_dist @ v[0]), policy, v


def policy_value(mdp: EpisodicMDP, policy: np.ndarray) -> float:
    """Exact expected return of a time-indexed deterministic policy ``(H, S)``."""
    _guard(mdp)
    policy = np.asarray(policy)
    H, S = mdp.horizon, mdp.n_states
    v = np.zeros(S)
    idx = np.arange(S)
    for tau in range(H - 1, -1, -1):
        a = policy[tau]
        v = mdp.reward[tau, idx, a] + mdp.transition[idx, a] @ v
    return float(mdp.initial_dist @ v)


def stochastic_policy_value(mdp: EpisodicMDP, policy: np.ndarray) -> float:
    """Exact expected return of a randomised policy, ``policy[tau, s, a]``."""
    _guard(mdp)
    policy = np.asarray(policy, dtype=float)
    if policy.ndim == 2:
        policy = np.broadcast_to(policy, (mdp.horizon,) + policy.shape)
    v = np.zeros(mdp.n_states)
    for tau in range(mdp.horizon - 1, -1, -1):
        q = mdp.reward[tau] + mdp.transition @ v
        v = (policy[tau] * q).sum(axis=1)
    return float(mdp.initial_dist @ v)


def occupancy(mdp: EpisodicMDP, policy: np.ndarray) -> np.ndarray:
    """State-visitation probabilities ``d[tau, s]`` under a deterministic policy."""
    _guard(mdp)
    policy = np.asarray(policy)
    H, S = mdp.horizon, mdp.n_states
    d = np.zeros((H, S))
    d[0] = mdp.initial_dist
    idx = np.arange(S)
    for tau in range(H - 1):
        d[tau + 1] = d[tau] @ mdp.transition[idx, policy[tau]]
    return d


def state_action_to_state_reward(mdp: EpisodicMDP) -> EpisodicMDP:
    """Insert a deciding state before every transition.

    State ``(s, ⊥)`` is a deciding state that pays nothing: choosing ``a``
    moves to the committed state ``(s, a)``, and the extra action ``⊥``
    stays put.  A committed state pays ``r(s, a)`` whatever the action and
    moves to ``(s', ⊥)`` with ``s' ~ P(.|s, a)``.  The horizon doubles and
    the reward of a committed state at step ``sigma`` uses the original
    reward table at step ``sigma // 2``.

    State layout: ``(s, a)`` is ``s * (A + 1) + a`` and ``(s, ⊥)`` is
    ``s * (A + 1) + A``.  Action ``A`` is ``⊥``.
    """
    S, A, H = mdp.n_states, mdp.n_actions, mdp.horizon
    A1 = A + 1
    S2 = S * A1
    P = np.zeros((S2, A1, S2))
    R = np.zeros((2 * H, S2, A1))
    deciding = np.arange(S) * A1 + A
    for s in range(S):
        dec = s * A1 + A
        for u in range(A):
            P[dec, u, s * A1 + u] = 1.0
        P[dec, A, dec] = 1.0
        for a in range(A):
            com = s * A1 + a
            P[com][:, deciding] = mdp.transition[s, a][None, :]
            for sigma in range(2 * H):
                R[sigma, com, :] = mdp.reward[sigma // 2, s, a]
    init = np.zeros(S2)
    init[deciding] = mdp.initial_dist
    return EpisodicMDP(P, R, init)
