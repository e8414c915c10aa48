"""Upper-confidence fixed-horizon episodic learning.

The learner keeps committed visit counts ``n`` and pending counts ``v`` per
state-action pair.  Between commits it plans optimistically over every
transition model whose rows lie inside per-successor confidence intervals,
and executes the resulting time-indexed policy.

Environments need ``n_states``, ``n_actions``, ``horizon``, ``reward`` with
shape ``(H, S, A)`` (rewards are known), ``support`` with shape
``(S, A, S)``, ``reset(rng)`` and ``step(s, a, rng)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class UcfhConfig:
    epsilon: float
    delta: float
    #: replaces the theoretical batch size ``m``, which is astronomically
    #: large for any horizon worth running
    m_override: int | None = None
    max_episodes: int = 10_000

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.m_override is not None and self.m_override < 1:
            raise ValueError("m_override must be >= 1")
        if self.max_episodes < 1:
            raise ValueError("max_episodes must be >= 1")


@dataclass(frozen=True)
class UcfhSettings:
    """Quantities derived from a config and the problem size."""

    w_min: float
    u_max: float
    delta1: float
    m_formula: float
    m: int

    @classmethod
    def derive(cls, cfg: UcfhConfig, n_states: int, n_actions: int, horizon: int) -> "UcfhSettings":
        eps, S, SA, H = cfg.epsilon, n_states, n_states * n_actions, horizon
        w_min = eps / (4 * H * S)
        u_max = SA * math.log2(S * H / w_min)
        delta1 = cfg.delta / (20 * u_max)
        lglg = math.log2(math.log2(H)) if H > 2 else 0.0
        m_formula = (
            512
            * lglg**2
            * 10
            * H**2
            / eps**2
            * math.log(8 * H**2 * S**2 / eps) ** 2
            * math.log(60 * SA * math.log2(4 * S**2 * H**2 / eps) ** 2 / cfg.delta)
        )
        if cfg.m_override is not None:
            m = int(cfg.m_override)
        else:
            m = max(1, math.ceil(m_formula))
        for name, val in (("w_min", w_min), ("u_max", u_max), ("delta1", delta1)):
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"derived {name}={val} is not positive and finite")
        return cls(w_min, u_max, delta1, m_formula, m)


def confidence_set(p_hat, n, delta1: float):
    """Hull of the plausible success probabilities given ``n`` observations.

    Intersects the deviation bound ``|p - p'| <= min(hoeffding, bernstein)``
    with the standard-deviation bound
    ``|sqrt(p'(1-p')) - sqrt(p(1-p))| <= sqrt(2 ln(6/delta1) / (n-1))``
    (the latter and the Bernstein term only when ``n > 1``) and ``[0, 1]``.

    Vectorised over ``p_hat`` and ``n``.

    Returns
    -------
    lower, upper : ndarray
    """
    p = np.asarray(p_hat, dtype=float)
    n = np.asarray(n, dtype=float)
    p, n = np.broadcast_arrays(p, n)
    log_term = math.log(6.0 / delta1)
    with np.errstate(divide="ignore", invalid="ignore"):
        hoeff = np.sqrt(log_term / (2.0 * n))
        bern = np.sqrt(2.0 * p * (1 - p) * log_term / n) + 7.0 * log_term / (3.0 * (n - 1))
        radius = np.where(n > 1, np.minimum(hoeff, bern), hoeff)
        sd_bound = np.sqrt(2.0 * log_term / (n - 1))
    lo = np.clip(p - radius, 0.0, 1.0)
    hi = np.clip(p + radius, 0.0, 1.0)

    # standard-deviation constraint: sigma(p') in [sig_lo, sig_hi]
    sig = np.sqrt(np.clip(p * (1 - p), 0.0, None))
    multi = n > 1
    sig_hi = np.where(multi, sig + sd_bound, np.inf)
    sig_lo = np.where(multi, sig - sd_bound, -np.inf)

    def root(t):
        # smaller solution x of x(1-x) = t^2 for 0 <= t <= 1/2
        t = np.clip(t, 0.0, 0.5)
        return 0.5 * (1.0 - np.sqrt(np.clip(1.0 - 4.0 * t * t, 0.0, None)))

    # sigma(p') <= sig_hi keeps p' out of (x_hi, 1 - x_hi) when sig_hi < 1/2
    x_hi = root(sig_hi)
    # sigma(p') >= sig_lo keeps p' inside [x_lo, 1 - x_lo] when sig_lo > 0
    x_lo = np.where(sig_lo > 0, root(sig_lo), 0.0)
    lo2 = np.maximum(lo, x_lo)
    hi2 = np.minimum(hi, 1.0 - x_lo)
    # remove the excluded middle band, keep the hull of what survives
    band = sig_hi < 0.5
    left_lo, left_hi = lo2, np.minimum(hi2, x_hi)
    right_lo, right_hi = np.maximum(lo2, 1.0 - x_hi), hi2
    left_ok = left_lo <= left_hi
    right_ok = right_lo <= right_hi
    band_lo = np.where(left_ok, left_lo, right_lo)
    band_hi = np.where(right_ok, right_hi, left_hi)
    lower = np.where(band, band_lo, lo2)
    upper = np.where(band, band_hi, hi2)
    # no data: vacuous
    lower = np.where(n <= 0, 0.0, lower)
    upper = np.where(n <= 0, 1.0, upper)
    # guard against round-off pushing the empirical value outside
    lower = np.minimum(lower, np.where(n <= 0, 0.0, p))
    upper = np.maximum(upper, np.where(n <= 0, 1.0, p))
    return lower, upper


@dataclass
class VisitStats:
    n_sa: np.ndarray
    v_sa: np.ndarray
    n_sas: np.ndarray
    v_sas: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "VisitStats":
        S, A = n_states, n_actions
        return cls(
            np.zeros((S, A), dtype=np.int64),
            np.zeros((S, A), dtype=np.int64),
            np.zeros((S, A, S), dtype=np.int64),
            np.zeros((S, A, S), dtype=np.int64),
        )

    def commit(self, s: int, a: int) -> None:
        self.n_sa[s, a] += self.v_sa[s, a]
        self.n_sas[s, a] += self.v_sas[s, a]
        self.v_sa[s, a] = 0
        self.v_sas[s, a] = 0

    def consistent(self) -> bool:
        return bool(
            np.all(self.n_sas.sum(-1) == self.n_sa)
            and np.all(self.v_sas.sum(-1) == self.v_sa)
            and np.all(self.n_sa >= 0)
            and np.all(self.v_sa >= 0)
        )


def transition_intervals(stats: VisitStats, support: np.ndarray, delta1: float):
    """Per-successor confidence intervals, zero outside the support."""
    n = stats.n_sa[:, :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        p_hat = np.where(n > 0, stats.n_sas / np.maximum(n, 1), 0.0)
    lo, hi = confidence_set(p_hat, np.broadcast_to(n, p_hat.shape), delta1)
    lo = np.where(support, lo, 0.0)
    hi = np.where(support, hi, 0.0)
    return lo, hi


@dataclass
class EviResult:
    q: np.ndarray  # (H, S, A) optimistic action values
    policy: np.ndarray  # (H, S)
    transitions: np.ndarray | None  # (H, S, A, S) when requested


def fixed_horizon_evi(lo: np.ndarray, hi: np.ndarray, reward: np.ndarray, *, keep_transitions: bool = False) -> EviResult:
    """Optimistic backward induction over interval-constrained transitions.

    Each row starts at its interval minima; the missing mass goes to
    successors in decreasing order of their next-step optimistic value, each
    capped at its interval maximum.

    Raises
    ------
    ValueError
        If some row's interval maxima sum to less than one.
    """
    H, S, A = reward.shape
    if np.any(hi.sum(-1) < 1.0 - 1e-9):
        bad = np.argwhere(hi.sum(-1) < 1.0 - 1e-9)[0]
        raise ValueError(f"infeasible confidence intervals at (s, a) = {tuple(int(i) for i in bad)}")
    deficit = 1.0 - lo.sum(-1)  # (S, A)
    slack = hi - lo
    q = np.empty((H, S, A))
    policy = np.empty((H, S), dtype=np.int64)
    trans = np.empty((H, S, A, S)) if keep_transitions else None
    v_next = np.zeros(S)
    for tau in range(H - 1, -1, -1):
        order = np.argsort(-v_next, kind="stable")
        cap = slack[:, :, order]
        before = np.cumsum(cap, axis=-1) - cap
        alloc = np.clip(deficit[:, :, None] - before, 0.0, cap)
        p = lo.copy()
        p[:, :, order] += alloc
        q[tau] = reward[tau] + p @ v_next
        policy[tau] = q[tau].argmax(axis=1)
        v_next = q[tau].max(axis=1)
        if keep_transitions:
            trans[tau] = p
    return EviResult(q, policy, trans)


class SparseEvi:
    """Interval EVI restricted to the support entries of a sparse kernel.

    Produces the same optimistic values and policy as
    :func:`fixed_horizon_evi` on the dense intervals (zero outside the
    support), in ``O(H nnz log nnz)`` instead of ``O(H S^2 A)``.
    """

    def __init__(self, support: np.ndarray, reward: np.ndarray):
        S, A, _ = support.shape
        self.S, self.A = S, A
        self.reward = reward
        flat_row, self.cols = np.nonzero(support.reshape(S * A, S))
        self.rows = flat_row
        self.sa = (flat_row // A, flat_row % A)
        self.n_rows = S * A
        # entries come out of np.nonzero grouped by row; index of each row's first entry
        self.first = np.searchsorted(flat_row, flat_row, side="left")

    def entries(self, stats: VisitStats, delta1: float):
        s, a = self.sa
        n = stats.n_sa[s, a]
        p_hat = np.where(n > 0, stats.n_sas[s, a, self.cols] / np.maximum(n, 1), 0.0)
        return confidence_set(p_hat, n, delta1)

    def solve(self, lo: np.ndarray, hi: np.ndarray) -> EviResult:
        S, A, rows, cols = self.S, self.A, self.rows, self.cols
        H = self.reward.shape[0]
        hi_sum = np.bincount(rows, hi, minlength=self.n_rows)
        if np.any(hi_sum < 1.0 - 1e-9):
            bad = int(np.argmax(hi_sum < 1.0 - 1e-9))
            raise ValueError(f"infeasible confidence intervals at (s, a) = {(bad // A, bad % A)}")
        deficit = 1.0 - np.bincount(rows, lo, minlength=self.n_rows)
        slack = hi - lo
        q = np.empty((H, S, A))
        policy = np.empty((H, S), dtype=np.int64)
        v_next = np.zeros(S)
        rank = np.empty(S, dtype=np.int64)
        for tau in range(H - 1, -1, -1):
            rank[np.argsort(-v_next, kind="stable")] = np.arange(S)
            # rows stay grouped; within a row, successors by decreasing value
            order = np.argsort(rows * S + rank[cols])
            cap = slack[order]
            before = np.cumsum(cap) - cap
            before -= before[self.first]
            alloc = np.clip(deficit[rows] - before, 0.0, cap)
            mass = lo[order] + alloc
            pv = np.bincount(rows, mass * v_next[cols[order]], minlength=self.n_rows)
            q[tau] = self.reward[tau] + pv.reshape(S, A)
            policy[tau] = q[tau].argmax(axis=1)
            v_next = q[tau].max(axis=1)
        return EviResult(q, policy, None)


#: use :class:`SparseEvi` when the support fills less than this fraction
SPARSE_DENSITY = 0.25


@dataclass
class Episode:
    states: np.ndarray  # (H + 1,)
    actions: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)

    @property
    def ret(self) -> float:
        return float(self.rewards.sum())


def sample_episode(env, policy: np.ndarray, stats: VisitStats | None, rng: np.random.Generator) -> Episode:
    """Roll one episode with a time-indexed policy, recording pending visits."""
    H = env.horizon
    states = np.empty(H + 1, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    rewards = np.empty(H)
    s = env.reset(rng)
    for tau in range(H):
        a = int(policy[tau, s])
        s_next = env.step(s, a, rng)
        states[tau], actions[tau] = s, a
        rewards[tau] = env.reward[tau, s, a]
        if stats is not None:
            stats.v_sa[s, a] += 1
            stats.v_sas[s, a, s_next] += 1
        s = s_next
    states[H] = s
    return Episode(states, actions, rewards)


@dataclass
class UcfhResult:
    policy: np.ndarray  # (H, S)
    optimistic_value: float
    episodes: int
    updates: int
    stop_reason: str  # "saturated" or "max_episodes"
    stats: VisitStats
    settings: UcfhSettings
    trace: list[str] = field(default_factory=list)

    @property
    def truncated(self) -> bool:
        return self.stop_reason == "max_episodes"


def ucfh(env, cfg: UcfhConfig, rng: np.random.Generator) -> UcfhResult:
    """Learn a near-optimal time-indexed policy for ``env``."""
    S, A, H = env.n_states, env.n_actions, env.horizon
    settings = UcfhSettings.derive(cfg, S, A, H)
    stats = VisitStats.zeros(S, A)
    support = np.asarray(env.support, dtype=bool)
    reward = np.asarray(env.reward, dtype=float)
    threshold = max(settings.m * settings.w_min, 1.0)
    budget = S * settings.m * H
    p0 = getattr(env, "initial_dist", None)
    episodes = updates = 0
    trace: list[str] = []
    stop_reason = "max_episodes"

    sparse = SparseEvi(support, reward) if support.mean() < SPARSE_DENSITY else None

    def plan():
        if sparse is not None:
            return sparse.solve(*sparse.entries(stats, settings.delta1))
        lo, hi = transition_intervals(stats, support, settings.delta1)
        return fixed_horizon_evi(lo, hi, reward)

    evi = plan()
    while episodes < cfg.max_episodes:
        sample_episode(env, evi.policy, stats, rng)
        episodes += 1
        ready = (stats.v_sa >= np.maximum(threshold, stats.n_sa)) & (stats.n_sa < budget)
        if not ready.any():
            if np.all(stats.n_sa >= budget):
                stop_reason = "saturated"
                break
            continue
        s, a = (int(i) for i in np.argwhere(ready)[0])
        before = int(stats.n_sa[s, a])
        stats.commit(s, a)
        updates += 1
        evi = plan()
        v0 = float(p0 @ evi.q[0].max(axis=1)) if p0 is not None else float("nan")
        trace.append(f"{episodes}\t{s}\t{a}\t{before}\t{int(stats.n_sa[s, a])}\t{v0:.10g}")
        if np.all(stats.n_sa >= budget):
            stop_reason = "saturated"
            break
    v0 = float(p0 @ evi.q[0].max(axis=1)) if p0 is not None else float(evi.q[0].max(axis=1).max())
    return UcfhResult(evi.policy, v0, episodes, updates, stop_reason, stats, settings, trace)


TRACE_HEADER = "episode\ts\ta\tn_before\tn_after\toptimistic_value"
