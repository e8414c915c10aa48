"""Subsampled Q-learning for the global agent.

The global agent's Q-table is indexed by ``(s_g, key, a_g)`` where ``key``
summarises ``k`` sampled local states (see :class:`altmarl.model.KeySpace`).
Value iteration runs on the k-agent surrogate system in which every sampled
agent follows the policy-guided local kernel.

Two operators are provided:

* :func:`empirical_bellman_sweep` replaces the expectation over successors by
  the mean of ``m`` sampled successors per cell.
* :func:`exact_bellman_sweep` computes the same expectation in closed form
  and serves as a verification oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .model import (
    GlobalPolicy,
    KeySpace,
    LocalPolicy,
    ModelSpec,
    Parameterization,
    _histogram_table,
    choose_parameterization,
    key_space,
    policy_guided_kernel,
    surrogate_local_reward,
)

#: largest dense histogram-transition tensor (entries) we are willing to build
MAX_TRANSITION_ENTRIES = 60_000_000


@dataclass
class QTable:
    parameterization: Parameterization
    k: int
    values: np.ndarray  # (n_sg, n_keys, n_ag)

    def __post_init__(self):
        self.parameterization = Parameterization(self.parameterization)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("Q values must have shape (n_sg, n_keys, n_ag)")

    @classmethod
    def zeros(cls, parameterization, k: int, n_sg: int, n_sl: int, n_ag: int) -> "QTable":
        ks = key_space(Parameterization(parameterization), k, n_sl)
        return cls(parameterization, k, np.zeros((n_sg, ks.size, n_ag)))

    @property
    def n_sl(self) -> int:
        n_keys = self.values.shape[1]
        if self.parameterization is Parameterization.STANDARD:
            n = int(round(n_keys ** (1.0 / self.k)))
            return n
        n = 1
        while math.comb(self.k + n - 1, n - 1) < n_keys:
            n += 1
        return n

    @property
    def keys(self) -> KeySpace:
        return key_space(self.parameterization, self.k, self.n_sl)

    def copy(self) -> "QTable":
        return QTable(self.parameterization, self.k, self.values.copy())

    def to_dict(self) -> dict:
        n_sg, n_keys, n_ag = self.values.shape
        return {
            "parameterization": self.parameterization.value,
            "k": self.k,
            "n_sg": n_sg,
            "n_keys": n_keys,
            "n_ag": n_ag,
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QTable":
        shape = (int(d["n_sg"]), int(d["n_keys"]), int(d["n_ag"]))
        return cls(d["parameterization"], int(d["k"]), np.asarray(d["values"], dtype=float).reshape(shape))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "QTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ValueTable:
    parameterization: Parameterization
    k: int
    values: np.ndarray  # (n_sg, n_keys)


@dataclass(frozen=True)
class GLearnConfig:
    k: int
    m: int
    t_iters: int
    seed: int = 0
    #: how mean-field successor histograms are drawn: ``"histogram"`` samples
    #: the successor key from its exact law, ``"agentwise"`` moves each of the
    #: k agents and re-histograms.  Both have the same distribution.
    mf_sampling: str = "histogram"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.t_iters < 0:
            raise ValueError("t_iters must be >= 0")
        if self.mf_sampling not in ("histogram", "agentwise"):
            raise ValueError(f"unknown mf_sampling {self.mf_sampling!r}")


def default_t_iters(gamma: float, r_tilde: float, k: int) -> int:
    """Number of sweeps ``ceil(2/(1-gamma) * ln(r_tilde sqrt(k) / (1-gamma)))``."""
    val = 2.0 / (1.0 - gamma) * math.log(r_tilde * math.sqrt(k) / (1.0 - gamma))
    return max(1, math.ceil(val))


# ---------------------------------------------------------------------------
# Surrogate-system ingredients
# ---------------------------------------------------------------------------


def adapted_reward(model: ModelSpec, rbar: np.ndarray, keys: KeySpace) -> np.ndarray:
    """``r_g(s_g, a_g) + (1/k) sum_i rbar(s_i, s_g)`` for every cell.

    Returns an array of shape ``(n_sg, n_keys, n_ag)``.
    """
    local = keys.frequencies @ np.asarray(rbar)  # (n_keys, n_sg)
    return np.asarray(model.rg)[:, None, :] + local.T[:, :, None]


@lru_cache(maxsize=None)
def _shift_tables(k: int, n_sl: int):
    """Index plumbing for the histogram-transition recursion.

    For every size ``t <= k`` returns the compositions of ``t``, for every
    composition of ``t+1`` its parent (one agent removed from its last
    non-empty bin) and that bin, and for every composition of ``t`` the
    index of ``h + e_s`` among the compositions of ``t+1``.
    """
    radix = (k + 1) ** np.arange(n_sl, dtype=np.int64)

    def index_map(table):
        codes = table @ radix
        order = np.argsort(codes)
        return codes[order], order

    tables = [np.zeros((1, n_sl), dtype=np.int64)]
    for t in range(1, k + 1):
        tables.append(np.array(_histogram_table(t, n_sl)))
    maps = [index_map(tb) for tb in tables]

    def lookup(t, counts):
        sorted_codes, order = maps[t]
        return order[np.searchsorted(sorted_codes, counts @ radix)]

    parents, bins, shifts = [], [], []
    eye = np.eye(n_sl, dtype=np.int64)
    for t in range(k):
        child = tables[t + 1]
        nz = child > 0
        last = n_sl - 1 - np.argmax(nz[:, ::-1], axis=1)
        parents.append(lookup(t, child - eye[last]))
        bins.append(last)
        shifts.append(np.stack([lookup(t + 1, tables[t] + eye[s]) for s in range(n_sl)], axis=1))
    return tables, parents, bins, shifts


def histogram_transition(kernel: np.ndarray, keys: KeySpace) -> np.ndarray:
    """Exact law of the successor histogram.

    Parameters
    ----------
    kernel : ndarray, shape (n_sl, n_sg, n_sl)
        Policy-guided local kernel.
    keys : KeySpace
        Mean-field key space of size ``k``.

    Returns
    -------
    ndarray, shape (n_sg, n_keys, n_keys)
        ``out[g, i, j]`` is the probability that ``k`` agents with histogram
        ``i`` move to histogram ``j`` in one step under global state ``g``.
    """
    if keys.parameterization is not Parameterization.MEAN_FIELD:
        raise ValueError("histogram_transition needs the mean-field parameterization")
    kernel = np.asarray(kernel, dtype=float)
    n_sl, n_sg, _ = kernel.shape
    if n_sg * keys.size**2 > MAX_TRANSITION_ENTRIES:
        raise MemoryError(f"histogram transition with {keys.size} keys exceeds the size guard")
    tables, parents, bins, shifts = _shift_tables(keys.k, n_sl)
    dist = np.ones((n_sg, 1, 1))
    for t in range(keys.k):
        n_next = len(tables[t + 1])
        new = np.zeros((n_sg, n_next, n_next))
        src = dist[:, parents[t], :]  # (n_sg, n_next, n_t)
        probs = kernel[bins[t]]  # (n_next, n_sg, n_sl)
        for s in range(n_sl):
            new[:, :, shifts[t][:, s]] += src * probs[:, :, s].T[:, :, None]
        dist = new
    # tables[k] is the same composition order as the key space
    return dist


def _row_cdf(probs: np.ndarray) -> np.ndarray:
    """Flattened, row-offset cumulative table for vectorised inverse-CDF draws."""
    n_cols = probs.shape[-1]
    rows = probs.reshape(-1, n_cols)
    cdf = np.cumsum(rows, axis=1)
    cdf /= cdf[:, -1:]
    return (cdf + np.arange(len(rows))[:, None]).ravel()


def _draw_rows(cdf_flat: np.ndarray, n_cols: int, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Draw one column per entry of ``rows`` using uniforms ``u``."""
    idx = np.searchsorted(cdf_flat, rows + u, side="right")
    return np.minimum(idx - rows * n_cols, n_cols - 1)


class SuccessorSampler:
    """Draws ``(s_g', key')`` successors of every cell of a Q-table.

    Built once per local policy; reused across sweeps.
    """

    def __init__(self, model: ModelSpec, kernel: np.ndarray, keys: KeySpace, mf_sampling: str = "histogram"):
        self.model = model
        self.keys = keys
        self.kernel = np.asarray(kernel, dtype=float)
        self.n_sg, self.n_ag, self.n_sl = model.n_sg, model.n_ag, model.n_sl
        self._pg_cdf = _row_cdf(np.asarray(model.pg))
        self._local_cdf = _row_cdf(self.kernel)  # rows indexed s_l * n_sg + s_g
        self._mode = "agentwise"
        if keys.parameterization is Parameterization.MEAN_FIELD and mf_sampling == "histogram":
            try:
                self.transition = histogram_transition(self.kernel, keys)
            except MemoryError:
                self.transition = None
            else:
                self._key_cdf = _row_cdf(self.transition)
                self._mode = "histogram"

    def sample(self, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(next_sg, next_key)``, each of shape ``(n_sg, n_keys, n_ag, m)``."""
        n_sg, n_ag, n_keys = self.n_sg, self.n_ag, self.keys.size
        shape = (n_sg, n_keys, n_ag, m)
        g = np.arange(n_sg)[:, None, None, None]
        a = np.arange(n_ag)[None, None, :, None]
        rows = np.broadcast_to(g * n_ag + a, shape)
        next_sg = _draw_rows(self._pg_cdf, n_sg, rows, rng.random(shape))
        if self._mode == "histogram":
            key = np.arange(n_keys)[None, :, None, None]
            krows = np.broadcast_to(g * n_keys + key, shape)
            next_key = _draw_rows(self._key_cdf, n_keys, krows, rng.random(shape))
        else:
            tuples = self.keys.tuples  # (n_keys, k)
            lrows = tuples[None, :, None, None, :] * n_sg + g[..., None]
            lrows = np.broadcast_to(lrows, shape + (self.keys.k,))
            nxt = _draw_rows(self._local_cdf, self.n_sl, lrows, rng.random(lrows.shape))
            next_key = self.keys.index_of_tuples(nxt)
        return next_sg, next_key


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def _check_q(q: QTable, model: ModelSpec, cfg: GLearnConfig | None = None) -> KeySpace:
    keys = key_space(q.parameterization, q.k, model.n_sl)
    if q.values.shape != (model.n_sg, keys.size, model.n_ag):
        raise ValueError(f"Q-table shape {q.values.shape} does not match the model")
    if cfg is not None and cfg.k != q.k:
        raise ValueError(f"config k={cfg.k} does not match Q-table k={q.k}")
    return keys


def empirical_bellman_sweep(
    q: QTable,
    model: ModelSpec,
    kernel: np.ndarray,
    rbar: np.ndarray,
    cfg: GLearnConfig,
    rng: np.random.Generator,
    *,
    sampler: SuccessorSampler | None = None,
    return_stderr: bool = False,
):
    """One synchronous sweep of the m-sample empirical adapted operator.

    Every cell reads the old table; ``m`` successors are drawn per cell.

    Returns
    -------
    QTable, or (QTable, ndarray)
        The new table and, if requested, the standard error of the sampled
        continuation term per cell (zero when ``m == 1``).
    """
    keys = _check_q(q, model, cfg)
    if sampler is None:
        sampler = SuccessorSampler(model, kernel, keys, cfg.mf_sampling)
    reward = adapted_reward(model, rbar, keys)
    vmax = q.values.max(axis=2)
    next_sg, next_key = sampler.sample(cfg.m, rng)
    cont = vmax[next_sg, next_key]  # (n_sg, n_keys, n_ag, m)
    new = QTable(q.parameterization, q.k, reward + model.gamma * cont.mean(axis=-1))
    if not return_stderr:
        return new
    if cfg.m > 1:
        se = model.gamma * cont.std(axis=-1, ddof=1) / math.sqrt(cfg.m)
    else:
        se = np.zeros_like(reward)
    return new, se


def expected_successor_value(vmax: np.ndarray, kernel: np.ndarray, keys: KeySpace, transition=None) -> np.ndarray:
    """``W[g, key, g'] = E[vmax[g', key'] | g, key]`` under the local kernel.

    Parameters
    ----------
    vmax : ndarray, shape (n_sg, n_keys)
    kernel : ndarray, shape (n_sl, n_sg, n_sl)
    """
    kernel = np.asarray(kernel)
    n_sl, n_sg, _ = kernel.shape
    if keys.parameterization is Parameterization.MEAN_FIELD:
        trans = histogram_transition(kernel, keys) if transition is None else transition
        return np.einsum("gij,hj->gih", trans, vmax)
    k = keys.k
    out = np.empty((n_sg, keys.size, vmax.shape[0]))
    for g in range(n_sg):
        mat = kernel[:, g, :]
        tens = vmax.reshape((vmax.shape[0],) + (n_sl,) * k)
        for axis in range(1, k + 1):
            tens = np.moveaxis(np.tensordot(tens, mat, axes=([axis], [1])), -1, axis)
        out[g] = tens.reshape(vmax.shape[0], -1).T
    return out


def exact_bellman_sweep(q: QTable, model: ModelSpec, kernel: np.ndarray, rbar: np.ndarray, *, transition=None) -> QTable:
    """Adapted Bellman operator with the successor expectation computed exactly."""
    keys = _check_q(q, model)
    reward = adapted_reward(model, rbar, keys)
    w = expected_successor_value(q.values.max(axis=2), kernel, keys, transition)
    cont = np.einsum("gah,gih->gia", np.asarray(model.pg), w)
    return QTable(q.parameterization, q.k, reward + model.gamma * cont)


def solve_exact(model: ModelSpec, pi_l: LocalPolicy, k: int, parameterization=None, tol: float = 1e-12, max_iter: int = 100_000) -> QTable:
    """Fixed point of the exact adapted operator by value iteration."""
    par = Parameterization(parameterization) if parameterization else choose_parameterization(model.n_sl, k)
    kernel = policy_guided_kernel(model.pl, pi_l)
    rbar = surrogate_local_reward(model.rl, pi_l)
    keys = key_space(par, k, model.n_sl)
    trans = histogram_transition(kernel, keys) if par is Parameterization.MEAN_FIELD else None
    q = QTable.zeros(par, k, model.n_sg, model.n_sl, model.n_ag)
    for _ in range(max_iter):
        new = exact_bellman_sweep(q, model, kernel, rbar, transition=trans)
        diff = np.abs(new.values - q.values).max()
        q = new
        if diff <= tol * (1 - model.gamma):
            break
    return q


# ---------------------------------------------------------------------------
# G-LEARN
# ---------------------------------------------------------------------------


def greedy_policy(q: QTable) -> GlobalPolicy:
    """Deterministic argmax policy; ties go to the lowest action index."""
    return GlobalPolicy.from_actions(q.parameterization, q.k, q.values.argmax(axis=2), q.values.shape[2])


def approx_value(pi_g: GlobalPolicy, q: QTable) -> ValueTable:
    if pi_g.parameterization is not q.parameterization or pi_g.k != q.k:
        raise ValueError("policy and Q-table use different key spaces")
    if pi_g.dist.shape != q.values.shape:
        raise ValueError(f"policy shape {pi_g.dist.shape} does not match Q shape {q.values.shape}")
    return ValueTable(q.parameterization, q.k, np.einsum("gia,gia->gi", pi_g.dist, q.values))


def g_learn(
    model: ModelSpec,
    pi_l: LocalPolicy,
    cfg: GLearnConfig,
    rng: np.random.Generator | None = None,
    *,
    parameterization=None,
) -> tuple[GlobalPolicy, ValueTable, QTable]:
    """Run ``cfg.t_iters`` empirical sweeps from zero and extract the greedy policy."""
    if cfg.k > model.n_agents:
        raise ValueError(f"k={cfg.k} exceeds n_agents={model.n_agents}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    par = Parameterization(parameterization) if parameterization else choose_parameterization(model.n_sl, cfg.k)
    kernel = policy_guided_kernel(model.pl, pi_l)
    rbar = surrogate_local_reward(model.rl, pi_l)
    q = QTable.zeros(par, cfg.k, model.n_sg, model.n_sl, model.n_ag)
    sampler = SuccessorSampler(model, kernel, q.keys, cfg.mf_sampling)
    for _ in range(cfg.t_iters):
        q = empirical_bellman_sweep(q, model, kernel, rbar, cfg, rng, sampler=sampler)
    pi_g = greedy_policy(q)
    return pi_g, approx_value(pi_g, q), q


# ---------------------------------------------------------------------------
# Extensions: stochastic rewards and off-policy updates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardSampler:
    """Independent bounded reward draws.

    ``draw_global(rng, size)`` returns shape ``(size, n_sg, n_ag)`` and
    ``draw_local(rng, size)`` returns shape ``(size, n_sl, n_sg)``, the local
    reward already marginalised over the fixed local policy.  ``bounds`` is
    ``(g_lo, g_hi, l_lo, l_hi)``.
    """

    draw_global: Callable
    draw_local: Callable
    mean_global: np.ndarray
    mean_local: np.ndarray
    bounds: tuple[float, float, float, float]

    @property
    def reward_range(self) -> float:
        g_lo, g_hi, l_lo, l_hi = self.bounds
        return (g_hi + l_hi) - (g_lo + l_lo)


def bernoulli_rewards(mean_global: np.ndarray, mean_local: np.ndarray, scale_g: float, scale_l: float) -> RewardSampler:
    """Rewards taking values in ``{0, scale}`` with the given means."""
    mean_global = np.asarray(mean_global, dtype=float)
    mean_local = np.asarray(mean_local, dtype=float)
    pg = mean_global / scale_g
    pl = mean_local / scale_l
    if np.any((pg < 0) | (pg > 1)) or np.any((pl < 0) | (pl > 1)):
        raise ValueError("means must lie in [0, scale]")
    return RewardSampler(
        draw_global=lambda rng, size: scale_g * (rng.random((size,) + pg.shape) < pg),
        draw_local=lambda rng, size: scale_l * (rng.random((size,) + pl.shape) < pl),
        mean_global=mean_global,
        mean_local=mean_local,
        bounds=(0.0, scale_g, 0.0, scale_l),
    )


def deterministic_rewards(rg: np.ndarray, rbar: np.ndarray) -> RewardSampler:
    rg = np.asarray(rg, dtype=float)
    rbar = np.asarray(rbar, dtype=float)
    return RewardSampler(
        draw_global=lambda rng, size: np.broadcast_to(rg, (size,) + rg.shape),
        draw_local=lambda rng, size: np.broadcast_to(rbar, (size,) + rbar.shape),
        mean_global=rg,
        mean_local=rbar,
        bounds=(float(rg.min()), float(rg.max()), float(rbar.min()), float(rbar.max())),
    )


def averaged_stochastic_sweep(
    q: QTable,
    model: ModelSpec,
    kernel: np.ndarray,
    sampler: RewardSampler,
    cfg: GLearnConfig,
    xi: int,
    rng: np.random.Generator,
    *,
    chunk: int = 256,
) -> QTable:
    """Average ``xi`` independent applications of the randomized operator.

    Each application draws a fresh reward for every cell (one global draw and
    one local draw per sampled agent) and fresh successors.
    """
    if xi < 1:
        raise ValueError("xi must be >= 1")
    keys = _check_q(q, model, cfg)
    succ = SuccessorSampler(model, kernel, keys, cfg.mf_sampling)
    vmax = q.values.max(axis=2)
    n_sg, n_keys, n_ag = q.values.shape
    tuples = keys.tuples  # (n_keys, k)
    total = np.zeros_like(q.values)
    done = 0
    while done < xi:
        b = min(chunk, xi - done)
        rg = sampler.draw_global(rng, b * n_keys).reshape(b, n_keys, n_sg, n_ag).transpose(0, 2, 1, 3)
        # one local draw per (application, cell, agent slot)
        rl = sampler.draw_local(rng, b * n_ag * keys.k).reshape(b, n_ag, keys.k, model.n_sl, n_sg)
        # pick rl[..., s_i, s_g] for every agent slot of every key
        loc = rl[:, :, np.arange(keys.k)[None, :], tuples[:, :], :]  # (b, n_ag, n_keys, k, n_sg)
        loc = loc.mean(axis=3).transpose(0, 3, 2, 1)  # (b, n_sg, n_keys, n_ag)
        total += (rg + loc).sum(axis=0)
        for _ in range(b):
            next_sg, next_key = succ.sample(cfg.m, rng)
            total += model.gamma * vmax[next_sg, next_key].mean(axis=-1)
        done += b
    return QTable(q.parameterization, q.k, total / xi)


def off_policy_update(q: QTable, transition: tuple, alpha: float, gamma: float) -> QTable:
    """Single-sample update of one cell from a logged transition.

    ``transition`` is ``(s_g, key, a_g, reward, s_g_next, key_next)`` with
    keys given as table indices.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    s_g, key, a_g, reward, s_next, key_next = transition
    new = q.copy()
    target = reward + gamma * q.values[s_next, key_next].max()
    new.values[s_g, key, a_g] = (1.0 - alpha) * q.values[s_g, key, a_g] + alpha * target
    return new
