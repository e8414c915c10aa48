"""Cooperative global/local Markov game: spaces, kernels, rewards, policies.

All states and actions are dense integer indices ``0..card-1``.  Array
layouts used throughout the package:

=========  ==============================  ==========================
name       shape                           meaning
=========  ==============================  ==========================
``pg``     ``(n_sg, n_ag, n_sg)``          ``P_g(s_g' | s_g, a_g)``
``pl``     ``(n_sl, n_sg, n_al, n_sl)``    ``P_l(s_l' | s_l, s_g, a_l)``
``rg``     ``(n_sg, n_ag)``                global reward
``rl``     ``(n_sl, n_sg, n_al)``          local reward
=========  ==============================  ==========================
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12


class ModelValidationError(ValueError):
    """Raised when a model violates one of its invariants."""


class Parameterization(str, enum.Enum):
    STANDARD = "standard"
    MEAN_FIELD = "mean_field"


@dataclass(frozen=True)
class ModelSpec:
    n_agents: int
    n_sg: int
    n_sl: int
    n_ag: int
    n_al: int
    gamma: float
    pg: np.ndarray
    pl: np.ndarray
    rg: np.ndarray
    rl: np.ndarray
    reward_shift: float = 0.0

    @property
    def r_max(self) -> float:
        """Reward bound ``max r_g + max r_l``."""
        return float(self.rg.max() + self.rl.max())

    @property
    def rl_max(self) -> float:
        return float(np.abs(self.rl).max())

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "n_sg": self.n_sg,
            "n_sl": self.n_sl,
            "n_ag": self.n_ag,
            "n_al": self.n_al,
            "gamma": self.gamma,
            "pg": np.asarray(self.pg).ravel().tolist(),
            "pl": np.asarray(self.pl).ravel().tolist(),
            "rg": np.asarray(self.rg).ravel().tolist(),
            "rl": np.asarray(self.rl).ravel().tolist(),
            "reward_shift": self.reward_shift,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        n_sg, n_sl, n_ag, n_al = (int(d[f]) for f in ("n_sg", "n_sl", "n_ag", "n_al"))
        return cls(
            n_agents=int(d["n_agents"]),
            n_sg=n_sg,
            n_sl=n_sl,
            n_ag=n_ag,
            n_al=n_al,
            gamma=float(d["gamma"]),
            pg=np.asarray(d["pg"], dtype=float).reshape(n_sg, n_ag, n_sg),
            pl=np.asarray(d["pl"], dtype=float).reshape(n_sl, n_sg, n_al, n_sl),
            rg=np.asarray(d["rg"], dtype=float).reshape(n_sg, n_ag),
            rl=np.asarray(d["rl"], dtype=float).reshape(n_sl, n_sg, n_al),
            reward_shift=float(d.get("reward_shift", 0.0)),
        )


def _check_rows(name: str, probs: np.ndarray) -> None:
    if np.any(probs < 0):
        idx = tuple(int(i) for i in np.argwhere(probs < 0)[0])
        raise ModelValidationError(f"non-stochastic row: {name} has negative entry at {idx}")
    sums = probs.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
    if len(bad):
        idx = tuple(int(i) for i in bad[0])
        raise ModelValidationError(
            f"non-stochastic row: {name}{list(idx)} sums to {sums[idx]:.15g}"
        )


def validate_model(spec: ModelSpec) -> ModelSpec:
    """Check every invariant of ``spec`` and return it unchanged.

    Raises
    ------
    ModelValidationError
        On the first violated invariant, naming the offending index.
    """
    for name in ("n_agents", "n_sg", "n_sl", "n_ag", "n_al"):
        if int(getattr(spec, name)) < 1:
            raise ModelValidationError(f"zero cardinality: {name}={getattr(spec, name)}")
    if not 0.0 < spec.gamma < 1.0:
        raise ModelValidationError(f"gamma must lie in (0, 1), got {spec.gamma}")
    shapes = {
        "pg": (spec.n_sg, spec.n_ag, spec.n_sg),
        "pl": (spec.n_sl, spec.n_sg, spec.n_al, spec.n_sl),
        "rg": (spec.n_sg, spec.n_ag),
        "rl": (spec.n_sl, spec.n_sg, spec.n_al),
    }
    for name, shape in shapes.items():
        arr = np.asarray(getattr(spec, name))
        if arr.shape != shape:
            raise ModelValidationError(f"dimension mismatch: {name} has shape {arr.shape}, expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise ModelValidationError(f"{name} has non-finite entries")
    _check_rows("pg", np.asarray(spec.pg))
    _check_rows("pl", np.asarray(spec.pl))
    for name in ("rg", "rl"):
        arr = np.asarray(getattr(spec, name))
        if np.any(arr < 0):
            idx = tuple(int(i) for i in np.argwhere(arr < 0)[0])
            raise ModelValidationError(f"negative reward: {name}{list(idx)} = {arr[idx]}")
    if spec.r_max <= 0:
        raise ModelValidationError("r_max must be positive")
    return spec


def save_model(spec: ModelSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1))


def load_model(path: str | Path) -> ModelSpec:
    return validate_model(ModelSpec.from_dict(json.loads(Path(path).read_text())))


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalPolicy:
    """Shared local policy, ``dist[s_l, s_g]`` is a distribution over ``A_l``."""

    dist: np.ndarray

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=float)
        if dist.ndim != 3:
            raise ValueError("local policy table must have shape (n_sl, n_sg, n_al)")
        _check_rows("local policy", dist)
        object.__setattr__(self, "dist", dist)

    @property
    def deterministic(self) -> bool:
        return bool(np.all((self.dist == 0.0) | (self.dist == 1.0)))

    @classmethod
    def uniform(cls, n_sl: int, n_sg: int, n_al: int) -> "LocalPolicy":
        return cls(np.full((n_sl, n_sg, n_al), 1.0 / n_al))

    @classmethod
    def from_actions(cls, actions: np.ndarray, n_al: int) -> "LocalPolicy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(n_al)[actions])

    def actions(self) -> np.ndarray:
        """Greedy action per ``(s_l, s_g)`` (lowest index on ties)."""
        return self.dist.argmax(axis=-1)


@dataclass(frozen=True)
class Histogram:
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError("histogram counts must be non-negative")
        if sum(counts) < 1:
            raise ValueError("histogram needs k >= 1")
        object.__setattr__(self, "counts", counts)

    @property
    def k(self) -> int:
        return sum(self.counts)

    @property
    def frequencies(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.k


def histogram_of(states: Sequence[int], n_sl: int) -> Histogram:
    """Count how many of the sampled agents sit in each local state."""
    if len(states) == 0:
        raise ValueError("need at least one sampled state (k >= 1)")
    counts = [0] * n_sl
    for s in states:
        if not 0 <= s < n_sl:
            raise ValueError(f"local state {s} out of range for n_sl={n_sl}")
        counts[s] += 1
    return Histogram(tuple(counts))


def tv_distance(f1, f2) -> float:
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    if f1.shape != f2.shape:
        raise ValueError(f"length mismatch: {f1.shape} vs {f2.shape}")
    for f in (f1, f2):
        if np.any(f < -ROW_TOL) or abs(f.sum() - 1.0) > 1e-9:
            raise ValueError("tv_distance expects probability vectors")
    return 0.5 * float(np.abs(f1 - f2).sum())


def _compositions(k: int, parts: int):
    if parts == 1:
        yield (k,)
        return
    for first in range(k, -1, -1):
        for rest in _compositions(k - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def _histogram_table(k: int, n_sl: int) -> np.ndarray:
    table = np.array(list(_compositions(k, n_sl)), dtype=np.int64)
    table.setflags(write=False)
    return table


def enumerate_histograms(k: int, n_sl: int) -> list[Histogram]:
    """All compositions of ``k`` into ``n_sl`` bins.

    Ordered lexicographically by decreasing count in the first bin, then the
    second, and so on: ``k=2, n_sl=2`` gives ``(2,0), (1,1), (0,2)``.
    """
    if k < 1 or n_sl < 1:
        raise ValueError("need k >= 1 and n_sl >= 1")
    return [Histogram(tuple(row)) for row in _histogram_table(k, n_sl)]


def n_histograms(k: int, n_sl: int) -> int:
    return math.comb(k + n_sl - 1, n_sl - 1)


# ---------------------------------------------------------------------------
# Key spaces: how a sampled k-tuple of local states indexes a table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeySpace:
    """Index set for subsampled tables.

    Standard keys are k-tuples in row-major order (first agent most
    significant).  Mean-field keys are histograms in
    :func:`enumerate_histograms` order.
    """

    parameterization: Parameterization
    k: int
    n_sl: int
    counts: np.ndarray = field(repr=False, compare=False, default=None)
    _codes: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.parameterization is Parameterization.STANDARD:
            tuples = np.array(list(itertools.product(range(self.n_sl), repeat=self.k)), dtype=np.int64)
            counts = np.stack([(tuples == s).sum(axis=1) for s in range(self.n_sl)], axis=1)
            object.__setattr__(self, "counts", counts)
            object.__setattr__(self, "tuples", tuples)
        else:
            counts = np.array(_histogram_table(self.k, self.n_sl))
            object.__setattr__(self, "counts", counts)
            codes = self._encode_counts(counts)
            order = np.argsort(codes)
            object.__setattr__(self, "_codes", codes)
            object.__setattr__(self, "_order", order)
            object.__setattr__(self, "_sorted_codes", codes[order])
            # canonical tuple: agents sorted by state
            tuples = np.array([np.repeat(np.arange(self.n_sl), row) for row in counts], dtype=np.int64)
            object.__setattr__(self, "tuples", tuples.reshape(len(counts), self.k))
            object.__setattr__(self, "_lookup", {tuple(int(c) for c in row): i for i, row in enumerate(counts)})

    @property
    def size(self) -> int:
        return len(self.counts)

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.k

    def _encode_counts(self, counts: np.ndarray) -> np.ndarray:
        radix = (self.k + 1) ** np.arange(self.n_sl, dtype=np.int64)
        return np.asarray(counts, dtype=np.int64) @ radix

    def index_of_counts(self, counts: np.ndarray) -> np.ndarray:
        """Vectorised histogram -> key index (mean-field only)."""
        if self.parameterization is not Parameterization.MEAN_FIELD:
            raise ValueError("index_of_counts needs the mean-field parameterization")
        codes = self._encode_counts(counts)
        pos = np.searchsorted(self._sorted_codes, codes)
        return self._order[pos]

    def index_of_tuples(self, tuples: np.ndarray) -> np.ndarray:
        """Vectorised key index for an array of k-tuples, shape ``(..., k)``."""
        tuples = np.asarray(tuples, dtype=np.int64)
        if self.parameterization is Parameterization.STANDARD:
            radix = self.n_sl ** np.arange(self.k - 1, -1, -1, dtype=np.int64)
            return tuples @ radix
        counts = np.stack([(tuples == s).sum(axis=-1) for s in range(self.n_sl)], axis=-1)
        return self.index_of_counts(counts)

    def key_of(self, states: Sequence[int]) -> int:
        states = np.asarray(states, dtype=np.int64)
        if len(states) != self.k:
            raise ValueError(f"expected {self.k} states, got {len(states)}")
        if self.parameterization is Parameterization.STANDARD:
            return int(np.ravel_multi_index(tuple(states), (self.n_sl,) * self.k))
        if states.min() < 0 or states.max() >= self.n_sl:
            raise ValueError(f"local states must lie in [0, {self.n_sl})")
        return self._lookup[tuple(np.bincount(states, minlength=self.n_sl).tolist())]


@lru_cache(maxsize=64)
def key_space(parameterization: Parameterization, k: int, n_sl: int) -> KeySpace:
    return KeySpace(Parameterization(parameterization), k, n_sl)


@dataclass(frozen=True)
class GlobalPolicy:
    """Global policy over ``(s_g, key)``; ``dist`` has shape ``(n_sg, n_keys, n_ag)``."""

    parameterization: Parameterization
    k: int
    dist: np.ndarray

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=float)
        object.__setattr__(self, "parameterization", Parameterization(self.parameterization))
        _check_rows("global policy", dist)
        object.__setattr__(self, "dist", dist)

    @property
    def keys(self) -> KeySpace:
        return key_space(self.parameterization, self.k, self.n_sl)

    @property
    def n_sl(self) -> int:
        # recover |S_l| from the key-count
        n_keys = self.dist.shape[1]
        if self.parameterization is Parameterization.STANDARD:
            return int(round(n_keys ** (1.0 / self.k)))
        n = 1
        while n_histograms(self.k, n) < n_keys:
            n += 1
        return n

    @property
    def deterministic(self) -> bool:
        return bool(np.all((self.dist == 0.0) | (self.dist == 1.0)))

    @classmethod
    def uniform(cls, parameterization, k: int, n_sg: int, n_sl: int, n_ag: int) -> "GlobalPolicy":
        ks = key_space(Parameterization(parameterization), k, n_sl)
        return cls(parameterization, k, np.full((n_sg, ks.size, n_ag), 1.0 / n_ag))

    @classmethod
    def from_actions(cls, parameterization, k: int, actions: np.ndarray, n_ag: int) -> "GlobalPolicy":
        return cls(parameterization, k, np.eye(n_ag)[np.asarray(actions, dtype=int)])

    def probs(self, s_g: int, states: Sequence[int]) -> np.ndarray:
        return self.dist[s_g, self.keys.key_of(states)]


# ---------------------------------------------------------------------------
# Policy-induced quantities
# ---------------------------------------------------------------------------


def policy_guided_kernel(pl: np.ndarray, pi_l: LocalPolicy) -> np.ndarray:
    """Local kernel with the action marginalised under ``pi_l``.

    Returns ``probs[s_l, s_g, s_l']``.
    """
    pl = np.asarray(pl)
    if pl.shape[:3] != pi_l.dist.shape:
        raise ValueError(f"dimension mismatch: kernel {pl.shape} vs policy {pi_l.dist.shape}")
    return np.einsum("xga,xgay->xgy", pi_l.dist, pl)


def surrogate_local_reward(rl: np.ndarray, pi_l: LocalPolicy) -> np.ndarray:
    """Expected local reward under ``pi_l``, shape ``(n_sl, n_sg)``."""
    rl = np.asarray(rl)
    if rl.shape != pi_l.dist.shape:
        raise ValueError(f"dimension mismatch: rewards {rl.shape} vs policy {pi_l.dist.shape}")
    return np.einsum("xga,xga->xg", pi_l.dist, rl)


def choose_parameterization(n_sl: int, k: int) -> Parameterization:
    """Standard iff ``n_sl**k <= n_sl * k**n_sl`` (compared in log space)."""
    if n_sl < 1 or k < 1:
        raise ValueError("need n_sl >= 1 and k >= 1")
    lhs = k * math.log(n_sl)
    rhs = math.log(n_sl) + n_sl * math.log(k)
    # exact integer comparison when the log gap is too small to trust
    if abs(lhs - rhs) < 1e-9:
        return Parameterization.STANDARD if n_sl**k <= n_sl * k**n_sl else Parameterization.MEAN_FIELD
    return Parameterization.STANDARD if lhs <= rhs else Parameterization.MEAN_FIELD
