"""Warehouse dispatch benchmark.

A dispatcher (global agent) picks which of ``z`` zones gets priority and
robots (local agents) choose to stay, move up or move down a zone.  Both
kernels are row softmaxes of hand-set logits; robots earn most when they sit
in the prioritised zone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, validate_model

#: local action indices
STAY, UP, DOWN = 0, 1, 2


@dataclass(frozen=True)
class WarehouseParams:
    n_zones: int = 5
    n_agents: int = 1000
    gamma: float = 0.95
    # global logits: toward action, stay, baseline
    w_global: tuple[float, float, float] = (3.0, 0.5, 0.1)
    # local logits: stay, toward target, toward priority zone, baseline
    w_local: tuple[float, float, float, float] = (3.5, 1.5, 0.3, 0.1)
    aligned_reward: float = 10.0
    misaligned_scale: float = 2.0
    global_reward_peak: float = 4.0
    bonuses: tuple[float, float, float] = (0.0, 0.5, -0.3)
    dirichlet_alpha: float = 0.3
    #: add ``-min(bonuses)`` to every local reward so rewards are non-negative
    shift_rewards: bool = True

    def __post_init__(self):
        if self.n_zones < 2:
            raise ValueError("n_zones must be >= 2")
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if min(self.w_global) <= 0 or min(self.w_local) <= 0:
            raise ValueError("logit weights must be positive")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")

    @property
    def reward_shift(self) -> float:
        return max(0.0, -min(self.bonuses)) if self.shift_rewards else 0.0


def circular_distance(i: int, j: int, z: int) -> int:
    if not (0 <= i < z and 0 <= j < z):
        raise ValueError(f"zones ({i}, {j}) out of range for z={z}")
    d = abs(i - j)
    return min(d, z - d)


def target_zone(s: int, a: int, z: int) -> int:
    """Zone a robot heads for: stay, ``s+1`` or ``s-1`` (mod z)."""
    return (s, (s + 1) % z, (s - 1) % z)[a]


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def global_logits(params: WarehouseParams) -> np.ndarray:
    """``d[s_g, a_g, s_g']`` logits."""
    z = params.n_zones
    w_act, w_stay, w_base = params.w_global
    eye = np.eye(z)
    return w_act * eye[None, :, :] + w_stay * eye[:, None, :] + w_base


def local_logits(params: WarehouseParams) -> np.ndarray:
    """``f[s_l, s_g, a_l, s_l']`` logits."""
    z = params.n_zones
    w_stay, w_target, w_prio, w_base = params.w_local
    f = np.full((z, z, 3, z), w_base)
    for s in range(z):
        f[s, :, :, s] += w_stay
        for a in range(3):
            f[s, :, a, target_zone(s, a, z)] += w_target
        for g in range(z):
            f[s, g, :, g] += w_prio
    return f


def base_reward(s_l: int, s_g: int, params: WarehouseParams) -> float:
    if s_l == s_g:
        return params.aligned_reward
    return params.misaligned_scale / (1.0 + circular_distance(s_l, s_g, params.n_zones))


def local_reward(s_l: int, s_g: int, a_l: int, params: WarehouseParams) -> float:
    """Unshifted local reward ``base(s_l, s_g) + bonus(a_l)``."""
    z = params.n_zones
    if not (0 <= s_l < z and 0 <= s_g < z and 0 <= a_l < 3):
        raise ValueError(f"index out of range: ({s_l}, {s_g}, {a_l})")
    return base_reward(s_l, s_g, params) + params.bonuses[a_l]


def global_reward(s_g: int, a_g: int, params: WarehouseParams) -> float:
    return params.global_reward_peak - abs(s_g - a_g)


def build_warehouse(params: WarehouseParams | None = None) -> ModelSpec:
    params = WarehouseParams() if params is None else params
    z = params.n_zones
    pg = softmax_rows(global_logits(params))
    pl = softmax_rows(local_logits(params))
    rg = np.array([[global_reward(g, a, params) for a in range(z)] for g in range(z)])
    rl = np.array(
        [[[local_reward(s, g, a, params) for a in range(3)] for g in range(z)] for s in range(z)]
    )
    rl = rl + params.reward_shift
    spec = ModelSpec(
        n_agents=params.n_agents,
        n_sg=z,
        n_sl=z,
        n_ag=z,
        n_al=3,
        gamma=params.gamma,
        pg=pg,
        pl=pl,
        rg=rg,
        rl=rl,
        reward_shift=params.reward_shift,
    )
    if params.shift_rewards or min(params.bonuses) >= 0:
        return validate_model(spec)
    return spec


def dirichlet_init(n_agents: int, alpha: float, n_zones: int, rng: np.random.Generator) -> np.ndarray:
    """Zones of ``n_agents`` robots drawn i.i.d. from one Dirichlet(alpha) draw."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    probs = rng.dirichlet(np.full(n_zones, alpha))
    return rng.choice(n_zones, size=n_agents, p=probs)
