"""Alternating best-response dynamics for the global and local agents.

Each iteration first lets the global agent propose a best response to the
incumbent local policy (subsampled Q-learning), then lets the shared local
policy propose a best response to the (possibly updated) global policy
(chained episodic MDP solved by UCFH).  Every proposal is scored by the
common Monte-Carlo evaluator and filtered through :func:`update_rule`:

* accept when the new value beats the incumbent by more than ``2 eta``;
* reject when it falls short by more than ``2 eta``;
* otherwise stop, since neither player can improve by more than the
  tolerance and the incumbent pair is an approximate equilibrium.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .chained import (
    ExtractionReport,
    TaggedAgentEnv,
    build_chained,
    effective_horizon,
    extract_from_tagged,
    extract_local_policy,
)
from .episodic import stochastic_policy_value
from .execution import EvalReport, InitialSampler, PolicyPair, evaluate, iid_initial
from .glearn import GLearnConfig, default_t_iters, g_learn
from .model import GlobalPolicy, LocalPolicy, ModelSpec, choose_parameterization
from .ucfh import UcfhConfig, sample_episode, ucfh


class Decision(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    TERMINATE = "terminate"


# ---------------------------------------------------------------------------
# Tolerance, update rule and iteration budgets
# ---------------------------------------------------------------------------


def tolerance_eta(k: int, gamma: float, r_tilde: float, n_sl: int, n_ag: int) -> float:
    """``2 r / (1-gamma)^2 * (sqrt(ln(2 n_sl n_ag sqrt(k)) / (2k)) + 5 / sqrt(k))``."""
    if k < 1 or n_sl < 1 or n_ag < 1:
        raise ValueError("k, n_sl and n_ag must be >= 1")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if r_tilde < 0:
        raise ValueError("r_tilde must be non-negative")
    log_term = math.log(2.0 * n_sl * n_ag * math.sqrt(k))
    return 2.0 * r_tilde / (1.0 - gamma) ** 2 * (math.sqrt(log_term / (2.0 * k)) + 5.0 / math.sqrt(k))


def update_rule(v_new, v_old, eta: float) -> Decision:
    """Compare value estimates coordinate-wise with tolerance ``2 eta``.

    Scalars are treated as one-coordinate arrays.
    """
    v_new = np.atleast_1d(np.asarray(v_new, dtype=float))
    v_old = np.atleast_1d(np.asarray(v_old, dtype=float))
    if v_new.shape != v_old.shape:
        raise ValueError(f"value shapes differ: {v_new.shape} vs {v_old.shape}")
    if eta <= 0:
        raise ValueError("eta must be positive")
    if np.all(v_new > v_old + 2.0 * eta):
        return Decision.ACCEPT
    if np.any(v_new < v_old - 2.0 * eta):
        return Decision.REJECT
    return Decision.TERMINATE


def nsteps_theorem(n_sg: int, n_sl: int, n_ag: int, n_al: int, k: int) -> int:
    """``2 |S_g|^2 |A_g| |A_l| min(|S_l|^2 k^|S_g|, |S_l|^(k+1))``."""
    return 2 * n_sg**2 * n_ag * n_al * min(n_sl**2 * k**n_sg, n_sl ** (k + 1))


def nsteps_potential(n_sg: int, n_sl: int, n_ag: int, n_al: int, k: int, eta: float, r_tilde: float, gamma: float) -> float:
    """Potential-ascent bound ``min(r / (eta (1-gamma)), 2|S_g|^2|S_l|^2 k^|S_l| |A_g||A_l|, |S_g|^2 |S_l|^(k+1) |A_g||A_l|)``."""
    counting = min(
        2 * n_sg**2 * n_sl**2 * k**n_sl * n_ag * n_al,
        n_sg**2 * n_sl ** (k + 1) * n_ag * n_al,
    )
    return min(r_tilde / (eta * (1.0 - gamma)), float(counting))


# ---------------------------------------------------------------------------
# Local best response
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LLearnConfig:
    """Knobs of the chained-MDP + UCFH local learner.

    ``ucfh_m`` replaces UCFH's theoretical batch size and ``max_episodes``
    caps its sample budget.  Chains with more than ``dense_max_states``
    reachable micro states fall back to the tagged-agent simulator, which
    rolls ``extract_episodes`` episodes of the learned policy to weight the
    projection and to estimate its value.  ``reward_scale`` multiplies the
    ``1/n``-scaled local reward (``None`` means ``n``, i.e. the unscaled
    local reward).
    """

    ucfh_m: int = 8
    max_episodes: int = 300
    dense_max_states: int = 2000
    extract_episodes: int = 50
    reward_scale: float | None = None

    def __post_init__(self):
        if self.ucfh_m < 1 or self.max_episodes < 1 or self.extract_episodes < 1:
            raise ValueError("ucfh_m, max_episodes and extract_episodes must be >= 1")
        if self.dense_max_states < 1:
            raise ValueError("dense_max_states must be >= 1")


@dataclass
class LLearnReport:
    value: float  # value of the projected policy in the proxy MDP
    path: str  # "dense" or "tagged"
    epsilon: float
    horizon: int  # macro steps
    episodes: int
    stop_reason: str
    extraction: ExtractionReport


def local_epsilon(k: int) -> float:
    return 1.0 / math.sqrt(k)


def l_learn(
    model: ModelSpec,
    pi_g: GlobalPolicy,
    k: int,
    delta_l: float,
    rng: np.random.Generator,
    *,
    incumbent: LocalPolicy | None = None,
    initial: InitialSampler | None = None,
    cfg: LLearnConfig | None = None,
) -> tuple[LocalPolicy, LLearnReport]:
    """Best-response local policy against a fixed global policy.

    Builds the chained proxy MDP matching the global policy's key space,
    truncated at the effective horizon for ``eps = 1/sqrt(k)``, runs UCFH on
    it and projects the learned micro policy onto a shared local policy.
    When the dense chain is too large, UCFH runs on :class:`TaggedAgentEnv`
    instead, with the other sampled agents following ``incumbent``.
    """
    cfg = LLearnConfig() if cfg is None else cfg
    if pi_g.k != k:
        raise ValueError(f"global policy uses k={pi_g.k}, asked for k={k}")
    if pi_g.parameterization is not choose_parameterization(model.n_sl, k):
        raise ValueError("global policy key space does not follow the parameterization rule")
    eps = min(1.0, local_epsilon(k))
    scale = float(model.n_agents if cfg.reward_scale is None else cfg.reward_scale)
    r_inf = model.rl_max * scale / model.n_agents
    if model.n_al == 1:
        pi = LocalPolicy.from_actions(np.zeros((model.n_sl, model.n_sg), dtype=np.int64), 1)
        return pi, LLearnReport(float("nan"), "trivial", eps, 0, 0, "trivial", ExtractionReport([], [], 0.0))
    H = effective_horizon(model.gamma, eps, r_inf) if r_inf > 0 else 1
    ucfg = UcfhConfig(epsilon=eps, delta=delta_l, m_override=cfg.ucfh_m, max_episodes=cfg.max_episodes)
    try:
        chain = build_chained(model, pi_g, H, reward_scale=scale, max_states=cfg.dense_max_states)
    except MemoryError:
        chain = None
    if chain is not None:
        result = ucfh(chain.mdp, ucfg, rng)
        pi_l, report = extract_local_policy(result.policy, chain, n_al=model.n_al)
        value = stochastic_policy_value(chain.mdp, chain.local_policy_table(pi_l))
        return pi_l, LLearnReport(value, "dense", eps, H, result.episodes, result.stop_reason, report)

    incumbent = LocalPolicy.uniform(model.n_sl, model.n_sg, model.n_al) if incumbent is None else incumbent
    if initial is None:
        initial = iid_initial(np.full(model.n_sg, 1.0 / model.n_sg), np.full(model.n_sl, 1.0 / model.n_sl), model.n_agents)
    env = TaggedAgentEnv(model, pi_g, incumbent, H, initial, reward_scale=scale)
    result = ucfh(env, ucfg, rng)
    visits = np.zeros((H, env.n_states))
    for _ in range(cfg.extract_episodes):
        ep = sample_episode(env, result.policy, None, rng)
        visits[np.arange(H), ep.states[:H]] += 1.0
    pi_l, report = extract_from_tagged(result.policy, env, visits)
    stationary = np.broadcast_to(pi_l.actions().reshape(-1), (H, env.n_states))
    value = float(np.mean([sample_episode(env, stationary, None, rng).ret for _ in range(cfg.extract_episodes)]))
    return pi_l, LLearnReport(value, "tagged", eps, H, result.episodes, result.stop_reason, report)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlternatingConfig:
    """Settings of one alternating best-response run.

    ``eta`` overrides the tolerance; the formula value is always computed
    and recorded in the trace.  ``t_iters`` overrides the number of
    Q-learning sweeps.  Every proposal is scored by ``eval_rollouts``
    rollouts of length ``eval_horizon`` seeded with ``eval_seed`` (``seed``
    when omitted), so all comparisons share common random numbers.
    """

    k: int
    m: int
    n_steps: int = 10
    delta: float = 0.1
    eta: float | None = None
    seed: int = 0
    t_iters: int | None = None
    eval_horizon: int = 100
    eval_rollouts: int = 50
    eval_seed: int | None = None
    local: LLearnConfig = field(default_factory=LLearnConfig)

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ValueError("k and m must be >= 1")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.t_iters is not None and self.t_iters < 0:
            raise ValueError("t_iters must be >= 0")
        if self.eval_horizon < 1 or self.eval_rollouts < 1:
            raise ValueError("eval_horizon and eval_rollouts must be >= 1")

    @property
    def delta_learn(self) -> float:
        return self.delta / (4.0 * self.n_steps)

    def t_iters_for(self, model: ModelSpec) -> int:
        return default_t_iters(model.gamma, model.r_max, self.k) if self.t_iters is None else self.t_iters

    def eta_formula(self, model: ModelSpec) -> float:
        return tolerance_eta(self.k, model.gamma, model.r_max, model.n_sl, model.n_ag)

    def eta_for(self, model: ModelSpec) -> float:
        return self.eta_formula(model) if self.eta is None else float(self.eta)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    proposer: str  # "global" or "local"
    decision: Decision
    v_old: float
    v_new: float
    eta: float
    seconds: float


TRACE_COLUMNS = ("iteration", "proposer", "decision", "v_old", "v_new", "eta", "seconds")


@dataclass
class DynamicsTrace:
    """Every decision of a run plus the run-level constants."""

    eta: float
    eta_formula: float
    nsteps_theorem: int
    nsteps_potential: float
    records: list[TraceRecord] = field(default_factory=list)
    termination: str = "n_steps"  # "nash" when the update rule stopped the run
    initial_value: float = float("nan")
    final_value: float = float("nan")

    @property
    def iterations(self) -> int:
        return max((r.iteration for r in self.records), default=0)

    def accepted_values(self) -> list[float]:
        return [r.v_new for r in self.records if r.decision is Decision.ACCEPT]

    def to_text(self, sep: str = "\t") -> str:
        lines = [sep.join(TRACE_COLUMNS)]
        for r in self.records:
            row = (r.iteration, r.proposer, r.decision.value, f"{r.v_old:.10g}", f"{r.v_new:.10g}", f"{r.eta:.10g}", f"{r.seconds:.3f}")
            lines.append(sep.join(str(x) for x in row))
        return "\n".join(lines) + "\n"


def alternating_marl(
    model: ModelSpec,
    cfg: AlternatingConfig,
    rng: np.random.Generator | None = None,
    *,
    initial: InitialSampler | None = None,
) -> tuple[PolicyPair, DynamicsTrace]:
    """Run alternating best responses from uniform policies.

    ``initial`` draws the joint start state used both by the evaluator and
    by the tagged-agent local learner; it defaults to uniform i.i.d. states.
    """
    if cfg.k > model.n_agents:
        raise ValueError(f"k={cfg.k} exceeds n_agents={model.n_agents}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if initial is None:
        initial = iid_initial(np.full(model.n_sg, 1.0 / model.n_sg), np.full(model.n_sl, 1.0 / model.n_sl), model.n_agents)
    par = choose_parameterization(model.n_sl, cfg.k)
    eta = cfg.eta_for(model)
    trace = DynamicsTrace(
        eta=eta,
        eta_formula=cfg.eta_formula(model),
        nsteps_theorem=nsteps_theorem(model.n_sg, model.n_sl, model.n_ag, model.n_al, cfg.k),
        nsteps_potential=nsteps_potential(
            model.n_sg, model.n_sl, model.n_ag, model.n_al, cfg.k, eta, model.r_max, model.gamma
        ),
    )
    eval_seed = cfg.seed if cfg.eval_seed is None else cfg.eval_seed

    def score(pair: PolicyPair) -> EvalReport:
        return evaluate(model, pair, cfg.eval_horizon, cfg.eval_rollouts, initial, eval_seed)

    pi_g = GlobalPolicy.uniform(par, cfg.k, model.n_sg, model.n_sl, model.n_ag)
    pi_l = LocalPolicy.uniform(model.n_sl, model.n_sg, model.n_al)
    trace.initial_value = score(PolicyPair(pi_g, pi_l)).mean_return
    gcfg = GLearnConfig(k=cfg.k, m=cfg.m, t_iters=cfg.t_iters_for(model), seed=cfg.seed)
    v_old = 0.0

    def decide(t, proposer, pair, started):
        report = score(pair)
        decision = update_rule(report.mean_return, v_old, eta)
        trace.records.append(TraceRecord(t, proposer, decision, v_old, report.mean_return, eta, time.monotonic() - started))
        return decision, report.mean_return

    for t in range(1, cfg.n_steps + 1):
        started = time.monotonic()
        cand_g, _, _ = g_learn(model, pi_l, gcfg, rng, parameterization=par)
        decision, v_new = decide(t, "global", PolicyPair(cand_g, pi_l), started)
        if decision is Decision.TERMINATE:
            trace.termination = "nash"
            break
        if decision is Decision.ACCEPT:
            pi_g, v_old = cand_g, v_new

        started = time.monotonic()
        cand_l, _ = l_learn(
            model, pi_g, cfg.k, cfg.delta_learn, rng, incumbent=pi_l, initial=initial, cfg=cfg.local
        )
        decision, v_new = decide(t, "local", PolicyPair(pi_g, cand_l), started)
        if decision is Decision.TERMINATE:
            trace.termination = "nash"
            break
        if decision is Decision.ACCEPT:
            pi_l, v_old = cand_l, v_new

    pair = PolicyPair(pi_g, pi_l)
    trace.final_value = score(pair).mean_return
    return pair, trace
