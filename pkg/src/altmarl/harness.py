"""Seeded experiment sweeps over ``(k, seed)`` cells.

A :class:`RunConfig` names an environment, the sweep grid and the training
and evaluation settings.  :func:`run_experiment` trains one joint policy per
cell with :func:`altmarl.alternating.alternating_marl`, evaluates it on the
full population and returns one :class:`ResultRecord` per cell, sorted by
``(k, seed)``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alternating import AlternatingConfig, LLearnConfig, alternating_marl
from .execution import InitialSampler, evaluate, execute, iid_initial
from .model import ModelSpec, load_model
from .warehouse import WarehouseParams, build_warehouse, dirichlet_init

RESULT_COLUMNS = ("k", "seed", "mean_return", "stderr", "train_seconds", "iterations", "termination", "mode_rate")

ENVIRONMENTS = ("warehouse", "model")
INITS = ("dirichlet", "uniform", "zone0")


@dataclass(frozen=True)
class RunConfig:
    """One experiment sweep.

    ``env`` is ``"warehouse"`` (built from ``n_zones`` and the other
    parameters) or ``"model"`` (loaded from ``model_path``, whose own
    ``n_agents`` and ``gamma`` then take precedence).  ``init`` selects the
    start distribution: Dirichlet-concentrated zones, i.i.d. uniform local
    states, or every agent in state 0; the global state starts uniform.

    ``record_timing=False`` writes ``train_seconds`` as 0 so that output
    files are a pure function of the config.
    """

    env: str = "warehouse"
    n_agents: int = 1000
    k_list: tuple = tuple(range(1, 51))
    seeds: tuple = tuple(range(15))
    m: int = 30
    n_steps: int = 10
    gamma: float = 0.95
    horizon: int = 100
    rollouts: int = 50
    eta_override: float | None = None
    out: str | None = None
    format: str = "csv"
    n_zones: int = 5
    dirichlet_alpha: float = 0.3
    init: str = "dirichlet"
    model_path: str | None = None
    delta: float = 0.1
    ucfh_m: int = 8
    ucfh_episodes: int = 1000
    record_timing: bool = True

    def __post_init__(self):
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.env not in ENVIRONMENTS:
            raise ValueError(f"env must be one of {ENVIRONMENTS}, got {self.env!r}")
        if self.env == "model" and not self.model_path:
            raise ValueError("env 'model' needs model_path")
        if not self.k_list:
            raise ValueError("k_list must not be empty")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if min(self.k_list) < 1:
            raise ValueError("every k must be >= 1")
        if self.env == "warehouse" and max(self.k_list) > self.n_agents:
            raise ValueError(f"k={max(self.k_list)} exceeds n_agents={self.n_agents}")
        if self.format not in ("csv", "json"):
            raise ValueError(f"format must be csv or json, got {self.format!r}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        for name in ("m", "n_steps", "horizon", "rollouts", "ucfh_m", "ucfh_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["k_list"], d["seeds"] = list(self.k_list), list(self.seeds)
        return d


@dataclass(frozen=True)
class ResultRecord:
    k: int
    seed: int
    mean_return: float
    stderr: float
    train_seconds: float
    iterations: int
    termination: str
    mode_rate: float


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def build_environment(cfg: RunConfig) -> ModelSpec:
    if cfg.env == "model":
        model = load_model(cfg.model_path)
        if max(cfg.k_list) > model.n_agents:
            raise ValueError(f"k={max(cfg.k_list)} exceeds the model's n_agents={model.n_agents}")
        return model
    return build_warehouse(
        WarehouseParams(n_zones=cfg.n_zones, n_agents=cfg.n_agents, gamma=cfg.gamma, dirichlet_alpha=cfg.dirichlet_alpha)
    )


def initial_sampler(cfg: RunConfig, model: ModelSpec) -> InitialSampler:
    n, n_sg, n_sl = model.n_agents, model.n_sg, model.n_sl
    if cfg.init == "uniform":
        return iid_initial(np.full(n_sg, 1.0 / n_sg), np.full(n_sl, 1.0 / n_sl), n)
    if cfg.init == "zone0":

        def draw(rng):
            return int(rng.integers(n_sg)), np.zeros(n, dtype=np.int64)

        return draw

    def draw(rng):
        return int(rng.integers(n_sg)), dirichlet_init(n, cfg.dirichlet_alpha, n_sl, rng)

    return draw


def alternating_config(cfg: RunConfig, k: int, seed: int) -> AlternatingConfig:
    return AlternatingConfig(
        k=k,
        m=cfg.m,
        n_steps=cfg.n_steps,
        delta=cfg.delta,
        eta=cfg.eta_override,
        seed=seed,
        eval_horizon=cfg.horizon,
        eval_rollouts=cfg.rollouts,
        local=LLearnConfig(ucfh_m=cfg.ucfh_m, max_episodes=cfg.ucfh_episodes),
    )


def evaluation_seed(seed: int) -> int:
    """Seed of the final evaluation, disjoint from the training evaluations."""
    return int(np.random.SeedSequence([int(seed), 1]).generate_state(1)[0])


def train(cfg: RunConfig, k: int, seed: int):
    model = build_environment(cfg)
    initial = initial_sampler(cfg, model)
    pair, trace = alternating_marl(model, alternating_config(cfg, k, seed), initial=initial)
    return model, initial, pair, trace


def run_cell(cfg: RunConfig, k: int, seed: int) -> ResultRecord:
    """Train and evaluate one cell; failures become a record, not an exception."""
    started = time.monotonic()
    try:
        model, initial, pair, trace = train(cfg, k, seed)
        seconds = round(time.monotonic() - started, 3) if cfg.record_timing else 0.0
        report = evaluate(model, pair, cfg.horizon, cfg.rollouts, initial, evaluation_seed(seed))
        return ResultRecord(k, seed, report.mean_return, report.stderr, seconds, trace.iterations, trace.termination, report.mode_rate)
    except Exception as exc:  # noqa: BLE001 - a failed cell must not sink the sweep
        seconds = round(time.monotonic() - started, 3) if cfg.record_timing else 0.0
        reason = f"failed: {type(exc).__name__}: {exc}"
        return ResultRecord(k, seed, math.nan, math.nan, seconds, 0, reason, math.nan)


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(cfg: RunConfig, jobs: int = 1) -> list[ResultRecord]:
    """Run every ``(k, seed)`` cell, ``jobs`` at a time, sorted by ``(k, seed)``."""
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    cells = [(cfg, k, s) for k in cfg.k_list for s in cfg.seeds]
    if jobs == 1:
        records = [run_cell(*c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_cell_args, cells))
    return sorted(records, key=lambda r: (r.k, r.seed))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def records_to_json(records: list[ResultRecord]) -> str:
    rows = [{k: _json_value(v) for k, v in dataclasses.asdict(r).items()} for r in records]
    return json.dumps(rows, indent=2) + "\n"


def records_from_json(text: str) -> list[ResultRecord]:
    rows = json.loads(text)
    return [ResultRecord(**{k: (math.nan if v is None else v) for k, v in row.items()}) for row in rows]


def records_to_csv(records: list[ResultRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in records:
        writer.writerow(
            [r.k, r.seed, repr(float(r.mean_return)), repr(float(r.stderr)), f"{r.train_seconds:.3f}", r.iterations, r.termination, repr(float(r.mode_rate))]
        )
    return buf.getvalue()


def emit_results(records: list[ResultRecord], path: str | Path, format: str = "csv") -> None:
    """Write records as CSV (fixed column order) or JSON (same field names)."""
    if format == "csv":
        text = records_to_csv(records)
    elif format == "json":
        text = records_to_json(records)
    else:
        raise ValueError(f"format must be csv or json, got {format!r}")
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Occupancy trace (the data behind a zone heatmap)
# ---------------------------------------------------------------------------


@dataclass
class OccupancyTrace:
    occupancy: np.ndarray  # (H, n_sl) population fractions per step
    dispatch: np.ndarray  # (H,) global actions
    modes: np.ndarray  # (H,) lowest-index population mode
    global_states: np.ndarray  # (H,)
    k: int
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def mode_rate(self) -> float:
        return float(np.mean(self.dispatch == self.modes))

    def to_csv(self) -> str:
        n_sl = self.occupancy.shape[1]
        header = ["step", "s_g"] + [f"zone_{z}" for z in range(n_sl)] + ["dispatch", "mode"]
        lines = [",".join(header)]
        for t in range(len(self.dispatch)):
            occ = [repr(float(x)) for x in self.occupancy[t]]
            lines.append(",".join([str(t), str(int(self.global_states[t]))] + occ + [str(int(self.dispatch[t])), str(int(self.modes[t]))]))
        return "\n".join(lines) + "\n"


def occupancy_trace(cfg: RunConfig, k: int, seed: int) -> OccupancyTrace:
    """Train one cell and record a single execution of the learned pair."""
    model, initial, pair, trace = train(cfg, k, seed)
    traj = execute(model, pair, cfg.horizon, initial, np.random.default_rng(evaluation_seed(seed)))
    occ = traj.histograms / model.n_agents
    return OccupancyTrace(occ, traj.global_actions, traj.modes, traj.global_states, k, seed, {"termination": trace.termination})
