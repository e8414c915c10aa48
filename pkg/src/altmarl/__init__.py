"""Subsampled Q-learning and alternating best responses for global/local Markov games."""

from .alternating import (
    AlternatingConfig,
    Decision,
    DynamicsTrace,
    LLearnConfig,
    alternating_marl,
    l_learn,
    tolerance_eta,
    update_rule,
)
from .chained import TaggedAgentEnv, build_chained, effective_horizon, extract_local_policy
from .episodic import EpisodicMDP, exact_finite_horizon_dp
from .execution import EvalReport, PolicyPair, Trajectory, evaluate, execute
from .glearn import GLearnConfig, QTable, ValueTable, g_learn, solve_exact
from .harness import ResultRecord, RunConfig, emit_results, occupancy_trace, run_experiment
from .model import (
    GlobalPolicy,
    KeySpace,
    LocalPolicy,
    ModelSpec,
    ModelValidationError,
    Parameterization,
    choose_parameterization,
    load_model,
    save_model,
    validate_model,
)
from .ucfh import UcfhConfig, ucfh
from .warehouse import WarehouseParams, build_warehouse

__version__ = "0.1.0"

__all__ = [
    "AlternatingConfig",
    "Decision",
    "DynamicsTrace",
    "EpisodicMDP",
    "EvalReport",
    "GLearnConfig",
    "GlobalPolicy",
    "KeySpace",
    "LLearnConfig",
    "LocalPolicy",
    "ModelSpec",
    "ModelValidationError",
    "Parameterization",
    "PolicyPair",
    "QTable",
    "ResultRecord",
    "RunConfig",
    "TaggedAgentEnv",
    "Trajectory",
    "UcfhConfig",
    "ValueTable",
    "WarehouseParams",
    "alternating_marl",
    "build_chained",
    "build_warehouse",
    "choose_parameterization",
    "effective_horizon",
    "emit_results",
    "evaluate",
    "exact_finite_horizon_dp",
    "execute",
    "extract_local_policy",
    "g_learn",
    "l_learn",
    "load_model",
    "occupancy_trace",
    "run_experiment",
    "save_model",
    "solve_exact",
    "tolerance_eta",
    "ucfh",
    "update_rule",
    "validate_model",
]
