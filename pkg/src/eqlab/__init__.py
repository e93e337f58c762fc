"""Equilibrium learning and best-response verification for continuous multi-stage games."""

from .analytic import equilibrium_profile
from .core import Box, FunctionStrategy, MultiStageGame, RolloutBatch, Strategy, estimate_utility, rollout
from .environments import EliminationContest, SequentialAuction, StackelbergBertrand
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    MemoryBudgetError,
    NumericFaultError,
)
from .learners import SelfPlayLearner
from .metrics import MetricsReport, l2_distance, loss_in_equilibrium
from .priors import PriorModel, RiskTransform, apply_risk, sample_types
from .verifier import StepFunctionVerifier, VerifierResult, build_grid, verify

__version__ = "0.1.0"

__all__ = [
    "Box",
    "ConfigurationError",
    "ConvergenceError",
    "DomainError",
    "EliminationContest",
    "FunctionStrategy",
    "MemoryBudgetError",
    "MetricsReport",
    "MultiStageGame",
    "NumericFaultError",
    "PriorModel",
    "RiskTransform",
    "RolloutBatch",
    "SelfPlayLearner",
    "SequentialAuction",
    "StackelbergBertrand",
    "StepFunctionVerifier",
    "Strategy",
    "VerifierResult",
    "apply_risk",
    "build_grid",
    "equilibrium_profile",
    "estimate_utility",
    "l2_distance",
    "loss_in_equilibrium",
    "rollout",
    "sample_types",
    "verify",
]
