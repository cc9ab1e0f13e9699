"""Finite-horizon mean-field games: exact solvers, deep OMD/FP learners and an experiment harness."""

from .core import EnvModel, TabularPolicy, ValidationError, forward_step, induce_flow, rollout
from .exact import exploitability, fp_run, omd_run, munchausen_tabular_run, theorem1_check

__all__ = [
    "EnvModel",
    "TabularPolicy",
    "ValidationError",
    "exploitability",
    "forward_step",
    "fp_run",
    "induce_flow",
    "munchausen_tabular_run",
    "omd_run",
    "rollout",
    "theorem1_check",
]
__version__ = "0.1.0"
