"""Tabular regularized MDPs: operators, DP schemes with error injection, bound checkers."""

from .bellman import (
    EvalContext,
    eval_operator,
    greedy_policy,
    opt_operator,
    optimal_value,
    policy_value,
)
from .errors import (
    ConfigError,
    DomainError,
    NonConvergence,
    ParseError,
    RangeError,
    RegMdpError,
    ShapeError,
    SolveError,
    StochasticityError,
    SupportError,
    UnsupportedRegularizer,
)
from .mdp import TabularMdp, generate_garnet, make_mdp, parse_mdp, q_from_v, serialize_mdp
from .regularizers import (
    Regularizer,
    bregman_value,
    conjugate_value,
    greedy_distribution,
    omega_value,
    simplex_project,
)
from .schemes import ErrorModel, IterationTrace, SchemeConfig, run_scheme

__version__ = "0.1.0"
