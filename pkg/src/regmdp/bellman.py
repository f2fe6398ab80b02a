"""Regularized Bellman operators, greediness and exact value computation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, ShapeError, SolveError
from .mdp import TabularMdp, check_policy, induced_dynamics, q_from_v
from .regularizers import (
    Regularizer,
    conjugate_value,
    greedy_distribution,
    omega_value,
)

MAX_ITERATIONS = 10**6


@dataclass(frozen=True)
class EvalContext:
    mdp: TabularMdp
    reg: Regularizer

    def __post_init__(self):
        anchor = self.reg.anchor
        if anchor is not None and anchor.shape[-1] != self.mdp.n_actions:
            raise ShapeError("regularizer anchor and MDP disagree on the number of actions")
        if anchor is not None and anchor.ndim == 2 and anchor.shape[0] != self.mdp.n_states:
            raise ShapeError("regularizer anchor and MDP disagree on the number of states")

    def with_reg(self, reg: Regularizer) -> "EvalContext":
        return EvalContext(self.mdp, reg)


def eval_operator(ctx: EvalContext, pi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``[T_{pi,Omega} v](s) = <pi_s, q_s> - Omega(pi_s)``."""
    pi = check_policy(ctx.mdp, pi)
    q = q_from_v(ctx.mdp, v)
    return np.einsum("sa,sa->s", pi, q) - omega_value(ctx.reg, pi)


def opt_operator(ctx: EvalContext, v: np.ndarray) -> np.ndarray:
    """``[T_{*,Omega} v](s) = Omega*(q_s)``."""
    return conjugate_value(ctx.reg, q_from_v(ctx.mdp, v))


def greedy_policy(ctx: EvalContext, v: np.ndarray) -> np.ndarray:
    """``G_Omega(v) = grad Omega*(q)`` state-wise."""
    return greedy_distribution(ctx.reg, q_from_v(ctx.mdp, v))


def _solve(mdp: TabularMdp, P_pi: np.ndarray, reward: np.ndarray) -> np.ndarray:
    A = np.eye(mdp.n_states) - mdp.gamma * P_pi
    try:
        v = np.linalg.solve(A, reward)
    except np.linalg.LinAlgError as exc:
        raise SolveError(str(exc)) from exc
    if not np.all(np.isfinite(v)):
        raise SolveError("policy evaluation produced non-finite values")
    return v


def policy_value(ctx: EvalContext, pi: np.ndarray) -> np.ndarray:
    """``v_{pi,Omega} = (I - gamma P_pi)^{-1} (r_pi - Omega(pi))`` by a dense solve."""
    pi = check_policy(ctx.mdp, pi)
    r_pi, P_pi = induced_dynamics(ctx.mdp, pi)
    return _solve(ctx.mdp, P_pi, r_pi - omega_value(ctx.reg, pi))


def iterate_eval(ctx: EvalContext, pi: np.ndarray, v: np.ndarray, m: int | None) -> np.ndarray:
    """``(T_{pi,Omega})^m v``; ``m=None`` means infinitely many applications."""
    if m is None:
        return policy_value(ctx, pi)
    pi = check_policy(ctx.mdp, pi)
    r_pi, P_pi = induced_dynamics(ctx.mdp, pi)
    reward = r_pi - omega_value(ctx.reg, pi)
    gamma = ctx.mdp.gamma
    v = np.asarray(v, dtype=float)
    for _ in range(m):
        v = reward + gamma * (P_pi @ v)
    return v


def optimal_value(ctx: EvalContext, tol: float = 1e-10, v0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Regularized value iteration to ``||v - v_{*,Omega}||_inf <= tol``.

    Stops once the residual is at most ``tol * (1 - gamma)``; the contraction
    then guarantees the stated accuracy. Returns ``(v, greedy_policy(v))``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    v = np.zeros(ctx.mdp.n_states) if v0 is None else np.asarray(v0, dtype=float)
    threshold = tol * (1.0 - ctx.mdp.gamma)
    for _ in range(MAX_ITERATIONS):
        nxt = opt_operator(ctx, v)
        residual = np.max(np.abs(nxt - v))
        v = nxt
        if residual <= threshold:
            return v, greedy_policy(ctx, v)
    raise NonConvergence(f"no convergence after {MAX_ITERATIONS} iterations")


def solve_reference(ctx: EvalContext, tol: float = 1e-10, max_polish: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Optimal value and policy for use as a reference in bound checks.

    Value iteration to ``tol`` followed by policy-iteration polishing: the
    returned value is the exact (solved) value of the returned policy, which
    can only move it closer to the optimum.
    """
    v, pi = optimal_value(ctx, tol)
    best = policy_value(ctx, pi)
    for _ in range(max_polish):
        pi_next = greedy_policy(ctx, best)
        v_next = policy_value(ctx, pi_next)
        if np.all(v_next <= best + 1e-15 * np.maximum(1.0, np.abs(best))):
            break
        best, pi = v_next, pi_next
    return best, pi
