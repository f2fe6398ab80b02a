"""Temporal consistency, occupancy measures, regularized policy gradient, inverse RL."""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy.special import softmax

from .bellman import EvalContext, policy_value
from .errors import DomainError, ShapeError, SolveError, SupportError, UnsupportedRegularizer
from .mdp import TabularMdp, check_policy, induced_dynamics, make_mdp, q_from_v
from .regularizers import Regularizer, conjugate_value, greedy_distribution, omega_gradient

# how the per-state preimage of the greedy map is normalized, by regularizer kind
IRL_PREIMAGE = {
    "negative_entropy": "q = scale * ln(pi), so that Omega*(q) = 0",
    "kl_uniform": "q = scale * (ln(pi) + ln|A|), so that Omega*(q) = 0",
    "tsallis": "q = scale * (pi + c) on the support and scale * (c - 1) off it, "
    "c = -(||pi||^2 + 1) / 2, so that Omega*(q) = 0",
}


def temporal_consistency_residual(mdp: TabularMdp, reg: Regularizer, v: np.ndarray, pi: np.ndarray) -> float:
    """``max_s |v - Omega*(q)| + max_s ||pi_s - grad Omega*(q_s)||_1`` with ``q = q_from_v(v)``.

    Zero exactly at the regularized optimum ``(v_{*,Omega}, pi_{*,Omega})``.
    """
    pi = check_policy(mdp, pi)
    q = q_from_v(mdp, v)
    value_res = np.max(np.abs(np.asarray(v, float) - conjugate_value(reg, q)))
    policy_res = np.max(np.sum(np.abs(pi - greedy_distribution(reg, q)), axis=1))
    return float(value_res + policy_res)


def _check_distribution(nu: np.ndarray, n: int) -> np.ndarray:
    nu = np.asarray(nu, float)
    if nu.shape != (n,):
        raise ShapeError(f"state distribution has shape {nu.shape}, expected ({n},)")
    if np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-10:
        raise DomainError("state distribution must be nonnegative and sum to one")
    return nu


def occupancy_measure(mdp: TabularMdp, pi: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """``d = (1 - gamma) nu (I - gamma P_pi)^{-1}``, a distribution over states."""
    pi = check_policy(mdp, pi)
    nu = _check_distribution(nu, mdp.n_states)
    _, P_pi = induced_dynamics(mdp, pi)
    try:
        d = (1.0 - mdp.gamma) * np.linalg.solve((np.eye(mdp.n_states) - mdp.gamma * P_pi).T, nu)
    except np.linalg.LinAlgError as exc:
        raise SolveError(str(exc)) from exc
    return d


def _softmax_policy(theta: np.ndarray, mdp: TabularMdp) -> np.ndarray:
    theta = np.asarray(theta, float)
    if theta.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeError(f"logits have shape {theta.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    if not np.all(np.isfinite(theta)):
        raise DomainError("logits must be finite")
    return softmax(theta, axis=1)


def regularized_objective(mdp: TabularMdp, reg: Regularizer, theta: np.ndarray, nu: np.ndarray) -> float:
    """``J(theta) = nu . v_{pi_theta, Omega}`` for the tabular softmax policy."""
    nu = _check_distribution(nu, mdp.n_states)
    return float(nu @ policy_value(EvalContext(mdp, reg), _softmax_policy(theta, mdp)))


def regularized_policy_gradient(mdp: TabularMdp, reg: Regularizer, theta: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Gradient of ``J`` w.r.t. softmax logits, from the occupancy-weighted formula.

    ``grad[s, b] = d(s) pi(b|s) (g(s, b) - sum_a pi(a|s) g(s, a)) / (1 - gamma)``
    with ``g = q_{pi,Omega} - dOmega/dpi`` and ``d`` the occupancy measure;
    the bracket is ``g`` contracted with the softmax score.
    """
    pi = _softmax_policy(theta, mdp)
    if np.any(pi <= 0) and reg.entropic and reg.scale > 0:
        raise DomainError("softmax underflow: entropic gradient undefined at a zero probability")
    ctx = EvalContext(mdp, reg)
    q = q_from_v(mdp, policy_value(ctx, pi))
    g = q - omega_gradient(reg, pi)
    d = occupancy_measure(mdp, pi, nu)
    centred = g - np.sum(pi * g, axis=1, keepdims=True)
    return d[:, None] * pi * centred / (1.0 - mdp.gamma)


def _mp_omega(reg: Regularizer, row: list) -> mpmath.mpf:
    if reg.scale == 0.0:
        return mpmath.mpf(0)
    if reg.bregman:
        raise UnsupportedRegularizer("high-precision objective supports base regularizers only")
    if reg.kind == "tsallis":
        val = (mpmath.fsum(p * p for p in row) - 1) / 2
    else:
        val = mpmath.fsum(p * mpmath.log(p) for p in row if p > 0)
        if reg.kind == "kl_uniform":
            val += mpmath.log(len(row))
    return mpmath.mpf(reg.scale) * val


def objective_high_precision(mdp: TabularMdp, reg: Regularizer, theta, nu, dps: int = 40) -> mpmath.mpf:
    """``J(theta)`` evaluated entirely in ``dps``-digit arithmetic (finite-difference oracle)."""
    S, A = mdp.n_states, mdp.n_actions
    with mpmath.workdps(dps):
        theta = [[mpmath.mpf(x) for x in row] for row in theta]
        pi = []
        for row in theta:
            top = max(row)
            w = [mpmath.exp(x - top) for x in row]
            z = mpmath.fsum(w)
            pi.append([x / z for x in w])
        gamma = mpmath.mpf(mdp.gamma)
        M = mpmath.matrix(S, S)
        rhs = mpmath.matrix(S, 1)
        for s in range(S):
            rhs[s] = mpmath.fsum(pi[s][a] * mpmath.mpf(mdp.rewards[s, a]) for a in range(A)) - _mp_omega(reg, pi[s])
            for t in range(S):
                p = mpmath.fsum(pi[s][a] * mpmath.mpf(mdp.transitions[s, a, t]) for a in range(A))
                M[s, t] = (1 if s == t else 0) - gamma * p
        v = mpmath.lu_solve(M, rhs)
        return mpmath.fsum(mpmath.mpf(nu[s]) * v[s] for s in range(S))


def finite_difference_gradient(
    mdp: TabularMdp, reg: Regularizer, theta: np.ndarray, nu: np.ndarray, step: float = 1e-5, dps: int = 40
) -> np.ndarray:
    """Central differences of ``J`` with step ``step``, in high precision.

    Working in ``dps`` digits removes cancellation error, leaving only the
    ``O(step^2)`` truncation error of the central difference.
    """
    theta = np.asarray(theta, float)
    _softmax_policy(theta, mdp)
    nu = _check_distribution(nu, mdp.n_states)
    grad = np.empty_like(theta)
    with mpmath.workdps(dps):
        h = mpmath.mpf(step)
        base = [[mpmath.mpf(x) for x in row] for row in theta]
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                plus = [row[:] for row in base]
                minus = [row[:] for row in base]
                plus[s][a] += h
                minus[s][a] -= h
                diff = objective_high_precision(mdp, reg, plus, nu, dps) - objective_high_precision(mdp, reg, minus, nu, dps)
                grad[s, a] = float(diff / (2 * h))
    return grad


def _greedy_preimage(reg: Regularizer, pi: np.ndarray) -> np.ndarray:
    """A ``q`` with ``grad Omega*(q) = pi`` and ``Omega*(q) = 0`` in every state."""
    alpha = reg.scale
    if reg.kind == "tsallis":
        c = -0.5 * (np.sum(pi * pi, axis=1, keepdims=True) + 1.0)
        return alpha * np.where(pi > 0, pi + c, c - 1.0)
    if np.any(pi <= 0):
        raise SupportError("entropic regularizers cannot produce a zero-probability action")
    q = alpha * np.log(pi)
    if reg.kind == "kl_uniform":
        q = q + alpha * math.log(pi.shape[1])
    return q


def irl_recover_reward(mdp: TabularMdp, reg: Regularizer, pi_star: np.ndarray) -> np.ndarray:
    """A reward making ``pi_star`` the regularized optimal policy of the dynamics of ``mdp``.

    ``r(s, a) = q(s, a) - gamma * E_{s'|s,a}[Omega*(q(s', .))]`` with ``q`` the
    normalized greedy preimage of ``pi_star`` (see ``IRL_PREIMAGE``). The
    rewards of ``mdp`` are ignored.
    """
    if reg.bregman or reg.scale == 0.0:
        raise UnsupportedRegularizer("reward recovery needs an invertible greedy map (positive scale, no anchor)")
    pi_star = check_policy(mdp, pi_star)
    q = _greedy_preimage(reg, np.maximum(pi_star, 0.0))
    return q - mdp.gamma * (mdp.transitions @ conjugate_value(reg, q))


def with_rewards(mdp: TabularMdp, rewards: np.ndarray) -> TabularMdp:
    """Same dynamics and discount, new reward."""
    return make_mdp(mdp.transitions, rewards, mdp.gamma)
