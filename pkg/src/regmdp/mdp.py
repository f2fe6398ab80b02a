"""Finite MDPs: validation, policy-induced dynamics, Garnet generation, JSON I/O.

Policies, state values and state-action values are plain float arrays of
shape ``(S, A)``, ``(S,)`` and ``(S, A)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _jsonio
from .errors import ParseError, RangeError, ShapeError, StochasticityError

ROW_TOL = 1e-12
_ROUNDING = 1e-14

_FIELDS = ("n_states", "n_actions", "gamma", "transitions", "rewards")


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Kernel ``transitions[s, a, s']``, reward ``rewards[s, a]``, discount ``gamma``.

    Build instances through :func:`make_mdp` (or the generators), which
    validate the tensors and freeze them read-only.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TabularMdp):
            return NotImplemented
        return (
            self.gamma == other.gamma
            and np.array_equal(self.transitions, other.transitions)
            and np.array_equal(self.rewards, other.rewards)
        )

    __hash__ = None


def validate_mdp(mdp: TabularMdp) -> TabularMdp:
    """Return ``mdp`` unchanged if every invariant holds, raise otherwise."""
    P, r = mdp.transitions, mdp.rewards
    if r.ndim != 2 or P.ndim != 3:
        raise ShapeError(f"expected transitions (S,A,S) and rewards (S,A), got {P.shape} and {r.shape}")
    S, A = r.shape
    if S < 1 or A < 1 or P.shape != (S, A, S):
        raise ShapeError(f"transitions shape {P.shape} inconsistent with rewards shape {r.shape}")
    if not (0.0 < mdp.gamma < 1.0) or not math.isfinite(mdp.gamma):
        raise RangeError(f"gamma must lie in (0, 1), got {mdp.gamma}")
    if not np.all(np.isfinite(r)):
        raise RangeError("rewards must be finite")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise StochasticityError("transition probabilities must be finite and nonnegative")
    dev = np.abs(P.sum(axis=2) - 1.0)
    if np.any(dev > ROW_TOL):
        s, a = np.unravel_index(np.argmax(dev), dev.shape)
        raise StochasticityError(f"row (s={s}, a={a}) sums to {P[s, a].sum()!r}")
    return mdp


def make_mdp(transitions, rewards, gamma: float, renormalize: bool = False) -> TabularMdp:
    """Validate and freeze raw tensors into a :class:`TabularMdp`.

    With ``renormalize`` rows whose mass is off by more than rounding noise
    but within ``ROW_TOL`` are rescaled; rows further off are still rejected.
    Rows already at rounding level are left untouched so that parsing is
    idempotent.
    """
    P = np.array(transitions, dtype=float)
    r = np.array(rewards, dtype=float)
    if renormalize and P.ndim == 3:
        sums = P.sum(axis=2, keepdims=True)
        dev = np.abs(sums - 1.0)
        ok = (dev > _ROUNDING) & (dev <= ROW_TOL)
        P = np.where(ok, P / np.where(sums == 0, 1.0, sums), P)
    mdp = validate_mdp(TabularMdp(P, r, float(gamma)))
    P.setflags(write=False)
    r.setflags(write=False)
    return mdp


def _check_values(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ShapeError(f"value vector has shape {v.shape}, expected ({mdp.n_states},)")
    return v


def check_policy(mdp: TabularMdp, pi: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeError(f"policy has shape {pi.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    if np.any(pi < -ROW_TOL) or np.any(np.abs(pi.sum(axis=1) - 1.0) > tol):
        raise StochasticityError("policy rows must be distributions")
    return pi


def q_from_v(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """``q(s, a) = r(s, a) + gamma * sum_s' P(s'|s, a) v(s')``."""
    v = _check_values(mdp, v)
    return mdp.rewards + mdp.gamma * (mdp.transitions @ v)


def induced_dynamics(mdp: TabularMdp, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reward vector ``r_pi`` and state kernel ``P_pi`` of a stochastic policy."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeError(f"policy has shape {pi.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    r_pi = np.einsum("sa,sa->s", pi, mdp.rewards)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    return r_pi, P_pi


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    """Dirichlet(1) rows; convenient for property checks."""
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def make_rng(seed: int) -> np.random.Generator:
    """All randomness in the package flows through PCG64 seeded here."""
    return np.random.Generator(np.random.PCG64(seed))


def generate_garnet(
    n_states: int,
    n_actions: int,
    branching: int,
    reward_sparsity: float,
    seed: int,
    gamma: float = 0.9,
) -> TabularMdp:
    """Random Garnet instance.

    Each ``(s, a)`` reaches exactly ``branching`` distinct successors with
    probabilities from a normalized uniform draw. ``ceil(reward_sparsity * S * A)``
    pairs receive a reward uniform in ``[0, 1]``; the rest get zero.
    """
    if n_states < 1 or n_actions < 1:
        raise RangeError("n_states and n_actions must be positive")
    if not 1 <= branching <= n_states:
        raise RangeError(f"branching must lie in [1, {n_states}], got {branching}")
    if not 0.0 < reward_sparsity <= 1.0:
        raise RangeError(f"reward_sparsity must lie in (0, 1], got {reward_sparsity}")
    rng = make_rng(seed)
    P = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=branching, replace=False)
            w = 1.0 - rng.random(branching)  # (0, 1], never a zero weight
            P[s, a, succ] = w / w.sum()
    n_pairs = n_states * n_actions
    # guard against 0.1 * 200 = 20.000000000000004 style rounding
    n_rewarded = min(n_pairs, math.ceil(reward_sparsity * n_pairs - 1e-9))
    flat = np.zeros(n_pairs)
    idx = rng.choice(n_pairs, size=n_rewarded, replace=False)
    flat[idx] = rng.random(n_rewarded)
    return make_mdp(P, flat.reshape(n_states, n_actions), gamma, renormalize=True)


def serialize_mdp(mdp: TabularMdp) -> str:
    return _jsonio.dumps(
        {
            "n_states": mdp.n_states,
            "n_actions": mdp.n_actions,
            "gamma": mdp.gamma,
            "transitions": mdp.transitions,
            "rewards": mdp.rewards,
        }
    ) + "\n"


def mdp_from_dict(obj: dict, context: str = "mdp") -> TabularMdp:
    if not isinstance(obj, dict):
        raise ParseError(f"{context}: expected a JSON object")
    unknown = sorted(set(obj) - set(_FIELDS))
    if unknown:
        raise ParseError(f"{context}: unknown field(s) {unknown}")
    for name in _FIELDS:
        if name not in obj:
            raise ParseError(f"{context}: missing field '{name}'")
    for name in ("n_states", "n_actions"):
        if not isinstance(obj[name], int) or isinstance(obj[name], bool):
            raise ParseError(f"{context}: field '{name}' must be an integer")
    if not isinstance(obj["gamma"], (int, float)) or isinstance(obj["gamma"], bool):
        raise ParseError(f"{context}: field 'gamma' must be a number")
    S, A = obj["n_states"], obj["n_actions"]
    try:
        P = np.array(obj["transitions"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{context}: field 'transitions' is not a numeric [s][a][s'] array") from exc
    try:
        r = np.array(obj["rewards"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{context}: field 'rewards' is not a numeric [s][a] array") from exc
    if P.shape != (S, A, S):
        raise ShapeError(f"{context}: field 'transitions' has shape {P.shape}, expected {(S, A, S)}")
    if r.shape != (S, A):
        raise ShapeError(f"{context}: field 'rewards' has shape {r.shape}, expected {(S, A)}")
    return make_mdp(P, r, float(obj["gamma"]), renormalize=True)


def parse_mdp(text: str) -> TabularMdp:
    """Parse the MDP JSON format; inverse of :func:`serialize_mdp`."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return mdp_from_dict(obj)
