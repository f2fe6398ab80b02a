"""Iterative DP schemes: reg-MPI, mirror-descent MPI (types 1 and 2), weighted reg-MPI.

All schemes share one loop. At iteration ``k`` (``0 <= k < K``):

1. draw greedy noise ``U[-1, 1]^(S x A)`` and evaluation noise ``U[-1, 1]^S``
   (always drawn, then scaled by the configured sups, so runs that differ
   only in noise level see the same noise pattern);
2. ``pi_{k+1}`` = regularized greedy policy of ``q_k + greedy noise``;
3. measure how far ``pi_{k+1}`` is from exact greediness;
4. ``v_{k+1}`` = ``m`` evaluation steps from ``v_k`` plus evaluation noise.

The regularizer used at step ``k`` depends on the scheme: fixed for reg-MPI,
``alpha_k`` times the base for the weighted scheme, the Bregman divergence
anchored at ``pi_k`` for mirror-descent MPI.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bellman import EvalContext, eval_operator, iterate_eval, opt_operator
from .errors import ConfigError
from .mdp import (
    TabularMdp,
    check_policy,
    make_rng,
    mdp_from_dict,
    q_from_v,
    serialize_mdp,
    uniform_policy,
)
from .regularizers import (
    Regularizer,
    floor_anchor,
    greedy_distribution,
    omega_gradient,
)

SCHEMES = ("reg_mpi", "md_mpi_1", "md_mpi_2", "weighted_reg_mpi")
SCHEDULES = ("constant", "inverse_k", "inverse_sqrt_k", "values")

_TINY = np.finfo(float).tiny


def _number(obj: dict, key: str, default, context: str) -> float:
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{context}.{key} must be a number")
    return float(value)


def _reject_unknown(obj: dict, allowed: tuple, context: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{context} must be an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{context}: unknown field(s) {unknown}")


@dataclass(frozen=True)
class ErrorModel:
    """Sup-norm levels of the injected uniform noise; zero means exact."""

    eval_sup: float = 0.0
    greedy_sup: float = 0.0

    def __post_init__(self):
        for name in ("eval_sup", "greedy_sup"):
            value = getattr(self, name)
            if not (value >= 0.0 and math.isfinite(value)):
                raise ConfigError(f"error.{name} must be finite and nonnegative, got {value}")

    @property
    def exact(self) -> bool:
        return self.eval_sup == 0.0 and self.greedy_sup == 0.0

    def to_dict(self) -> dict:
        return {"eval_sup": self.eval_sup, "greedy_sup": self.greedy_sup}

    @classmethod
    def from_dict(cls, obj: dict) -> "ErrorModel":
        _reject_unknown(obj, ("eval_sup", "greedy_sup"), "error")
        return cls(_number(obj, "eval_sup", 0.0, "error"), _number(obj, "greedy_sup", 0.0, "error"))


@dataclass(frozen=True)
class AlphaSchedule:
    """Weights ``alpha_k`` of the weighted scheme.

    ``constant``: ``alpha``; ``inverse_k``: ``alpha / (k + 1)``;
    ``inverse_sqrt_k``: ``alpha / sqrt(k + 1)``; ``values``: an explicit list,
    whose last entry is repeated past its end.
    """

    kind: str = "constant"
    alpha: float = 1.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ConfigError(f"unknown alpha schedule {self.kind!r}")
        if self.kind == "values":
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim != 1 or vals.size == 0:
                raise ConfigError("alpha_schedule.values must be a non-empty list")
            if not np.all(vals > 0) or not np.all(np.isfinite(vals)):
                raise ConfigError("alpha schedule must be positive")
            if np.any(np.diff(vals) > 0):
                raise ConfigError("alpha schedule must be non-increasing")
            object.__setattr__(self, "values", tuple(float(x) for x in vals))
        elif not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha_schedule.alpha must be positive, got {self.alpha}")

    def at(self, k: int) -> float:
        if self.kind == "constant":
            return self.alpha
        if self.kind == "inverse_k":
            return self.alpha / (k + 1)
        if self.kind == "inverse_sqrt_k":
            return self.alpha / math.sqrt(k + 1)
        return self.values[min(k, len(self.values) - 1)]

    def series(self, n: int) -> np.ndarray:
        return np.array([self.at(k) for k in range(n)])

    def to_dict(self) -> dict:
        if self.kind == "values":
            return {"kind": "values", "values": list(self.values)}
        return {"kind": self.kind, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, obj: dict) -> "AlphaSchedule":
        _reject_unknown(obj, ("kind", "alpha", "values"), "alpha_schedule")
        kind = obj.get("kind", "constant")
        if kind == "values":
            values = obj.get("values")
            if not isinstance(values, list):
                raise ConfigError("alpha_schedule.values must be a list")
            return cls("values", 1.0, tuple(values))
        return cls(kind, _number(obj, "alpha", 1.0, "alpha_schedule"))


@dataclass(frozen=True)
class RegularizerConfig:
    kind: str = "entropy"
    scale: float = 1.0
    bregman: bool = False

    def build(self) -> Regularizer:
        return Regularizer(self.kind, self.scale)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "bregman": self.bregman}


@dataclass(frozen=True)
class SchemeConfig:
    """Everything that determines a scheme run (together with the MDP).

    ``m`` is a positive int or ``math.inf`` (exact evaluation). ``tol`` is the
    accuracy of the reference solves used when analysing the run.
    """

    scheme: str
    m: float = 1
    K: int = 100
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    alpha_schedule: AlphaSchedule | None = None
    error: ErrorModel = field(default_factory=ErrorModel)
    seed: int = 0
    tol: float = 1e-10
    v0: tuple | None = None
    pi0: tuple | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not (self.m == math.inf or (isinstance(self.m, int) and not isinstance(self.m, bool) and self.m >= 1)):
            raise ConfigError(f"m must be a positive integer or 'inf', got {self.m!r}")
        if not isinstance(self.K, int) or isinstance(self.K, bool) or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not (self.tol > 0):
            raise ConfigError("tol must be positive")
        try:
            base = self.regularizer.build()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        md = self.scheme.startswith("md_mpi")
        if md and not self.regularizer.bregman:
            raise ConfigError("mirror-descent schemes need a Bregman regularizer (\"bregman\": true)")
        if not md and self.regularizer.bregman:
            raise ConfigError(f"{self.scheme} uses a fixed regularizer; \"bregman\" must be false")
        if md and base.scale == 0.0:
            raise ConfigError("mirror-descent schemes need a positive regularizer scale")
        if self.scheme == "weighted_reg_mpi":
            if base.kind != "kl_uniform":
                raise ConfigError("the weighted scheme needs a nonnegative regularizer (kind kl_uniform)")
            if self.alpha_schedule is None:
                object.__setattr__(self, "alpha_schedule", AlphaSchedule())
        elif self.alpha_schedule is not None:
            raise ConfigError("alpha_schedule is only valid for weighted_reg_mpi")

    @property
    def m_steps(self) -> int | None:
        """Evaluation steps, ``None`` meaning exact evaluation."""
        return None if self.m == math.inf else int(self.m)

    def with_seed(self, seed: int) -> "SchemeConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        out = {
            "scheme": self.scheme,
            "m": "inf" if self.m == math.inf else self.m,
            "K": self.K,
            "regularizer": self.regularizer.to_dict(),
            "error": self.error.to_dict(),
            "seed": self.seed,
            "tol": self.tol,
        }
        if self.alpha_schedule is not None:
            out["alpha_schedule"] = self.alpha_schedule.to_dict()
        if self.v0 is not None:
            out["v0"] = list(self.v0)
        if self.pi0 is not None:
            out["pi0"] = [list(row) for row in self.pi0]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "SchemeConfig":
        allowed = ("scheme", "m", "K", "regularizer", "alpha_schedule", "error", "seed", "tol", "v0", "pi0")
        _reject_unknown(obj, allowed, "scheme config")
        if "scheme" not in obj:
            raise ConfigError("scheme config: missing field 'scheme'")
        scheme = obj["scheme"]
        m = obj.get("m", 1)
        if m in ("inf", "infinity", "Infinity"):
            m = math.inf
        reg_obj = obj.get("regularizer", {})
        _reject_unknown(reg_obj, ("kind", "scale", "bregman"), "regularizer")
        bregman = reg_obj.get("bregman", isinstance(scheme, str) and scheme.startswith("md_mpi"))
        if not isinstance(bregman, bool):
            raise ConfigError("regularizer.bregman must be true or false")
        kind = reg_obj.get("kind", "entropy")
        if not isinstance(kind, str):
            raise ConfigError("regularizer.kind must be a string")
        reg = RegularizerConfig(kind, _number(reg_obj, "scale", 1.0, "regularizer"), bregman)
        schedule = obj.get("alpha_schedule")
        v0 = obj.get("v0")
        pi0 = obj.get("pi0")
        return cls(
            scheme=scheme,
            m=m,
            K=obj.get("K", 100),
            regularizer=reg,
            alpha_schedule=None if schedule is None else AlphaSchedule.from_dict(schedule),
            error=ErrorModel.from_dict(obj.get("error", {})),
            seed=obj.get("seed", 0),
            tol=_number(obj, "tol", 1e-10, "scheme config"),
            v0=None if v0 is None else tuple(float(x) for x in v0),
            pi0=None if pi0 is None else tuple(tuple(float(x) for x in row) for row in pi0),
        )


@dataclass(frozen=True, eq=False)
class IterationTrace:
    """Record of one run.

    Index conventions (``K`` iterations):

    * ``policies[k]``, ``values[k]``: ``pi_k``, ``v_k`` for ``k = 0..K``;
    * ``eval_errors[k-1]``, ``eps_prime[k-1]``, ``eps_prime_gap[k-1]``,
      ``alphas[k-1]``: the quantities of iteration ``k = 1..K``
      (``alphas[k-1]`` is the weight used to compute ``pi_k``);
    * ``bellman_residuals[k]``: ``b_k = v_k - T_{pi_{k+1}} v_k`` (with the
      scheme's evaluation regularizer), ``k = 0..K``;
    * ``next_policy``: the noise-free greedy policy of ``v_K``, which defines
      ``b_K``; its measured greediness errors are ``final_eps_prime(_gap)``.
    """

    config: SchemeConfig
    mdp: TabularMdp
    policies: np.ndarray
    values: np.ndarray
    eval_errors: np.ndarray
    eps_prime: np.ndarray
    eps_prime_gap: np.ndarray
    bellman_residuals: np.ndarray
    alphas: np.ndarray
    next_policy: np.ndarray
    final_eps_prime: float
    final_eps_prime_gap: float

    @property
    def K(self) -> int:
        return self.eval_errors.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IterationTrace):
            return NotImplemented
        arrays = ("policies", "values", "eval_errors", "eps_prime", "eps_prime_gap",
                  "bellman_residuals", "alphas", "next_policy")
        return (
            self.config == other.config
            and self.mdp == other.mdp
            and all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True) for a in arrays)
            and self.final_eps_prime == other.final_eps_prime
            and self.final_eps_prime_gap == other.final_eps_prime_gap
        )

    __hash__ = None


def measure_greedy_epsilon(ctx: EvalContext, anchor: np.ndarray | None, v: np.ndarray, pi_candidate: np.ndarray) -> tuple[float, float]:
    """How far ``pi_candidate`` is from the regularized greedy policy of ``v``.

    The regularizer is ``ctx.reg``, anchored at ``anchor`` when one is given.
    Returns ``(variational, gap)``:

    * ``variational``: smallest ``eps'`` with
      ``<grad J(pi_c), pi - pi_c> + eps' >= 0`` for all policies, where
      ``J(pi) = -<q, pi> + Omega(pi)``. The inner minimum is linear in ``pi``
      so it sits at a vertex: per state ``max_a g(a) - <g, pi_c>`` with
      ``g = -grad J(pi_c)``.
    * ``gap``: ``max_s [T_* v - T_{pi_c} v](s)``, both with the same regularizer.
    """
    reg = ctx.reg if anchor is None else ctx.reg.base().anchored(anchor)
    ctx = ctx.with_reg(reg)
    pi_candidate = check_policy(ctx.mdp, pi_candidate)
    q = q_from_v(ctx.mdp, v)
    p = np.maximum(pi_candidate, _TINY) if reg.entropic else pi_candidate
    g = q - omega_gradient(reg, p)
    variational = np.max(g, axis=1) - np.einsum("sa,sa->s", g, pi_candidate)
    gap = opt_operator(ctx, v) - eval_operator(ctx, pi_candidate, v)
    return max(0.0, float(np.max(variational))), max(0.0, float(np.max(gap)))


class _Plan:
    """Per-scheme choice of greedy and evaluation regularizers."""

    def __init__(self, config: SchemeConfig, mdp: TabularMdp):
        self.config = config
        self.mdp = mdp
        self.base = config.regularizer.build()
        self.schedule = config.alpha_schedule
        self.md = config.scheme.startswith("md_mpi")

    def alpha(self, k: int) -> float:
        return self.schedule.at(k) if self.schedule is not None else math.nan

    def greedy_reg(self, k: int, pi_k: np.ndarray) -> Regularizer:
        if self.md:
            return self.base.anchored(pi_k)
        if self.schedule is not None:
            return self.base.scaled(self.alpha(k))
        return self.base

    def eval_reg(self, greedy_reg: Regularizer) -> Regularizer:
        if self.config.scheme == "md_mpi_2":
            return Regularizer.hard_max()
        return greedy_reg

    def greedy(self, reg: Regularizer, q: np.ndarray) -> np.ndarray:
        pi = greedy_distribution(reg, q)
        if self.md and reg.entropic:
            # keeps the next KL anchor strictly positive; the resulting
            # departure from exact greediness shows up in the measured eps'
            pi = floor_anchor(pi)
        return pi


def run_scheme(mdp: TabularMdp, config: SchemeConfig) -> IterationTrace:
    """Run ``config.K`` iterations of the configured scheme on ``mdp``."""
    S, A = mdp.n_states, mdp.n_actions
    plan = _Plan(config, mdp)
    v = np.zeros(S) if config.v0 is None else np.array(config.v0, dtype=float)
    if v.shape != (S,):
        raise ConfigError(f"v0 has shape {v.shape}, expected ({S},)")
    pi = uniform_policy(S, A) if config.pi0 is None else np.array(config.pi0, dtype=float)
    try:
        pi = check_policy(mdp, pi)
    except ValueError as exc:
        raise ConfigError(f"pi0: {exc}") from exc
    if plan.md and plan.base.entropic:
        pi = floor_anchor(pi)

    K, m = config.K, config.m_steps
    eval_sup, greedy_sup = config.error.eval_sup, config.error.greedy_sup
    # VI shortcut: with exact greediness m=1 evaluation is T_* itself
    vi_shortcut = config.scheme == "reg_mpi" and m == 1 and greedy_sup == 0.0
    rng = make_rng(config.seed)

    policies = np.empty((K + 1, S, A))
    values = np.empty((K + 1, S))
    eval_errors = np.empty((K, S))
    eps_prime = np.empty(K)
    eps_gap = np.empty(K)
    residuals = np.empty((K + 1, S))
    alphas = np.full(K, math.nan)
    policies[0], values[0] = pi, v

    for k in range(K):
        greedy_noise = greedy_sup * rng.uniform(-1.0, 1.0, size=(S, A))
        eval_noise = eval_sup * rng.uniform(-1.0, 1.0, size=S)
        g_reg = plan.greedy_reg(k, pi)
        ctx = EvalContext(mdp, g_reg)
        q = q_from_v(mdp, v)
        pi_next = plan.greedy(g_reg, q + greedy_noise)
        eps_prime[k], eps_gap[k] = measure_greedy_epsilon(ctx, None, v, pi_next)
        e_ctx = ctx.with_reg(plan.eval_reg(g_reg))
        residuals[k] = v - eval_operator(e_ctx, pi_next, v)
        if vi_shortcut:
            v_next = opt_operator(ctx, v)
        else:
            v_next = iterate_eval(e_ctx, pi_next, v, m)
        v_next = v_next + eval_noise
        alphas[k] = plan.alpha(k)
        eval_errors[k] = eval_noise
        pi, v = pi_next, v_next
        policies[k + 1], values[k + 1] = pi, v

    g_reg = plan.greedy_reg(K, pi)
    ctx = EvalContext(mdp, g_reg)
    next_policy = plan.greedy(g_reg, q_from_v(mdp, v))
    final_eps, final_gap = measure_greedy_epsilon(ctx, None, v, next_policy)
    residuals[K] = v - eval_operator(ctx.with_reg(plan.eval_reg(g_reg)), next_policy, v)

    for arr in (policies, values, eval_errors, eps_prime, eps_gap, residuals, alphas, next_policy):
        arr.setflags(write=False)
    return IterationTrace(
        config=config,
        mdp=mdp,
        policies=policies,
        values=values,
        eval_errors=eval_errors,
        eps_prime=eps_prime,
        eps_prime_gap=eps_gap,
        bellman_residuals=residuals,
        alphas=alphas,
        next_policy=next_policy,
        final_eps_prime=final_eps,
        final_eps_prime_gap=final_gap,
    )


def _require(config: SchemeConfig, allowed: tuple) -> None:
    if config.scheme not in allowed:
        raise ConfigError(f"scheme {config.scheme!r} not handled here; expected one of {allowed}")


def run_reg_mpi(mdp: TabularMdp, config: SchemeConfig) -> IterationTrace:
    _require(config, ("reg_mpi",))
    return run_scheme(mdp, config)


def run_md_mpi(mdp: TabularMdp, config: SchemeConfig) -> IterationTrace:
    _require(config, ("md_mpi_1", "md_mpi_2"))
    return run_scheme(mdp, config)


def run_weighted_reg_mpi(mdp: TabularMdp, config: SchemeConfig) -> IterationTrace:
    _require(config, ("weighted_reg_mpi",))
    return run_scheme(mdp, config)


def trace_to_dict(trace: IterationTrace) -> dict:
    return {
        "config": trace.config.to_dict(),
        "mdp": json.loads(serialize_mdp(trace.mdp)),
        "policies": trace.policies,
        "values": trace.values,
        "eval_errors": trace.eval_errors,
        "eps_prime": trace.eps_prime,
        "eps_prime_gap": trace.eps_prime_gap,
        "bellman_residuals": trace.bellman_residuals,
        "alphas": trace.alphas,
        "next_policy": trace.next_policy,
        "final_eps_prime": trace.final_eps_prime,
        "final_eps_prime_gap": trace.final_eps_prime_gap,
    }


def trace_from_dict(obj: dict) -> IterationTrace:
    fields = ("config", "mdp", "policies", "values", "eval_errors", "eps_prime", "eps_prime_gap",
              "bellman_residuals", "alphas", "next_policy", "final_eps_prime", "final_eps_prime_gap")
    _reject_unknown(obj, fields, "trace")
    missing = [f for f in fields if f not in obj]
    if missing:
        raise ConfigError(f"trace: missing field(s) {missing}")
    config = SchemeConfig.from_dict(obj["config"])
    mdp = mdp_from_dict(obj["mdp"], "trace.mdp")
    K, S, A = config.K, mdp.n_states, mdp.n_actions
    shapes = {
        "policies": (K + 1, S, A),
        "values": (K + 1, S),
        "eval_errors": (K, S),
        "eps_prime": (K,),
        "eps_prime_gap": (K,),
        "bellman_residuals": (K + 1, S),
        "alphas": (K,),
        "next_policy": (S, A),
    }
    arrays = {}
    for name, shape in shapes.items():
        arr = np.array(obj[name], dtype=float)
        if arr.shape != shape:
            raise ConfigError(f"trace.{name} has shape {arr.shape}, expected {shape}")
        arr.setflags(write=False)
        arrays[name] = arr
    return IterationTrace(
        config=config,
        mdp=mdp,
        final_eps_prime=float(obj["final_eps_prime"]),
        final_eps_prime_gap=float(obj["final_eps_prime_gap"]),
        **arrays,
    )
