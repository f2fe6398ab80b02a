"""Loss and regret diagnostics and sup-norm evaluation of the error bounds.

Every bound is evaluated with the sup norm, where each propagation matrix
``Gamma^j`` is replaced by its norm ``gamma^j`` (unit concentrability).
Throughout, ``eps`` are the injected evaluation errors, ``eps'`` the
measured greediness errors, ``d_0 = v_ref - v_0`` and ``b_0`` the initial
Bellman residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bellman import EvalContext, policy_value, solve_reference
from .errors import ConfigError, ShapeError
from .mdp import TabularMdp, induced_dynamics, q_from_v
from .regularizers import Regularizer, bregman_radius, bregman_value, omega_gradient
from .schemes import IterationTrace

HOLD_TOL = 1e-8
TIE_TOL = 1e-9


@dataclass(frozen=True)
class BoundReport:
    """``lhs <= rhs`` evaluated on concrete inputs.

    For component-wise inequalities ``lhs`` and ``rhs`` are taken at the
    component with the smallest margin.
    """

    theorem: str
    lhs: float
    rhs: float
    inputs: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.margin >= -HOLD_TOL

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "holds": self.holds,
            "inputs": self.inputs,
        }


def _componentwise(theorem: str, lhs: np.ndarray, rhs: np.ndarray, inputs: dict | None = None) -> BoundReport:
    lhs = np.ravel(lhs)
    rhs = np.ravel(rhs)
    j = int(np.argmin(rhs - lhs))
    return BoundReport(theorem, float(lhs[j]), float(rhs[j]), inputs or {})


def _sup(x: np.ndarray) -> np.ndarray:
    return np.max(np.abs(x), axis=-1)


# ---------------------------------------------------------------- references


@dataclass(frozen=True, eq=False)
class References:
    """Reference solutions of one MDP: regularized and unregularized optima."""

    v_star: np.ndarray
    pi_star: np.ndarray
    degenerate: bool
    v_star_reg: np.ndarray | None = None
    pi_star_reg: np.ndarray | None = None


def reference_values(mdp: TabularMdp, reg: Regularizer | None = None, tol: float = 1e-10) -> References:
    """Solve the unregularized MDP (and the ``reg``-regularized one if given).

    ``pi_star`` uses lowest-index argmax; ``degenerate`` flags states where a
    second action is within ``TIE_TOL`` of the optimal q-value.
    """
    v_star, pi_star = solve_reference(EvalContext(mdp, Regularizer.hard_max()), tol)
    q = np.sort(q_from_v(mdp, v_star), axis=1)
    degenerate = bool(mdp.n_actions > 1 and np.any(q[:, -1] - q[:, -2] <= TIE_TOL))
    if reg is None:
        return References(v_star, pi_star, degenerate)
    v_reg, pi_reg = solve_reference(EvalContext(mdp, reg), tol)
    return References(v_star, pi_star, degenerate, v_reg, pi_reg)


# --------------------------------------------------------------- diagnostics


@dataclass(frozen=True, eq=False)
class DiagnosticsRecord:
    """Per-iteration quantities of a run, rows indexed by ``k``.

    ``losses[k-1]``, ``regrets[k-1]``, ``distances[k-1]``, ``shifts[k-1]`` for
    ``k = 1..K``; ``residuals[k]`` for ``k = 0..K``; ``d0`` and ``b0`` are
    the initial distance and residual.
    """

    scheme: str
    gamma: float
    losses: np.ndarray
    regrets: np.ndarray
    distances: np.ndarray
    shifts: np.ndarray
    residuals: np.ndarray
    d0: np.ndarray
    b0: np.ndarray
    policy_values: np.ndarray
    refs: References
    regularized: bool

    @property
    def K(self) -> int:
        return self.losses.shape[0]

    @property
    def loss_sup(self) -> np.ndarray:
        return _sup(self.losses)

    @property
    def regret_sup(self) -> np.ndarray:
        return _sup(self.regrets)


def compute_diagnostics(trace: IterationTrace, refs: References | None = None) -> DiagnosticsRecord:
    """Losses, regret, distance, shift and residuals of a trace.

    reg-MPI is measured in the regularized MDP (``v_{*,Omega} - v_{pi_k,Omega}``);
    the mirror-descent and weighted schemes in the original MDP.
    """
    mdp, config = trace.mdp, trace.config
    base = config.regularizer.build()
    regularized = config.scheme == "reg_mpi"
    if refs is None:
        refs = reference_values(mdp, base if regularized else None, config.tol)
    if regularized:
        if refs.v_star_reg is None:
            raise ShapeError("regularized references required for reg-MPI diagnostics")
        v_ref = refs.v_star_reg
        ctx = EvalContext(mdp, base)
    else:
        v_ref = refs.v_star
        ctx = EvalContext(mdp, Regularizer.hard_max())
    if v_ref.shape != (mdp.n_states,):
        raise ShapeError("reference value does not match the MDP")
    K = trace.K
    pv = np.array([policy_value(ctx, trace.policies[k]) for k in range(1, K + 1)])
    before_noise = trace.values[1:] - trace.eval_errors
    losses = v_ref - pv
    return DiagnosticsRecord(
        scheme=config.scheme,
        gamma=mdp.gamma,
        losses=losses,
        regrets=np.cumsum(losses, axis=0),
        distances=v_ref - before_noise,
        shifts=before_noise - pv,
        residuals=np.asarray(trace.bellman_residuals),
        d0=v_ref - trace.values[0],
        b0=np.asarray(trace.bellman_residuals[0]),
        policy_values=pv,
        refs=refs,
        regularized=regularized,
    )


# ---------------------------------------------------------- bound formulas


def _propagated(gamma: float, eps_sup: np.ndarray, epsp_sup: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``A_k = sum_{i=1}^{k-1} gamma^i e_{k-i}`` and ``B_k = sum_{i=0}^{k-1} gamma^i e'_{k-i}``, k=1..K."""
    K = len(eps_sup)
    A = np.zeros(K)
    B = np.zeros(K)
    a = b = 0.0
    for k in range(K):
        if k > 0:
            a = gamma * (a + eps_sup[k - 1])
        b = epsp_sup[k] + gamma * b
        A[k], B[k] = a, b
    return A, B


def loss_rhs_series(gamma: float, eps_sup, epsp_sup, h0: float) -> np.ndarray:
    """Sup-norm loss bound after ``k = 1..K`` iterations of (regularized) MPI."""
    A, B = _propagated(gamma, np.asarray(eps_sup, float), np.asarray(epsp_sup, float))
    k = np.arange(1, len(A) + 1)
    return (2.0 * A + B + 2.0 * gamma**k * h0) / (1.0 - gamma)


def regret_rhs_series(gamma: float, eps_sup, epsp_sup, h0: float, reg_terms) -> np.ndarray:
    """Sup-norm regret bound after ``K' = 1..K`` iterations.

    ``reg_terms[K'-1]`` is the regularization contribution at horizon ``K'``
    (``(1 - gamma^K')/(1 - gamma)^2`` times the radius or the weight sum).
    """
    per_k = loss_rhs_series(gamma, eps_sup, epsp_sup, h0)
    return np.cumsum(per_k) + np.asarray(reg_terms, float)


def _horizon_factor(gamma: float, K) -> np.ndarray:
    return (1.0 - gamma ** np.asarray(K, float)) / (1.0 - gamma) ** 2


def _require(trace: IterationTrace, allowed: tuple) -> None:
    if trace.config.scheme not in allowed:
        raise ConfigError(f"bound does not apply to scheme {trace.config.scheme!r}")


def _h0(diag: DiagnosticsRecord) -> float:
    return min(float(np.max(np.abs(diag.d0))), float(np.max(np.abs(diag.b0))))


def _echo(diag: DiagnosticsRecord, trace: IterationTrace, eps, epsp, **extra) -> dict:
    out = {
        "gamma": diag.gamma,
        "K": diag.K,
        "eps_sup_max": float(np.max(eps)) if len(eps) else 0.0,
        "eps_prime_sup_max": float(np.max(epsp)) if len(epsp) else 0.0,
        "d0_sup": float(np.max(np.abs(diag.d0))),
        "b0_sup": float(np.max(np.abs(diag.b0))),
    }
    out.update(extra)
    return out


def md_radius(trace: IterationTrace) -> float:
    """``R = max_s sup_pi D(pi || pi_0)`` of the run's base regularizer."""
    return bregman_radius(trace.config.regularizer.build(), trace.policies[0])


def weighted_radius(trace: IterationTrace) -> float:
    """``R = max_s sup_pi Omega(pi)`` of the nonnegative base regularizer."""
    return trace.config.regularizer.build().bounds(trace.mdp.n_actions)[1]


def bound_rhs_series(diag: DiagnosticsRecord, trace: IterationTrace) -> np.ndarray:
    """The scheme's main bound at every horizon ``k = 1..K`` (CSV column)."""
    gamma, h0 = diag.gamma, _h0(diag)
    eps = _sup(trace.eval_errors)
    scheme = trace.config.scheme
    if scheme == "reg_mpi":
        return loss_rhs_series(gamma, eps, trace.eps_prime_gap, h0)
    horizons = np.arange(1, diag.K + 1)
    if scheme == "weighted_reg_mpi":
        reg_terms = _horizon_factor(gamma, horizons) * weighted_radius(trace) * np.cumsum(trace.alphas)
    else:
        reg_terms = _horizon_factor(gamma, horizons) * md_radius(trace)
    return regret_rhs_series(gamma, eps, trace.eps_prime, h0, reg_terms)


def bound_reg_mpi_supnorm(diag: DiagnosticsRecord, trace: IterationTrace) -> BoundReport:
    """Loss after ``K`` iterations of reg-MPI versus its propagation bound.

    Uses the operator-gap greediness error, which is the notion the loss bound
    is stated for.
    """
    _require(trace, ("reg_mpi",))
    eps = _sup(trace.eval_errors)
    rhs = bound_rhs_series(diag, trace)[-1]
    return BoundReport(
        "reg_mpi_loss", float(diag.loss_sup[-1]), float(rhs),
        _echo(diag, trace, eps, trace.eps_prime_gap, eps_prime_sense="operator_gap"),
    )


def bound_md_mpi_regret(diag: DiagnosticsRecord, trace: IterationTrace) -> BoundReport:
    """Regret ``||L_K||`` of mirror-descent MPI versus its propagation bound."""
    _require(trace, ("md_mpi_1", "md_mpi_2"))
    eps = _sup(trace.eval_errors)
    rhs = bound_rhs_series(diag, trace)[-1]
    return BoundReport(
        "md_mpi_regret", float(diag.regret_sup[-1]), float(rhs),
        _echo(diag, trace, eps, trace.eps_prime, radius=md_radius(trace), eps_prime_sense="variational"),
    )


def exact_rate_rhs(gamma: float, K: int, dist0: float, radius: float) -> float:
    """``(1 - gamma^K)/(1 - gamma)^2 * (2 gamma dist0 + R) / K``."""
    return float(_horizon_factor(gamma, K) * (2.0 * gamma * dist0 + radius) / K)


def bound_exact_rate(diag: DiagnosticsRecord, trace: IterationTrace, K: int | None = None) -> BoundReport:
    """Average regret of exact mirror-descent MPI after ``K`` iterations."""
    _require(trace, ("md_mpi_1", "md_mpi_2"))
    K = diag.K if K is None else K
    if not 1 <= K <= diag.K:
        raise ConfigError(f"horizon {K} outside 1..{diag.K}")
    dist0 = float(np.max(np.abs(diag.d0)))
    radius = md_radius(trace)
    lhs = float(np.max(np.abs(diag.regrets[K - 1]))) / K
    return BoundReport(
        "md_mpi_exact_rate", lhs, exact_rate_rhs(diag.gamma, K, dist0, radius),
        {"gamma": diag.gamma, "K": K, "d0_sup": dist0, "radius": radius, "exact": trace.config.error.exact},
    )


def grouped_error_rhs(gamma: float, eps_sup, epsp_sup, h0: float, reg_term: float) -> float:
    """Regret bound with errors grouped by lag, ``E_i = sum_{j<=i} ||eps_j||``.

    ``sum_{i=0}^{K-1} gamma^i/(1-gamma) (2 E_{K-i} + E'_{K-i})`` with ``E_K``
    excluded from the evaluation part (``eps_K`` never propagates), plus the
    initial and regularization terms. Algebraically equal to the per-iteration
    form of :func:`regret_rhs_series`.
    """
    eps_sup = np.asarray(eps_sup, float)
    epsp_sup = np.asarray(epsp_sup, float)
    K = len(eps_sup)
    E = np.concatenate([[0.0], np.cumsum(eps_sup)])
    Ep = np.concatenate([[0.0], np.cumsum(epsp_sup)])
    total = Ep[K] / (1.0 - gamma)
    for i in range(1, K):
        total += gamma**i / (1.0 - gamma) * (2.0 * E[K - i] + Ep[K - i])
    initial = 2.0 * h0 * sum(gamma**k for k in range(1, K + 1)) / (1.0 - gamma)
    return float(total + initial + reg_term)


def bound_grouped_errors(diag: DiagnosticsRecord, trace: IterationTrace) -> BoundReport:
    """Average regret against the grouped-error form of the regret bound."""
    _require(trace, ("md_mpi_1", "md_mpi_2"))
    K = diag.K
    eps = _sup(trace.eval_errors)
    reg_term = float(_horizon_factor(diag.gamma, K)) * md_radius(trace)
    rhs = grouped_error_rhs(diag.gamma, eps, trace.eps_prime, _h0(diag), reg_term)
    return BoundReport(
        "md_mpi_grouped", float(diag.regret_sup[-1]) / K, rhs / K,
        _echo(diag, trace, eps, trace.eps_prime, radius=md_radius(trace)),
    )


def bound_asymptotic(
    diag: DiagnosticsRecord,
    trace: IterationTrace,
    eval_sup: float | None = None,
    greedy_sup: float | None = None,
    slack: float = 0.1,
) -> BoundReport:
    """Average regret against ``(2 gamma eps + eps') / (1 - gamma)^2``, inflated by ``slack``.

    ``eps`` and ``eps'`` default to the largest measured values on the trace.
    """
    _require(trace, ("md_mpi_1", "md_mpi_2"))
    eps = float(np.max(_sup(trace.eval_errors))) if eval_sup is None else eval_sup
    epsp = float(np.max(trace.eps_prime)) if greedy_sup is None else greedy_sup
    g = diag.gamma
    rhs = (1.0 + slack) * (2.0 * g * eps + epsp) / (1.0 - g) ** 2
    return BoundReport(
        "asymptotic_regret", float(diag.regret_sup[-1]) / diag.K, rhs,
        {"gamma": g, "K": diag.K, "eps": eps, "eps_prime": epsp, "slack": slack},
    )


def bound_best_policy(diag: DiagnosticsRecord, rho: np.ndarray | None = None) -> BoundReport:
    """``min_k ||v_* - v_{pi_k}||_{1,rho} <= ||L_K||_inf / K`` (uniform ``rho`` by default)."""
    S = diag.losses.shape[1]
    rho = np.full(S, 1.0 / S) if rho is None else np.asarray(rho, float)
    best = float(np.min(np.abs(diag.losses) @ rho))
    return BoundReport("best_policy_loss", best, float(diag.regret_sup[-1]) / diag.K, {"K": diag.K})


def bound_weighted(diag: DiagnosticsRecord, trace: IterationTrace) -> BoundReport:
    """Regret of weighted reg-MPI versus its bound with the weight sum."""
    _require(trace, ("weighted_reg_mpi",))
    eps = _sup(trace.eval_errors)
    rhs = bound_rhs_series(diag, trace)[-1]
    return BoundReport(
        "weighted_regret", float(diag.regret_sup[-1]), float(rhs),
        _echo(diag, trace, eps, trace.eps_prime, radius=weighted_radius(trace),
              alpha_sum=float(np.sum(trace.alphas))),
    )


def scheme_reports(diag: DiagnosticsRecord, trace: IterationTrace) -> list[BoundReport]:
    """The bound reports that apply to the trace's scheme."""
    scheme = trace.config.scheme
    if scheme == "reg_mpi":
        return [bound_reg_mpi_supnorm(diag, trace)]
    if scheme == "weighted_reg_mpi":
        return [bound_weighted(diag, trace), bound_best_policy(diag)]
    reports = [bound_md_mpi_regret(diag, trace), bound_grouped_errors(diag, trace), bound_best_policy(diag)]
    if trace.config.error.exact:
        reports.append(bound_exact_rate(diag, trace))
    return reports


# ------------------------------------------------------------ value sandwich


def sandwich_report(mdp: TabularMdp, reg: Regularizer, pi: np.ndarray | None = None, tol: float = 1e-10):
    """Check the value sandwich and the original-MDP performance of ``pi_{*,Omega}``.

    Returns ``(sandwich, performance)``. The sandwich covers
    ``v_pi - U/(1-gamma) <= v_{pi,Omega} <= v_pi - L/(1-gamma)`` for ``pi``
    (uniform by default; a stack of shape ``(n, S, A)`` checks each policy)
    and the same chain for optimal values. The second report checks
    ``v_* - (U - L)/(1-gamma) <= v_{pi_{*,Omega}} <= v_*``.
    """
    lo, hi = reg.bounds(mdp.n_actions)
    g = mdp.gamma
    if pi is None:
        pi = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    pis = np.asarray(pi, float)
    if pis.ndim == 2:
        pis = pis[None]
    zero = EvalContext(mdp, Regularizer.hard_max())
    ctx = EvalContext(mdp, reg)
    v_pi = np.concatenate([policy_value(zero, p) for p in pis])
    v_pi_reg = np.concatenate([policy_value(ctx, p) for p in pis])
    refs = reference_values(mdp, reg, tol)
    lhs = np.concatenate([v_pi - hi / (1 - g), v_pi_reg, refs.v_star - hi / (1 - g), refs.v_star_reg])
    rhs = np.concatenate([v_pi_reg, v_pi - lo / (1 - g), refs.v_star_reg, refs.v_star - lo / (1 - g)])
    sandwich = _componentwise("sandwich", lhs, rhs, {"L": lo, "U": hi, "gamma": g})
    v_greedy = policy_value(zero, refs.pi_star_reg)
    lhs = np.concatenate([refs.v_star - (hi - lo) / (1 - g), v_greedy])
    rhs = np.concatenate([v_greedy, refs.v_star])
    performance = _componentwise("original_performance", lhs, rhs, {"L": lo, "U": hi, "gamma": g})
    return sandwich, performance


# ---------------------------------------------------- recursion inequalities


def _matrix_power_apply(M: np.ndarray, x: np.ndarray, m: int | None) -> np.ndarray:
    """``M^m x``; ``m=None`` stands for the limit, zero for a strict contraction."""
    if m is None:
        return np.zeros_like(x)
    for _ in range(m):
        x = M @ x
    return x


def _partial_sum_apply(M: np.ndarray, x: np.ndarray, m: int | None) -> np.ndarray:
    """``sum_{j=1}^{m-1} M^j x``; ``m=None`` gives ``M (I - M)^{-1} x``."""
    if m is None:
        return M @ np.linalg.solve(np.eye(M.shape[0]) - M, x)
    out = np.zeros_like(x)
    y = x
    for _ in range(1, m):
        y = M @ y
        out = out + y
    return out


def check_lemma_recursions(diag: DiagnosticsRecord, trace: IterationTrace) -> dict:
    """Component-wise residual, shift and distance recursions of mirror-descent MPI.

    * ``b_k <= (gamma P_k)^m b_{k-1} + (I - gamma P_k) eps_k + eps'_{k+1}``, k = 1..K
    * ``s_k <= (gamma P_k)^m (I - gamma P_k)^{-1} b_{k-1}``, k = 1..K
    * ``d_{k+1} <= gamma P_* d_k - gamma P_* eps_k + eps'_{k+1}
      + sum_{j=1}^{m-1} (gamma P_{k+1})^j b_k + D(pi_*||pi_k) - D(pi_*||pi_{k+1})``, k = 0..K-1

    with ``P_k = P_{pi_k}`` and ``eps_0 = 0``. Returns a dict of reports keyed
    ``residual``, ``shift``, ``distance``; the distance report's inputs carry
    the ``degenerate`` flag of the optimal policy.
    """
    _require(trace, ("md_mpi_1", "md_mpi_2"))
    mdp = trace.mdp
    g = mdp.gamma
    m = trace.config.m_steps
    K = diag.K
    base = trace.config.regularizer.build().base()
    pi_star = diag.refs.pi_star
    _, P_star = induced_dynamics(mdp, pi_star)
    eye = np.eye(mdp.n_states)
    eps = np.vstack([np.zeros(mdp.n_states), trace.eval_errors])  # eps_0..eps_K
    epsp = np.concatenate([trace.eps_prime, [trace.final_eps_prime]])  # eps'_1..eps'_{K+1}
    b = diag.residuals
    d = np.vstack([diag.d0, diag.distances])  # d_0..d_K
    div = np.array([bregman_value(base, pi_star, trace.policies[k]) for k in range(K + 1)])

    b_lhs, b_rhs, s_lhs, s_rhs, d_lhs, d_rhs = [], [], [], [], [], []
    kernels = [None] + [g * induced_dynamics(mdp, trace.policies[k])[1] for k in range(1, K + 1)]
    for k in range(1, K + 1):
        M = kernels[k]
        x_k = (eye - M) @ eps[k] + epsp[k]
        b_lhs.append(b[k])
        b_rhs.append(_matrix_power_apply(M, b[k - 1], m) + x_k)
        s_lhs.append(diag.shifts[k - 1])
        s_rhs.append(_matrix_power_apply(M, np.linalg.solve(eye - M, b[k - 1]), m))
    for k in range(K):
        y_k = -g * P_star @ eps[k] + epsp[k]
        tail = _partial_sum_apply(kernels[k + 1], b[k], m)
        d_lhs.append(d[k + 1])
        d_rhs.append(g * P_star @ d[k] + y_k + tail + div[k] - div[k + 1])

    inputs = {"K": K, "m": "inf" if m is None else m}
    return {
        "residual": _componentwise("lemma_residual", np.array(b_lhs), np.array(b_rhs), inputs),
        "shift": _componentwise("lemma_shift", np.array(s_lhs), np.array(s_rhs), inputs),
        "distance": _componentwise(
            "lemma_distance", np.array(d_lhs), np.array(d_rhs), dict(inputs, degenerate=diag.refs.degenerate)
        ),
    }


def telescoping_gap(trace: IterationTrace, pi_star: np.ndarray) -> float:
    """``|sum_k [D(pi*||pi_k) - D(pi*||pi_{k+1})] - (D(pi*||pi_0) - D(pi*||pi_K))|`` in sup norm."""
    base = trace.config.regularizer.build().base()
    div = np.array([bregman_value(base, pi_star, p) for p in trace.policies])
    summed = np.sum(div[:-1] - div[1:], axis=0)
    return float(np.max(np.abs(summed - (div[0] - div[-1]))))


def three_point_gap(base: Regularizer, p: np.ndarray, p_next: np.ndarray, p_prev: np.ndarray) -> float:
    """Violation of ``<grad(p_prev) - grad(p_next), p - p_next>
    = D(p||p_next) - D(p||p_prev) + D(p_next||p_prev)``."""
    unit = Regularizer(base.kind)
    lhs = np.dot(omega_gradient(unit, p_prev) - omega_gradient(unit, p_next), p - p_next)
    rhs = bregman_value(unit, p, p_next) - bregman_value(unit, p, p_prev) + bregman_value(unit, p_next, p_prev)
    return float(abs(lhs - rhs))


def average_regret(diag: DiagnosticsRecord) -> np.ndarray:
    return diag.regret_sup / np.arange(1, diag.K + 1)


def fitted_decay_ratio(values: np.ndarray, floor: float = 1e-11) -> float:
    """Per-step ratio from a log-linear least-squares fit of ``values`` above ``floor``."""
    values = np.asarray(values, float)
    idx = np.nonzero(values > floor)[0]
    if len(idx) < 2:
        return 0.0
    # stop at the first sub-floor value so roundoff plateaus do not bias the fit
    end = idx[0]
    while end + 1 < len(values) and values[end + 1] > floor:
        end += 1
    k = np.arange(idx[0], end + 1)
    if len(k) < 2:
        return 0.0
    slope = np.polyfit(k, np.log(values[k]), 1)[0]
    return float(math.exp(slope))
