"""Command-line experiment runner.

Exit codes: 0 when every requested bound holds, 1 on invalid input
(configuration, parse or validation errors), 2 when a bound is violated.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import _jsonio
from .analysis import (
    HOLD_TOL,
    bound_asymptotic,
    bound_best_policy,
    bound_exact_rate,
    bound_grouped_errors,
    bound_md_mpi_regret,
    bound_reg_mpi_supnorm,
    bound_rhs_series,
    bound_weighted,
    check_lemma_recursions,
    compute_diagnostics,
    scheme_reports,
)
from .bellman import EvalContext, optimal_value
from .errors import ConfigError, RegMdpError
from .extensions import (
    IRL_PREIMAGE,
    finite_difference_gradient,
    irl_recover_reward,
    regularized_policy_gradient,
    with_rewards,
)
from .mdp import generate_garnet, make_rng, mdp_from_dict, parse_mdp, serialize_mdp
from .regularizers import Regularizer
from .schemes import SchemeConfig, run_scheme, trace_from_dict, trace_to_dict

log = logging.getLogger("regmdp")

CSV_HEADER = (
    "k",
    "loss_sup",
    "regret_sup",
    "eps_sup",
    "eps_prime_sup",
    "eps_prime_gap",
    "bellman_residual_sup",
    "bound_rhs",
    "alpha_k",
)

_BOUNDS = {
    "reg_mpi_loss": lambda d, t: [bound_reg_mpi_supnorm(d, t)],
    "md_mpi_regret": lambda d, t: [bound_md_mpi_regret(d, t)],
    "md_mpi_grouped": lambda d, t: [bound_grouped_errors(d, t)],
    "md_mpi_exact_rate": lambda d, t: [bound_exact_rate(d, t)],
    "best_policy_loss": lambda d, t: [bound_best_policy(d)],
    "weighted_regret": lambda d, t: [bound_weighted(d, t)],
    "asymptotic_regret": lambda d, t: [bound_asymptotic(d, t)],
    "lemma": lambda d, t: list(check_lemma_recursions(d, t).values()),
}


# ------------------------------------------------------------------ configs


def _load_json(path: str | os.PathLike, what: str) -> object:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _mdp_for_seed(source: dict, seed: int, base_dir: Path):
    if not isinstance(source, dict) or len(source) != 1:
        raise ConfigError("'mdp' must hold exactly one of 'garnet', 'file', 'inline'")
    (kind, spec), = source.items()
    if kind == "garnet":
        allowed = {"n_states", "n_actions", "branching", "sparsity", "gamma", "seed"}
        if not isinstance(spec, dict) or set(spec) - allowed:
            raise ConfigError(f"mdp.garnet accepts fields {sorted(allowed)}")
        try:
            return generate_garnet(
                spec["n_states"], spec["n_actions"], spec["branching"], spec["sparsity"],
                spec.get("seed", seed), spec.get("gamma", 0.9),
            )
        except KeyError as exc:
            raise ConfigError(f"mdp.garnet: missing field {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"mdp.garnet: {exc}") from exc
    if kind == "file":
        path = Path(spec)
        if not path.is_absolute():
            path = base_dir / path
        try:
            return parse_mdp(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read MDP file {path}: {exc.strerror}") from exc
    if kind == "inline":
        return mdp_from_dict(spec, "mdp.inline")
    raise ConfigError(f"unknown MDP source {kind!r}")


def load_experiment(path: str | os.PathLike) -> dict:
    """Read and validate an experiment config; returns a normalized dict."""
    obj = _load_json(path, "config")
    allowed = {"mdp", "scheme", "seeds", "bounds", "out"}
    if not isinstance(obj, dict):
        raise ConfigError("experiment config must be a JSON object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"experiment config: unknown field(s) {unknown}")
    for key in ("mdp", "scheme"):
        if key not in obj:
            raise ConfigError(f"experiment config: missing field '{key}'")
    seeds = obj.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("'seeds' must be a non-empty list of nonnegative integers")
    bounds = obj.get("bounds", ["auto"])
    if not isinstance(bounds, list) or any(b != "auto" and b not in _BOUNDS for b in bounds):
        raise ConfigError(f"'bounds' entries must be 'auto' or one of {sorted(_BOUNDS)}")
    scheme = SchemeConfig.from_dict(dict(obj["scheme"], seed=seeds[0]))
    return {
        "mdp": obj["mdp"],
        "scheme": obj["scheme"],
        "seeds": seeds,
        "bounds": bounds,
        "out": obj.get("out"),
        "base_dir": str(Path(path).resolve().parent),
        "scheme_name": scheme.scheme,
    }


# ------------------------------------------------------------------ outputs


def diagnostics_csv(diag, trace) -> str:
    rhs = bound_rhs_series(diag, trace)
    eps = np.max(np.abs(trace.eval_errors), axis=1)
    res = np.max(np.abs(diag.residuals), axis=1)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    f = _jsonio.fmt_float
    for k in range(1, diag.K + 1):
        writer.writerow([
            k,
            f(diag.loss_sup[k - 1]),
            f(diag.regret_sup[k - 1]),
            f(eps[k - 1]),
            f(trace.eps_prime[k - 1]),
            f(trace.eps_prime_gap[k - 1]),
            f(res[k]),
            f(rhs[k - 1]),
            f(trace.alphas[k - 1]),
        ])
    return buf.getvalue()


def evaluate_reports(trace, bounds=("auto",)):
    diag = compute_diagnostics(trace)
    reports = []
    for name in bounds:
        reports.extend(scheme_reports(diag, trace) if name == "auto" else _BOUNDS[name](diag, trace))
    return diag, reports


def bounds_document(trace, reports) -> str:
    doc = {
        "seed": trace.config.seed,
        "scheme": trace.config.scheme,
        "all_hold": all(r.holds for r in reports),
        "reports": [r.to_dict() for r in reports],
    }
    return _jsonio.dumps(doc) + "\n"


def _run_seed(exp: dict, seed: int, out_dir: str) -> tuple[int, bool]:
    mdp = _mdp_for_seed(exp["mdp"], seed, Path(exp["base_dir"]))
    config = SchemeConfig.from_dict(dict(exp["scheme"], seed=seed))
    log.info("seed %d: running %s for K=%d", seed, config.scheme, config.K)
    trace = run_scheme(mdp, config)
    diag, reports = evaluate_reports(trace, exp["bounds"])
    out = Path(out_dir)
    (out / f"trace_seed{seed}.json").write_text(_jsonio.dumps(trace_to_dict(trace)) + "\n")
    (out / f"diagnostics_seed{seed}.csv").write_text(diagnostics_csv(diag, trace))
    (out / f"bounds_seed{seed}.json").write_text(bounds_document(trace, reports))
    for r in reports:
        log.info("seed %d: %s margin %.3g", seed, r.theorem, r.margin)
    return seed, all(r.holds for r in reports)


def run_experiment(config_path, out_dir=None, jobs: int = 1, seed_override: int | None = None) -> int:
    """Run every seed of an experiment; returns the process exit code."""
    exp = load_experiment(config_path)
    seeds = [seed_override] if seed_override is not None else exp["seeds"]
    out = out_dir or exp["out"] or "results"
    out_path = Path(out)
    if not out_path.is_absolute() and out_dir is None and exp["out"]:
        out_path = Path(exp["base_dir"]) / out_path
    try:
        out_path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_path}: {exc.strerror}") from exc
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, [exp] * len(seeds), seeds, [str(out_path)] * len(seeds)))
    else:
        results = [_run_seed(exp, s, str(out_path)) for s in seeds]
    failed = [s for s, ok in results if not ok]
    if failed:
        print(f"bound violated for seed(s) {failed}", file=sys.stderr)
        return 2
    return 0


def check_trace(path, bounds=("auto",)) -> tuple[str, bool]:
    """Recompute the bound document of a saved trace."""
    obj = _load_json(path, "trace")
    if not isinstance(obj, dict):
        raise ConfigError("trace must be a JSON object")
    trace = trace_from_dict(obj)
    _, reports = evaluate_reports(trace, bounds)
    return bounds_document(trace, reports), all(r.holds for r in reports)


def check_csv(path, scheme: str) -> tuple[str, bool]:
    """Margins ``bound_rhs - lhs`` of each row of a diagnostics CSV.

    ``lhs`` is ``loss_sup`` for reg-MPI and ``regret_sup`` otherwise.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ConfigError(f"{path}: header must be {','.join(CSV_HEADER)}")
    column = "loss_sup" if scheme == "reg_mpi" else "regret_sup"
    li, ri = CSV_HEADER.index(column), CSV_HEADER.index("bound_rhs")
    margins = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise ConfigError(f"{path}: line {n} has {len(row)} fields")
        try:
            margins.append(float(row[ri]) - float(row[li]))
        except ValueError as exc:
            raise ConfigError(f"{path}: line {n}: {exc}") from exc
    ok = all(m >= -HOLD_TOL for m in margins)
    doc = {"scheme": scheme, "lhs_column": column, "all_hold": ok, "margins": margins}
    return _jsonio.dumps(doc) + "\n", ok


# --------------------------------------------------------------- commands


def _regularizer(args) -> Regularizer:
    return Regularizer(args.reg, args.scale)


def _load_mdp(path):
    try:
        return parse_mdp(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read MDP file {path}: {exc.strerror}") from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    return run_experiment(args.config, args.out, args.jobs, args.seed_override)


def cmd_solve(args) -> int:
    mdp = _load_mdp(args.mdp)
    v, pi = optimal_value(EvalContext(mdp, _regularizer(args)), args.tol)
    _emit(_jsonio.dumps({"v": v, "pi": pi}) + "\n", args.out)
    return 0


def cmd_garnet(args) -> int:
    mdp = generate_garnet(args.states, args.actions, args.branching, args.sparsity, args.seed, args.gamma)
    _emit(serialize_mdp(mdp), args.out)
    return 0


def cmd_check_bounds(args) -> int:
    if (args.trace is None) == (args.csv is None):
        raise ConfigError("check-bounds needs exactly one of --trace or --csv")
    if args.trace is not None:
        text, ok = check_trace(args.trace)
    else:
        if args.scheme is None:
            raise ConfigError("--csv needs --scheme to pick the bounded column")
        text, ok = check_csv(args.csv, args.scheme)
    _emit(text, args.out)
    return 0 if ok else 2


def cmd_gradcheck(args) -> int:
    mdp = _load_mdp(args.mdp)
    reg = _regularizer(args)
    theta = make_rng(args.seed).normal(size=(mdp.n_states, mdp.n_actions))
    nu = np.full(mdp.n_states, 1.0 / mdp.n_states)
    exact = regularized_policy_gradient(mdp, reg, theta, nu)
    fd = finite_difference_gradient(mdp, reg, theta, nu, args.step)
    mask = np.abs(fd) > 1e-8
    rel = float(np.max(np.abs(exact - fd)[mask] / np.abs(fd)[mask])) if mask.any() else 0.0
    ok = rel <= args.rtol
    _emit(_jsonio.dumps({"max_relative_error": rel, "rtol": args.rtol, "ok": ok}) + "\n", args.out)
    return 0 if ok else 2


def cmd_irl(args) -> int:
    mdp = _load_mdp(args.mdp)
    reg = _regularizer(args)
    _, pi_star = optimal_value(EvalContext(mdp, reg), args.tol)
    reward = irl_recover_reward(mdp, reg, pi_star)
    _, pi_back = optimal_value(EvalContext(with_rewards(mdp, reward), reg), args.tol)
    tv = float(np.max(0.5 * np.sum(np.abs(pi_back - pi_star), axis=1)))
    ok = tv <= args.atol
    doc = {"reward": reward, "preimage": IRL_PREIMAGE[reg.kind], "max_total_variation": tv, "ok": ok}
    _emit(_jsonio.dumps(doc) + "\n", args.out)
    return 0 if ok else 2


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regmdp", description="Regularized MDP solver and bound checker.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config over its seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config 'out' or ./results)")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--seed-override", type=int)
    p.set_defaults(func=cmd_run)

    def add_reg(p):
        p.add_argument("--reg", default="entropy", help="entropy | kl_uniform | tsallis")
        p.add_argument("--scale", type=float, default=1.0)

    p = sub.add_parser("solve", help="print the regularized optimal value and policy")
    p.add_argument("--mdp", required=True)
    add_reg(p)
    p.add_argument("--tol", type=_positive_float, default=1e-10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("garnet", help="emit a random Garnet MDP as JSON")
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--actions", type=int, required=True)
    p.add_argument("--branching", type=int, required=True)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--out")
    p.set_defaults(func=cmd_garnet)

    p = sub.add_parser("check-bounds", help="re-evaluate bounds from a saved trace or diagnostics CSV")
    p.add_argument("--trace")
    p.add_argument("--csv")
    p.add_argument("--scheme", choices=("reg_mpi", "md_mpi_1", "md_mpi_2", "weighted_reg_mpi"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_check_bounds)

    p = sub.add_parser("gradcheck", help="policy gradient versus finite differences")
    p.add_argument("--mdp", required=True)
    add_reg(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=_positive_float, default=1e-5)
    p.add_argument("--rtol", type=_positive_float, default=1e-5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("irl", help="recover a reward from the optimal policy and re-solve")
    p.add_argument("--mdp", required=True)
    add_reg(p)
    p.add_argument("--tol", type=_positive_float, default=1e-12)
    p.add_argument("--atol", type=_positive_float, default=1e-6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_irl)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("REGMDP_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors are input errors; keep 2 for bound violations
        return 1 if exc.code == 2 else (exc.code or 0)
    try:
        return args.func(args)
    except RegMdpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
