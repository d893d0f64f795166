"""Batch command-line front door.

Subcommands: validate, solve, diagnose, two-stage, mean-max, oracle, doob.
Exit codes: 0 success, 1 usage error, 2 validation/input failure,
3 non-convergence.  Reports are deterministic: identical scenario, config
and seed give identical bytes.
"""

from __future__ import annotations

import argparse
import sys

from . import players
from .equilibrium import SolveOptions, check_uniqueness, solve_equilibrium
from .errors import (
    CovarianceError,
    EnsembleError,
    EquitermError,
    GridError,
    InfeasibleError,
    NumericalError,
    ScenarioError,
)
from .oracles import GridSpec, brute_force_equilibrium, mean_max_equilibrium, two_stage_check
from .process import doob_decompose
from .report import file_sha256, render_json, render_text
from .scenario import load_scenario
from .validate import FEAS_MARGIN, validate_scenario

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="equiterm",
        description="Competitive-equilibrium term structure of power forward prices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, solver=False, seed=False, step=False):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--output", default=None, help="write the report here instead of stdout")
        p.add_argument("--format", choices=("json", "text"), default="json")
        if solver:
            p.add_argument("--tol", type=float, default=1e-8,
                           help="market clearing tolerance (volume units)")
            p.add_argument("--kkt-tol", type=float, default=1e-8,
                           help="per-player optimality tolerance")
            p.add_argument("--max-iter", type=int, default=200)
            p.add_argument("--method", choices=("tatonnement", "newton", "hybrid"),
                           default="hybrid")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if step:
            p.add_argument("--step", type=float, default=1e-4,
                           help="price grid resolution")

    common(sub.add_parser("validate", help="run all scenario preconditions"))
    common(sub.add_parser("solve", help="compute the equilibrium term structure"),
           solver=True)
    common(sub.add_parser("diagnose", help="solve, then run the uniqueness diagnostics"),
           solver=True, seed=True)
    common(sub.add_parser("two-stage", help="closed-form cross-check on a 2-trading-time market"),
           solver=True)
    common(sub.add_parser("mean-max", help="expectation-only equilibrium per delivery"))
    common(sub.add_parser("oracle", help="brute-force price grid scan (tiny markets)"),
           step=True)
    common(sub.add_parser("doob", help="martingale/drift split of an ensemble scenario"))
    return parser


def _emit(args, report: dict) -> None:
    text = render_json(report) if args.format == "json" else render_text(report)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config_echo(args) -> dict:
    cfg = {
        "format": args.format,
        "internal_tolerances": {
            "player_kkt_tol": players.KKT_TOL,
            "player_dual_tol": players.DUAL_TOL,
            "player_active_tol": players.ACT_TOL,
            "feas_margin": FEAS_MARGIN,
        },
    }
    for key in ("tol", "kkt_tol", "max_iter", "method", "seed", "step"):
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    return cfg


def _envelope(args) -> dict:
    return {
        "report_schema": "equiterm/report/1",
        "command": args.command,
        "scenario_path": args.scenario,
        "scenario_hash": file_sha256(args.scenario),
        "config": _config_echo(args),
    }


def _price_table(scenario, prices) -> list:
    rows = []
    raw = prices / scenario.grid.node_discounts()
    pos = 0
    for j, m in enumerate(scenario.grid.sizes):
        for i in range(m):
            rows.append({
                "delivery": j,
                "delivery_time": scenario.grid.deliveries[j],
                "trading_time": scenario.grid.trading_times[j][i],
                "price": float(raw[pos + i]),
                "price_discounted": float(prices[pos + i]),
            })
        pos += m
    return rows


def _solution_rows(result) -> list:
    rows = []
    for name, sol in zip(result.player_names, result.player_solutions):
        rows.append({
            "name": name,
            "objective": sol.objective,
            "kkt_residual": sol.kkt_residual,
            "stationarity": sol.residuals.stationarity,
            "complementarity": sol.residuals.complementarity,
            "volumes": list(sol.volumes),
            "active_inequalities": len(sol.active_set),
        })
    return rows


def _saturation_doc(sat) -> dict:
    return {
        "statuses": list(sat.statuses),
        "clearing_sums": list(sat.clearing_sums),
        "sign_consistent": list(sat.sign_consistent),
    }


def _solve(scenario, args):
    opts = SolveOptions(tol=args.tol, kkt_tol=args.kkt_tol, max_iter=args.max_iter,
                        method=args.method)
    return solve_equilibrium(scenario, opts)


def _cmd_validate(scenario, args, report):
    validation = validate_scenario(scenario)
    report["validation"] = validation.as_dict()
    _emit(args, report)
    return EXIT_OK if validation.passed else EXIT_VALIDATION


def _cmd_solve(scenario, args, report):
    validation = validate_scenario(scenario)
    report["validation"] = validation.as_dict()
    if not validation.passed:
        _emit(args, report)
        return EXIT_VALIDATION
    result = _solve(scenario, args)
    report["result"] = {
        "converged": result.converged,
        "message": result.message,
        "iterations": result.iterations,
        "method": result.method,
        "clearing_residual": result.clearing_residual,
        "max_kkt_residual": result.max_kkt_residual,
        "price_bound_ok": result.price_bound_ok,
        "prices": _price_table(scenario, result.prices),
        "players": _solution_rows(result),
        "saturation": _saturation_doc(result.saturation),
        "trace_residuals": list(result.trace),
    }
    _emit(args, report)
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def _cmd_diagnose(scenario, args, report):
    validation = validate_scenario(scenario)
    report["validation"] = validation.as_dict()
    result = _solve(scenario, args)
    diag = check_uniqueness(scenario, result, seed=args.seed)
    ips = [ip for _, _, ip in diag.monotonicity_samples]
    report["result"] = {
        "converged": result.converged,
        "clearing_residual": result.clearing_residual,
        "prices": _price_table(scenario, result.prices),
    }
    report["diagnostics"] = {
        "monotonicity_pairs": len(ips),
        "monotonicity_all_negative": diag.monotonicity_all_negative,
        "monotonicity_max_inner_product": max(ips) if ips else None,
        "jacobian_available": diag.jacobian_available,
        "jacobian_eigen_max": diag.jacobian_eigen_max,
        "rank_condition": diag.rank_condition,
        "rank_required": diag.rank_required,
        "rank_ok": diag.rank_ok,
        "strictly_feasible_plant_per_period": list(diag.strictly_feasible_plant_per_period),
        "saturation": _saturation_doc(diag.saturation),
        "notes": list(diag.notes),
        "seed": args.seed,
    }
    _emit(args, report)
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def _cmd_two_stage(scenario, args, report):
    if scenario.grid.n_deliveries != 1 or scenario.grid.sizes != (2,):
        print("two-stage check needs exactly one delivery with two trading times",
              file=sys.stderr)
        return EXIT_VALIDATION
    result = _solve(scenario, args)
    check = two_stage_check(scenario, result)
    report["result"] = {
        "converged": result.converged,
        "clearing_residual": result.clearing_residual,
        "prices": _price_table(scenario, result.prices),
        "closed_form": {
            "expected_t2_price": check.params.expected_t2_price,
            "lambdas": list(check.params.lambdas),
            "cost_covariances": list(check.params.cost_covariances),
            "retail": check.params.retail,
            "predicted_t1_price": check.predicted_t1,
            "solver_t1_price": check.solver_t1,
            "rel_error": check.rel_error,
            "agrees_1e6": check.rel_error <= 1e-6,
        },
    }
    _emit(args, report)
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def _cmd_mean_max(scenario, args, report):
    mm = mean_max_equilibrium(scenario)
    report["result"] = {
        "converged": mm.converged,
        "message": mm.message,
        "notes": list(mm.notes),
        "intra_delivery_spread": mm.intra_delivery_spread,
        "prices_discounted": list(mm.prices),
        "deliveries": [
            {
                "delivery": d.delivery,
                "price": d.price,
                "volume": d.volume,
                "kind": d.kind,
                "price_interval": list(d.price_interval),
                "volume_interval": list(d.volume_interval),
            }
            for d in mm.deliveries
        ],
    }
    _emit(args, report)
    return EXIT_OK if mm.converged else EXIT_NO_CONVERGENCE


def _cmd_oracle(scenario, args, report):
    if scenario.n_contracts > 3:
        print("brute-force oracle limited to 3 contracts", file=sys.stderr)
        return EXIT_VALIDATION
    bf = brute_force_equilibrium(scenario, GridSpec(step=args.step))
    report["result"] = {
        "prices_discounted": list(bf.prices),
        "clearing_residual": bf.residual,
        "step": bf.step,
        "evaluations": bf.evaluations,
        "levels": bf.levels,
    }
    _emit(args, report)
    return EXIT_OK


def _cmd_doob(scenario, args, report):
    ens = scenario.exogenous.ensemble
    if ens is None:
        print("doob needs a scenario whose exogenous block carries an ensemble",
              file=sys.stderr)
        return EXIT_VALIDATION
    parts = doob_decompose(ens)
    report["result"] = {
        "n_paths": ens.n_paths,
        "reconstruction_error": parts.max_reconstruction_error(ens),
        "martingale_residual": parts.martingale_residual(ens),
        "predictability_residual": parts.predictability_residual(ens),
        "martingale": [list(row) for row in parts.martingale],
        "predictable": [list(row) for row in parts.predictable],
        "weights": list(ens.weights),
    }
    _emit(args, report)
    return EXIT_OK


_COMMANDS = {
    "validate": _cmd_validate,
    "solve": _cmd_solve,
    "diagnose": _cmd_diagnose,
    "two-stage": _cmd_two_stage,
    "mean-max": _cmd_mean_max,
    "oracle": _cmd_oracle,
    "doob": _cmd_doob,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    try:
        scenario = load_scenario(args.scenario)
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ScenarioError, GridError, EnsembleError, CovarianceError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    report = _envelope(args)
    try:
        return _COMMANDS[args.command](scenario, args, report)
    except ValueError as exc:
        print(f"bad configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, GridError, EnsembleError, CovarianceError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InfeasibleError, NumericalError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except EquitermError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
