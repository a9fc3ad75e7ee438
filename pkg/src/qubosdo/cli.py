"""Command-line front end: solve an instance file, emit a JSON report.

Exit codes: 0 solved, 1 input/config error, 2 certified infeasible at the
given gamma, 3 nonconvergence (outer-iteration cap reached).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .cost import CostMatrix
from .io import FORMAT_EDGES, FORMAT_MATRIX_MARKET, ParseError, parse_matrix
from .linalg import frobenius_norm
from .optimize import binary_search_gamma, hyperplane_round, round_to_feasible
from .refine import ConvergenceError, InfeasibleError, RefineConfig, refine_solve

SCHEMA_VERSION = 1

EXIT_SOLVED = 0
EXIT_INPUT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_NONCONVERGENCE = 3


class _CliError(Exception):
    def __init__(self, category: str, detail: str):
        super().__init__(f"{category}: {detail}")
        self.category = category
        self.detail = detail


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _CliError("usage", message)


def _json_scalar(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if x != x or x in (float("inf"), float("-inf")):
            raise ValueError("non-finite value in report")
        return format(x, ".17g")
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"unsupported report value {value!r}")


def dumps_report(obj, indent: int = 0) -> str:
    """JSON with floats rendered at 17 significant digits."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}"{k}": {dumps_report(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{inner}{dumps_report(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    return _json_scalar(obj)


def _build_parser() -> _Parser:
    p = _Parser(prog="qubosdo", description="solve the unit-diagonal SDO relaxation of a QUBO instance")
    p.add_argument("--input", required=True, help="instance file path")
    p.add_argument("--format", choices=[FORMAT_MATRIX_MARKET, FORMAT_EDGES], default=FORMAT_MATRIX_MARKET)
    p.add_argument("--epsilon", type=float, default=1e-3, help="additive error target on the original scale")
    p.add_argument("--xi", type=float, default=0.1, help="fixed inner precision constant")
    p.add_argument("--gamma", type=float, default=None, help="skip the search and solve at this normalized gamma")
    p.add_argument("--mode", choices=["optimize", "feasibility"], default="optimize")
    p.add_argument("--round", dest="round_mode", choices=["none", "feasible", "hyperplane"], default="feasible")
    p.add_argument("--trials", type=int, default=100, help="hyperplane rounding trials")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None, help="report path (default stdout)")
    p.add_argument("--max-outer", dest="max_outer", type=int, default=64)
    return p


def _trace_rows(history) -> list[dict]:
    return [
        {
            "k": rec.k,
            "eta": rec.eta,
            "delta": rec.delta,
            "resid_l1": rec.resid_l1,
            "gamma_tilde": rec.gamma_tilde,
            "inner_iterations": rec.inner_iterations,
            "y_l1": rec.y_l1,
        }
        for rec in history
    ]


def _solution_sidecar(args) -> str:
    base = args.output if args.output else args.input
    return str(Path(base).with_suffix(Path(base).suffix + ".solution.bin"))


def _emit(report: dict, args) -> None:
    text = dumps_report(report) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def run_cli(argv) -> int:
    timings: dict[str, float] = {}
    total_start = time.perf_counter()
    try:
        args = _build_parser().parse_args(argv)
        if not (0.0 < args.epsilon < 1.0):
            raise _CliError("config", "epsilon must lie in (0, 1)")
        if not (0.0 < args.xi < 0.5):
            raise _CliError("config", "xi must lie in (0, 1/2)")
        if args.gamma is not None and abs(args.gamma) > 1.0:
            raise _CliError("config", "gamma must lie in [-1, 1]")
        if args.mode == "feasibility" and args.gamma is None:
            raise _CliError("config", "feasibility mode requires --gamma")
        if args.trials < 1:
            raise _CliError("config", "trials must be positive")
        if args.max_outer < 1:
            raise _CliError("config", "max-outer must be positive")
    except _CliError as exc:
        sys.stderr.write(f"error: {exc.category}: {exc.detail}\n")
        return EXIT_INPUT_ERROR

    t0 = time.perf_counter()
    try:
        matrix = parse_matrix(args.input, args.format)
    except (OSError, ParseError) as exc:
        category = "parse" if isinstance(exc, ParseError) else "input"
        sys.stderr.write(f"error: {category}: {exc}\n")
        return EXIT_INPUT_ERROR
    timings["parse_ms"] = (time.perf_counter() - t0) * 1e3

    fro = frobenius_norm(matrix)
    instance_block = {
        "path": args.input,
        "n": matrix.dim,
        "nnz": matrix.nnz,
        "s": matrix.row_sparsity,
        "fro_norm": fro,
    }

    if fro == 0.0:
        # Zero cost: every state is optimal with value 0; report the trivial answer.
        n = matrix.dim
        report = {
            "schema_version": SCHEMA_VERSION,
            "instance": instance_block,
            "config": {"epsilon": args.epsilon, "xi": args.xi, "zeta": 0.0,
                       "seed": args.seed, "mode": args.mode},
            "result": {
                "gamma_star_normalized": 0.0,
                "objective_original_scale": 0.0,
                "rounded_objective": 0.0 if args.round_mode != "none" else None,
                "bad_set_size": 0 if args.round_mode != "none" else None,
            },
            "trace": [],
            "timing": timings,
            "status": "solved",
        }
        if args.round_mode == "hyperplane":
            report["result"]["cut_value"] = 0.0
        timings["total_ms"] = (time.perf_counter() - total_start) * 1e3
        _emit(report, args)
        return EXIT_SOLVED

    cost = CostMatrix(matrix)
    cfg = RefineConfig.from_epsilon(args.epsilon, cost, xi=args.xi, max_outer=args.max_outer)
    config_block = {"epsilon": args.epsilon, "xi": args.xi, "zeta": cfg.zeta,
                    "seed": args.seed, "mode": args.mode}

    t0 = time.perf_counter()
    try:
        if args.gamma is None:
            gamma_star, tuples, final = binary_search_gamma(cost, args.epsilon, cfg)
        else:
            tuples, final = refine_solve(cost, args.gamma, cfg)
            gamma_star = final.gamma_tilde
    except InfeasibleError as exc:
        timings["solve_ms"] = (time.perf_counter() - t0) * 1e3
        timings["total_ms"] = (time.perf_counter() - total_start) * 1e3
        report = {
            "schema_version": SCHEMA_VERSION,
            "instance": instance_block,
            "config": config_block,
            "result": {"gamma_star_normalized": None, "objective_original_scale": None,
                       "rounded_objective": None, "bad_set_size": None,
                       "certificate": exc.certificate},
            "trace": [],
            "timing": timings,
            "status": "infeasible",
        }
        _emit(report, args)
        sys.stderr.write(f"error: infeasible: gamma={args.gamma} certified infeasible ({exc.certificate})\n")
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        sys.stderr.write(f"error: nonconvergence: {exc}\n")
        return EXIT_NONCONVERGENCE
    timings["solve_ms"] = (time.perf_counter() - t0) * 1e3

    result_block = {
        "gamma_star_normalized": gamma_star,
        "objective_original_scale": gamma_star * cost.scale,
        "rounded_objective": None,
        "bad_set_size": None,
    }

    t0 = time.perf_counter()
    if args.round_mode != "none":
        sol = round_to_feasible(final, cfg.zeta, cost)
        result_block["rounded_objective"] = sol.objective
        result_block["bad_set_size"] = sol.bad_set_size
        if args.round_mode == "feasible":
            sidecar = _solution_sidecar(args)
            Path(sidecar).write_bytes(np.ascontiguousarray(sol.x_matrix, dtype=np.float64).tobytes())
            result_block["solution_path"] = sidecar
        if args.round_mode == "hyperplane":
            _, cut = hyperplane_round(sol.x_matrix, cost, trials=args.trials, seed=args.seed)
            result_block["cut_value"] = cut
    timings["round_ms"] = (time.perf_counter() - t0) * 1e3
    timings["total_ms"] = (time.perf_counter() - total_start) * 1e3

    report = {
        "schema_version": SCHEMA_VERSION,
        "instance": instance_block,
        "config": config_block,
        "result": result_block,
        "trace": _trace_rows(final.history),
        "timing": timings,
        "status": "solved",
    }
    _emit(report, args)
    return EXIT_SOLVED


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
