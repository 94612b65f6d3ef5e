"""Command-line front end.

Subcommands: ``solve`` (run the equilibrium solver on a config or a
bundled example), ``check`` (certify candidate reduced prices),
``recover`` (unfold reduced prices into goods/contract/state prices),
and ``list-examples``.  Exit codes: 0 success/converged, 1 input
error, 2 solver stopped without converging.
"""

from __future__ import annotations

import argparse
import sys
import time
from typing import Optional

import numpy as np
import tomli

from .economy import (ConfigError, Economy, TildePrices, ValidationError,
                      load_economy_file)
from .examples import example_description, example_names, get_example
from .market import aggregate_excess_supply, infimum_walrasian
from .noarb import ZeroStatePriceError, check_no_arbitrage, recover_prices
from .solver import (SolverConfig, is_epsilon_equilibrium, solve_equilibrium,
                     trace_header, write_trace_csv)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2


def _fmt_matrix(m: np.ndarray) -> str:
    return "[" + ", ".join(
        "[" + ", ".join(repr(float(x)) for x in row) + "]" for row in m) + "]"


def _fmt_vector(v: np.ndarray) -> str:
    return "[" + ", ".join(repr(float(x)) for x in v) + "]"


def certified_report(econ: Economy, prices: TildePrices,
                     agent_tol: float = 1e-6):
    """Market report at fixed prices via an annealed demand evaluation.

    Agent problems can have several optima at razor-edge prices; a cold
    exact solve may then land on an optimum far from the market-clearing
    one.  Chaining solves through a decreasing position-smoothing ladder
    selects the small-position optimum deterministically, matching the
    selection the solver itself converges through.
    """
    warm = None
    for tau in (1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001, 0.0):
        warm = aggregate_excess_supply(econ, prices, warm=warm,
                                       agent_tol=agent_tol,
                                       position_smoothing=tau,
                                       best_effort=True)
    return warm


def _load_input_economy(args) -> Economy:
    if getattr(args, "example", None):
        return get_example(args.example)
    if not getattr(args, "config", None):
        raise ConfigError("provide a config path or --example NAME")
    return load_economy_file(args.config)


def _read_prices(path, shape) -> TildePrices:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read prices file: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed prices file: {exc}") from exc
    if "p_tilde" not in raw:
        raise ConfigError("prices file must contain a p_tilde matrix")
    values = np.asarray(raw["p_tilde"], dtype=float)
    if values.ndim != 2 or values.shape != shape:
        raise ConfigError(
            f"p_tilde: expected shape {shape[0]}x{shape[1]}, got {values.shape}")
    return TildePrices(values)


def _solver_config(args) -> SolverConfig:
    kwargs = {}
    if args.tol is not None:
        kwargs["epsilon"] = args.tol
    if args.max_iter is not None:
        kwargs["max_outer_iters"] = args.max_iter
    if args.r0 is not None:
        kwargs["r0"] = args.r0
    if args.r_growth is not None:
        kwargs["r_growth"] = args.r_growth
    if args.r_max is not None:
        kwargs["r_max"] = args.r_max
    if args.k0 is not None:
        kwargs["k0"] = args.k0
    if args.seed is not None:
        kwargs["rng_seed"] = args.seed
    return SolverConfig(**kwargs)


def _result_text(result, epsilon: float, source: str) -> str:
    lines = [
        f'source = "{source}"',
        f'status = "{result.status}"',
        f"iterations = {result.iterations}",
        f"epsilon = {epsilon!r}",
        f"timestamp = {time.time()!r}",
        f"p_tilde = {_fmt_matrix(result.p_tilde.values)}",
        f"es = {_fmt_matrix(result.final_report.es)}",
        f"ec = {_fmt_vector(result.final_report.financial_imbalance)}",
    ]
    if result.recovered is not None:
        rec = result.recovered
        lines.append(f"goods_prices = {_fmt_matrix(rec.goods_prices)}")
        lines.append(f"contract_prices = {_fmt_vector(rec.contract_prices)}")
        lines.append(f"state_prices = {_fmt_vector(rec.state_prices)}")
        if rec.interest_rate is not None:
            lines.append(f"interest_rate = {float(rec.interest_rate)!r}")
    return "\n".join(lines) + "\n"


def _emit(text: str, out: Optional[str], quiet: bool) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        if not quiet:
            sys.stdout.write(text)
    elif not quiet:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    econ = _load_input_economy(args)
    cfg = _solver_config(args)
    result = solve_equilibrium(econ, cfg)
    source = args.example if args.example else args.config
    _emit(_result_text(result, cfg.epsilon, source), args.out, args.quiet)
    if args.trace:
        if result.trace:
            write_trace_csv(result.trace, args.trace)
        else:  # converged at the start point: header-only trace
            with open(args.trace, "w", encoding="utf-8") as fh:
                fh.write(trace_header(econ.price_shape) + "\n")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_check(args) -> int:
    econ = _load_input_economy(args)
    prices = _read_prices(args.prices, econ.price_shape)
    epsilon = args.tol if args.tol is not None else 1e-2
    report = certified_report(econ, prices)
    ok = is_epsilon_equilibrium(report, epsilon)
    es_ok = bool(np.all(report.es >= -epsilon))
    ec_ok = bool(np.all(np.abs(report.financial_imbalance) <= epsilon))
    inf_w = infimum_walrasian(report, rho=1.0, dual_bound=4.0)
    lines = [
        f"es = {_fmt_matrix(report.es)}",
        f"ec = {_fmt_vector(report.financial_imbalance)}",
        f"infimum_walrasian = {inf_w!r}",
        f"markets_within_tolerance = {str(es_ok).lower()}",
        f"contracts_within_tolerance = {str(ec_ok).lower()}",
        f"epsilon_equilibrium = {str(ok).lower()}",
    ]
    _emit("\n".join(lines) + "\n", args.out, args.quiet)
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_recover(args) -> int:
    econ = _load_input_economy(args)
    prices = _read_prices(args.prices, econ.price_shape)
    rec = recover_prices(econ, prices)
    ok, witness = check_no_arbitrage(econ, rec)
    lines = [
        f"goods_prices = {_fmt_matrix(rec.goods_prices)}",
        f"contract_prices = {_fmt_vector(rec.contract_prices)}",
        f"state_prices = {_fmt_vector(rec.state_prices)}",
        f"arbitrage_free = {str(ok).lower()}",
    ]
    if rec.interest_rate is not None:
        lines.insert(3, f"interest_rate = {float(rec.interest_rate)!r}")
    if witness is not None:
        lines.append(f"arbitrage_portfolio = {_fmt_vector(witness)}")
    _emit("\n".join(lines) + "\n", args.out, args.quiet)
    return EXIT_OK


def cmd_list_examples(args) -> int:
    lines = [f"{name}: {example_description(name)}" for name in example_names()]
    _emit("\n".join(lines) + "\n", args.out, args.quiet)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="awel",
        description="Equilibrium solver for two-stage exchange economies "
                    "with incomplete financial markets.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_solver_flags=False):
        p.add_argument("--example", choices=example_names(),
                       help="use a bundled example economy")
        p.add_argument("--tol", type=float, default=None,
                       help="equilibrium tolerance epsilon")
        p.add_argument("--out", default=None, help="write output to this file")
        p.add_argument("--quiet", action="store_true",
                       help="suppress stdout output")
        if with_solver_flags:
            p.add_argument("--max-iter", type=int, default=None)
            p.add_argument("--r0", type=float, default=None)
            p.add_argument("--r-growth", type=float, default=None)
            p.add_argument("--r-max", type=float, default=None)
            p.add_argument("--k0", type=float, default=None)
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--trace", default=None,
                           help="write the iteration trace CSV here")

    p_solve = sub.add_parser("solve", help="solve for an epsilon-equilibrium")
    p_solve.add_argument("config", nargs="?", help="economy config path")
    common(p_solve, with_solver_flags=True)
    p_solve.set_defaults(func=cmd_solve)

    p_check = sub.add_parser("check", help="certify candidate reduced prices")
    p_check.add_argument("config", nargs="?", help="economy config path")
    p_check.add_argument("prices", help="TOML file with a p_tilde matrix")
    common(p_check)
    p_check.set_defaults(func=cmd_check)

    p_rec = sub.add_parser("recover",
                           help="unfold reduced prices into p, q, sigma")
    p_rec.add_argument("config", nargs="?", help="economy config path")
    p_rec.add_argument("prices", help="TOML file with a p_tilde matrix")
    common(p_rec)
    p_rec.set_defaults(func=cmd_recover)

    p_list = sub.add_parser("list-examples", help="list bundled economies")
    common(p_list)
    p_list.set_defaults(func=cmd_list_examples)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, ZeroStatePriceError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
