"""Command-line interface.

Subcommands
-----------
``price``         one scheme (or all) for one ``S0`` and one ``n``
``table1``        the full max-call grid: 3 initial prices x 3 penalty levels
``nsweep``        implicit-scheme prices for increasing ``n`` at fixed ``lambda``
``defaultcheck``  defaultable-claim Monte Carlo check on a small one-asset market
``proptest``      grid property checks of the driver functions

Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 numerical
error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import __version__
from .errors import ConfigurationError, DomainError, EngineError, InsufficientDataError, NumericalError
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    ReportRow,
    SchemeSelector,
    emit_report,
    load_config,
    run_experiment,
)
from .market import TimeGrid, export_paths_csv, simulate_paths
from .properties import run_driver_properties

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("entropic_stopping")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ConfigurationError, InsufficientDataError)):
        return EXIT_CONFIG
    if isinstance(exc, (NumericalError, DomainError, ArithmeticError, EngineError)):
        return EXIT_NUMERIC
    return EXIT_NUMERIC


def _report_code(report: ExperimentReport) -> int:
    if report.ok:
        return EXIT_OK
    return _exit_code(report.errors[0]) if report.errors else EXIT_NUMERIC


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment configuration")
    common.add_argument("--s0", type=_float_list, help="initial price(s), comma-separated")
    common.add_argument("--n", type=_float_list, help="penalty level(s), comma-separated")
    common.add_argument("--lambda", dest="lam", type=float,
                        help="temperature (default: lambda = 1/n)")
    common.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    common.add_argument("--steps", type=int, help="number of time steps N")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--theta", type=float, help="implicitness weight in [0, 1]")
    common.add_argument("--output", help="CSV output path")
    common.add_argument("--workers", type=int, help="threads for path simulation")
    common.add_argument("--no-timing", action="store_true",
                        help="write runtime_ms = 0 so reruns give byte-identical CSV")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="entropic-stopping", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("price", parents=[common], help="price one configuration")
    sp.add_argument("--scheme", default="implicit",
                    choices=["implicit", "pia", "classical", "european", "binomial", "all"])
    sp.add_argument("--target", choices=["value", "cashflow"], help="regression target")
    sp.add_argument("--binomial-steps", type=int)
    sp.add_argument("--export-paths", help="write the simulated paths to this CSV")
    sp.add_argument("--dump-coefficients", help="write per-step regression coefficients to this CSV")

    st = sub.add_parser("table1", parents=[common], help="full max-call reproduction grid")
    st.add_argument("--binomial-steps", type=int)

    sn = sub.add_parser("nsweep", parents=[common], help="prices for increasing n at fixed lambda")
    sn.set_defaults(n_default=(2, 4, 8, 16, 32, 64), lam_default=0.1)

    sd = sub.add_parser("defaultcheck", parents=[common], help="defaultable-claim check")
    sd.add_argument("--epsilon", type=_float_list, help="stopping thresholds (default 0.5, 0.1, 0.01 x lambda)")
    sd.add_argument("--n-proxy", type=float, default=1000.0)
    sd.add_argument("--cap", type=float, default=1e6)

    sub.add_parser("proptest", parents=[common], help="driver property checks")
    return p


def _config(args, n_paths_default: int = 100_000) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig(n_paths=n_paths_default)
    kw = {}
    if args.s0:
        kw["s0_values"] = args.s0
    if args.n:
        kw["n_values"] = args.n
    if args.lam is not None:
        kw["lam"] = args.lam
    if args.paths is not None:
        kw["n_paths"] = args.paths
    if args.steps is not None:
        kw["grid"] = TimeGrid(N=args.steps, T=cfg.market.T)
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.theta is not None:
        kw["theta"] = args.theta
    if args.workers is not None:
        kw["workers"] = args.workers
    if args.no_timing:
        kw["timing"] = False
    if args.output:
        kw["output_path"] = args.output
    if getattr(args, "binomial_steps", None):
        kw["binomial_steps"] = args.binomial_steps
    return replace(cfg, **kw)


def _print_progress(row: ReportRow) -> None:
    log.info("S0=%g n=%s %s: %.6g", row.s0, row.n, row.scheme, row.price)


def cmd_price(args) -> int:
    cfg = _config(args)
    if not args.s0 and not args.config:
        cfg = replace(cfg, s0_values=(100.0,))
    if not args.n and not args.config:
        cfg = replace(cfg, n_values=(100.0,))
    names = ["implicit", "pia", "classical", "european", "binomial"] if args.scheme == "all" else [args.scheme]
    cfg = replace(cfg, schemes=tuple(SchemeSelector(nm, target=args.target if nm in
                                                    ("implicit", "pia", "classical") else None)
                                     for nm in names))

    def on_paths(s0, paths, ctx):
        if args.export_paths:
            export_paths_csv(paths, args.export_paths)
        if args.dump_coefficients and ctx is not None:
            _dump_coefficients(ctx, args.dump_coefficients)

    report = run_experiment(cfg, _print_progress, on_paths)
    emit_report(report, cfg.output_path)
    return _report_code(report)


def _dump_coefficients(ctx, path) -> None:
    """Coefficients of the next-step payoff regressed on the basis at each step."""
    from .regression import RegressionModel
    model = RegressionModel(ctx.basis)
    P = ctx.payoffs
    for k in range(P.shape[1] - 1):
        proj = ctx.projector(k)
        model.coefficients[k] = proj.coefficients(P[:, k + 1])
        model.rank_deficient[k] = proj.rank_deficient
    model.to_csv(path)


def cmd_table1(args) -> int:
    cfg = _config(args)
    report = run_experiment(cfg, _print_progress)
    emit_report(report, cfg.output_path)
    return _report_code(report)


def cmd_nsweep(args) -> int:
    from .singular import n_sweep
    cfg = _config(args)
    lam = args.lam if args.lam is not None else args.lam_default
    n_values = args.n or args.n_default
    s0_values = args.s0 or (100.0,)
    report = ExperimentReport()
    for s0 in s0_values:
        paths = simulate_paths(cfg.market.with_s0(s0), cfg.grid, cfg.n_paths, cfg.seed, cfg.workers)
        sweep = n_sweep(paths, cfg.payoff, lam, n_values, cfg.basis, cfg.theta)
        for n, price, se, ms in zip(sweep.n_values, sweep.prices, sweep.std_errors, sweep.runtimes_ms):
            report.rows.append(ReportRow(s0, n, lam, "implicit", price, se, ms if cfg.timing else 0.0,
                                         f"monotone_violation={sweep.monotone_violation:.6g}"))
    emit_report(report, cfg.output_path)
    return EXIT_OK


def cmd_defaultcheck(args) -> int:
    from .singular import run_default_check
    lam = args.lam if args.lam is not None else 0.5
    eps = args.epsilon or (0.5 * lam, 0.1 * lam, 0.01 * lam)
    reports = run_default_check(lam=lam, epsilons=eps, n_paths=args.paths or 50_000,
                                seed=args.seed if args.seed is not None else 2024,
                                n_proxy=args.n_proxy, cap=args.cap)
    report = ExperimentReport()
    ok = True
    for r in reports:
        bound = r.rep_estimate <= r.v_lambda_0 + 3 * r.std_error
        ok &= bound
        flags = (f"v_lambda_0={r.v_lambda_0:.6g};epsilon_stop={r.epsilon_stop:.6g};"
                 f"default_fraction={r.default_fraction:.6g};survival_deviation={r.survival_deviation:.6g};"
                 f"cap_engaged={r.cap_engaged};lower_bound={'ok' if bound else 'violated'}")
        report.rows.append(ReportRow(100.0, args.n_proxy, lam, "defaultcheck", r.rep_estimate,
                                     r.std_error, 0.0, flags))
    emit_report(report, args.output)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_proptest(args) -> int:
    results, seconds = run_driver_properties()
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name.ljust(width)}  {r.detail}")
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed in {seconds:.2f} s")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


COMMANDS = {"price": cmd_price, "table1": cmd_table1, "nsweep": cmd_nsweep,
            "defaultcheck": cmd_defaultcheck, "proptest": cmd_proptest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
