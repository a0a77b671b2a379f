"""CLI entry point for bioconvect."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .errors import (
    ConservationError,
    ConvergenceError,
    GridMismatchError,
    HypothesisViolation,
    SolverDivergence,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2
EXIT_SOLVER = 3
EXIT_INTERRUPTED = 130


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"✗ Error: {message}", file=sys.stderr)
        sys.exit(EXIT_ERROR)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="bioconvect",
        description=(
            "Stationary bioconvection solver with an existence/uniqueness certificate"
        ),
    )
    parser.add_argument(
        "--verbose", "-v", action="store_true", help="Enable debug output"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="Print the report as JSON")

    subparsers = parser.add_subparsers(dest="cmd", required=True, help="Subcommands")

    certify_parser = subparsers.add_parser(
        "certify", parents=[common], help="Evaluate the certificate of a config"
    )
    certify_parser.add_argument("config", help="Config file or shipped config name")
    certify_parser.add_argument("--csv", help="Also write the flat certificate as CSV")
    certify_parser.add_argument(
        "--no-precision-check",
        action="store_true",
        help="Skip the extended-precision cross-check",
    )

    solve_parser = subparsers.add_parser(
        "solve", parents=[common], help="Run the Picard solver"
    )
    solve_parser.add_argument(
        "config", nargs="+", help="Config file(s) or shipped names"
    )
    solve_parser.add_argument("--output-dir", help="Override output_dir of the config")
    solve_parser.add_argument(
        "--strict", action="store_true", help="Refuse uncertified data"
    )
    solve_parser.add_argument(
        "--jobs", type=int, help="Parallel solves (default: solver.jobs of the configs)"
    )

    verify_parser = subparsers.add_parser(
        "verify", parents=[common], help="Audit a stored solution"
    )
    verify_parser.add_argument("config", help="Config the fields were computed with")
    verify_parser.add_argument("fields", help="Field file (.bioc, .vtk or base path)")
    verify_parser.add_argument(
        "--oracle", action="store_true", help="Also compare Picard with Newton (<= 8^3)"
    )

    mms_parser = subparsers.add_parser(
        "mms", parents=[common], help="Manufactured-solution convergence table"
    )
    mms_parser.add_argument("case", help="rest, stratified or swirl")
    mms_parser.add_argument(
        "grids", help="Comma-separated halving sequence, e.g. 8,16,32"
    )
    mms_parser.add_argument("--csv", help="Write the table as CSV")
    mms_parser.add_argument(
        "--jobs", type=int, help="Solve grids in parallel (default: solver.jobs)"
    )
    mms_parser.add_argument(
        "--config", help="Take groups, r and alphas from this config"
    )
    return parser


def main(argv: Sequence[str] | None = None) -> None:
    """Run the CLI entry point."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage()
        sys.exit(EXIT_ERROR)
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.cmd == "certify":
            code = cmd_certify(args)
        elif args.cmd == "solve":
            code = cmd_solve(args)
        elif args.cmd == "verify":
            code = cmd_verify(args)
        else:
            code = cmd_mms(args)
    except KeyboardInterrupt:
        print("\n\n✗ Interrupted by user")
        sys.exit(EXIT_INTERRUPTED)
    except Exception as exc:  # pragma: no cover - top-level fallback
        if args.verbose:
            import traceback

            traceback.print_exc()
        else:
            print(f"✗ Error: {exc}")
        sys.exit(EXIT_ERROR)
    sys.exit(code)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_certify(args: argparse.Namespace) -> int:
    """Print the certificate; exit 2 when an existence check fails."""
    from .config import build_run, resolve_config
    from .report import (
        certificate_csv,
        certificate_report,
        dumps_report,
        format_certificate,
    )

    config = resolve_config(args.config)
    setup = build_run(config, check_precision=not args.no_precision_check)
    cert = setup.certificate
    if args.json:
        print(dumps_report(certificate_report(cert)))
    else:
        print(format_certificate(cert))
    if args.csv:
        Path(args.csv).write_text(certificate_csv(cert), encoding="utf-8")
        if not args.json:
            print(f"✓ CSV saved: {args.csv}")

    failed = [c for c in cert.existence_checks if not c.satisfied]
    if failed:
        if not args.json:
            for c in failed:
                print(f"✗ existence check {c.name} fails (slack {c.slack})")
        return EXIT_CHECK_FAILED
    if not args.json:
        verdict = "unique" if cert.unique else "existence only"
        print(f"✓ Certified: {verdict}")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    """Solve one or more configs; writes fields.vtk, fields.bioc and report.json."""
    from .config import build_run, resolve_config
    from .fieldio import write_fields
    from .report import dumps_report, format_solve, solve_report, write_json_report
    from .solver import solve_stationary, sweep

    setups = [build_run(resolve_config(c)) for c in args.config]
    for setup in setups:
        cert = setup.certificate
        if not cert.exists:
            if args.strict or setup.config.strict:
                failed = next(c for c in cert.existence_checks if not c.satisfied)
                print(
                    f"✗ existence check {failed.name} fails; "
                    "refusing to solve in strict mode"
                )
                return EXIT_CHECK_FAILED
            print("⚠ existence hypotheses fail; solving anyway")

    try:
        if len(setups) == 1:
            s = setups[0]
            results = [
                solve_stationary(
                    s.problem.initial_state(),
                    s.problem,
                    tol=s.config.solver.tol,
                    max_outer=s.config.solver.max_outer,
                )
            ]
        else:
            jobs = args.jobs
            if jobs is None:
                jobs = max(s.config.solver.jobs for s in setups)
            results = sweep(
                [s.problem for s in setups],
                jobs=jobs,
                settings=[
                    (s.config.solver.tol, s.config.solver.max_outer) for s in setups
                ],
            )
    except HypothesisViolation as exc:
        print(f"✗ {exc}")
        return EXIT_CHECK_FAILED
    except (SolverDivergence, ConvergenceError, ConservationError) as exc:
        print(f"✗ Solver failed: {exc}")
        return EXIT_SOLVER

    code = EXIT_OK
    for name, setup, (state, history, report) in zip(args.config, setups, results):
        out_dir = Path(args.output_dir or setup.config.output_dir)
        if len(setups) > 1:
            out_dir = out_dir / Path(name).stem
        vtk_path, bioc_path = write_fields(state, out_dir / "fields")
        document = solve_report(
            setup.certificate,
            report,
            history,
            {"vtk": str(vtk_path), "sidecar": str(bioc_path)},
        )
        report_path = write_json_report(document, out_dir / "report.json")
        if args.json:
            print(dumps_report(document))
        else:
            print(format_solve(report))
            print(f"✓ Fields saved: {vtk_path}, {bioc_path}")
            print(f"✓ Report saved: {report_path}")
        if not report.converged:
            print(f"✗ Picard did not converge in {report.iterations} iterations")
            code = EXIT_SOLVER
    return code


def cmd_verify(args: argparse.Namespace) -> int:
    """A-priori and wall-flux audits of stored fields; exit 2 when one fails.

    With --oracle, a Picard/Newton disagreement also exits 2.
    """
    from .config import build_run, resolve_config
    from .fieldio import read_fields
    from .report import dumps_report, format_audits, verify_report
    from .verify import audit_apriori, audit_flux, oracle_equivalence

    setup = build_run(resolve_config(args.config))
    state = read_fields(args.fields)
    if state.grid != setup.grid:
        raise GridMismatchError(
            f"fields are on {state.grid.shape}, config expects {setup.grid.shape}"
        )
    audits = [audit_apriori(state, setup.certificate), audit_flux(state, setup.problem)]
    oracle = oracle_equivalence(setup.problem) if args.oracle else None
    if args.json:
        print(dumps_report(verify_report(audits, oracle)))
    else:
        print(format_audits(audits, oracle))
    passed = all(a.passed for a in audits) and (oracle is None or oracle.agreed)
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_mms(args: argparse.Namespace) -> int:
    """Convergence table of a manufactured case."""
    from .config import DimensionlessSection, RunConfig, build_run, resolve_config
    from .models import ChamberDomain, DimensionlessGroups, default_consumption_function
    from .report import dumps_report, format_mms, mms_report
    from .verify import convergence_study, convergence_table_csv

    try:
        grids = [int(g) for g in args.grids.split(",") if g.strip()]
    except ValueError:
        print(f"✗ Invalid grid list: {args.grids}")
        return EXIT_ERROR

    if args.config:
        setup = build_run(resolve_config(args.config), check_precision=False)
        domain, groups, r = setup.grid.domain, setup.groups, setup.r
        config = setup.config
    else:
        config = RunConfig()
        domain = ChamberDomain()
        d = DimensionlessSection()
        groups = DimensionlessGroups(d.S_c, d.gamma, d.chi, d.delta, d.beta)
        cons = config.consumption
        r = default_consumption_function(cons.c_star, cons.width)

    table = convergence_study(
        args.case,
        grids,
        groups,
        r,
        domain=domain,
        alpha1=config.alpha.alpha1,
        alpha2=config.alpha.alpha2,
        gravity=config.gravity,
        jobs=args.jobs if args.jobs is not None else config.solver.jobs,
    )
    if args.json:
        print(dumps_report(mms_report(table)))
    else:
        print(format_mms(table))
    if args.csv:
        Path(args.csv).write_text(convergence_table_csv(table), encoding="utf-8")
        if not args.json:
            print(f"✓ CSV saved: {args.csv}")
    if table.non_monotone and not args.json:
        print(f"⚠ Non-monotone errors: {', '.join(table.non_monotone)}")
    return EXIT_OK
