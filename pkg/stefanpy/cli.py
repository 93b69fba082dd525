"""Command-line front end: simulate | limit | converge | validate | config

Exit codes: 0 success, 1 failed validation property, 2 configuration error,
3 numerical failure, 4 experiment threshold exceeded.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .config import ConfigurationException, RunConfig, example_config, load_config
from .experiment import ExperimentThresholdException, run_convergence
from .limit import melting_enhancement_report, solve_limit
from .manifest import RunManifest
from .solver import NumericalBlowUpException, simulate_path
from .validation import default_suite

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_THRESHOLD = 4

OUT_ENV = 'STEFANPY_OUT'


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    logging.getLogger().setLevel(level)
    logging.captureWarnings(True)


def output_directory(args: argparse.Namespace, cfg: RunConfig) -> Path:
    if getattr(args, 'out', None):
        return Path(args.out)
    if cfg.output.directory:
        return Path(cfg.output.directory)
    return Path(os.environ.get(OUT_ENV, 'runs'))


def _overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.override or [])
    if getattr(args, 'seed', None) is not None:
        overrides += [f"noise.seed={args.seed}", f"experiment.base_seed={args.seed}"]
    if getattr(args, 'threads', None) is not None:
        overrides.append(f"experiment.threads={args.threads}")
    return overrides


def _prepare(args: argparse.Namespace, command: str):
    cfg = load_config(args.config, _overrides(args))
    out = output_directory(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out, RunManifest(out, command, cfg.resolved())


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg, out, manifest = _prepare(args, 'simulate')
    solver_cfg = cfg.solver_config()
    x0 = cfg.initial_field()

    log.info("simulating n=%d N=%s dt=%g T=%g scheme=%s", solver_cfg.grid.n,
             cfg.noise.N if cfg.noise.enabled else 'off', solver_cfg.dt, solver_cfg.T,
             solver_cfg.scheme)
    try:
        with manifest.subrun('simulate'):
            trajectory, diagnostics = simulate_path(x0, solver_cfg, replica=0)
            if cfg.output.snapshots:
                manifest.record(trajectory.write(out / 'snapshots'))
            manifest.record(diagnostics.write(out))
    finally:
        manifest.write()

    print(f"wrote {len(manifest.ledger)} artifacts to {out}")
    return EXIT_OK


def cmd_limit(args: argparse.Namespace) -> int:
    cfg, out, manifest = _prepare(args, 'limit')
    limit_cfg = cfg.limit_config()
    x0 = cfg.initial_field()

    try:
        with manifest.subrun('limit'):
            trajectory = solve_limit(x0, limit_cfg)
            if cfg.output.snapshots:
                manifest.record(trajectory.write(out / 'snapshots'))
        if args.with_enhancement:
            with manifest.subrun('enhancement'):
                report = melting_enhancement_report(x0, limit_cfg)
                manifest.record(report.write(out / 'enhancement.csv'))
                manifest.extra['coefficient_gap'] = report.coefficient_gap
    finally:
        manifest.write()

    print(f"wrote {len(manifest.ledger)} artifacts to {out}")
    return EXIT_OK


def cmd_converge(args: argparse.Namespace) -> int:
    cfg, out, manifest = _prepare(args, 'converge')
    plan = cfg.plan()

    try:
        with manifest.subrun('converge'):
            report = run_convergence(plan, threads=cfg.experiment.threads)
            manifest.record(report.write(out))
    finally:
        manifest.write()

    for row in report.rows:
        print(f"N={row.N:4d}  c_N={row.sup_norm:.4e}  d_N={row.mean_distance:.4e}  "
              f"se={row.std_error:.2e}  aborted={row.aborted_paths}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    suite = default_suite(broken_symmetry=args.broken_symmetry)
    report = suite.run(only=args.property or None)

    if args.graph:
        Path(args.graph).write_text(suite.digraph(report).source)

    print(report.to_json() if args.json else report.to_text())
    if not report.passed:
        log.error("failed properties: %s", ', '.join(report.failed))
        return EXIT_PROPERTY_FAILED
    return EXIT_OK


def cmd_config(args: argparse.Namespace) -> int:
    if args.example:
        sys.stdout.write(example_config())
        return EXIT_OK

    cfg = load_config(args.config, _overrides(args))
    print(json.dumps(cfg.resolved(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='stefanpy', description="Stochastic Stefan problem with transport noise")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")

    verbosity = argparse.ArgumentParser(add_help=False)
    verbosity.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    verbosity.add_argument('-q', '--quiet', action='store_true', help="warnings only")

    common = argparse.ArgumentParser(add_help=False, parents=[verbosity])
    common.add_argument('--config', type=Path, help="YAML configuration (defaults when omitted)")
    common.add_argument('--override', action='append', metavar='PATH=VALUE',
                        help="dotted configuration override, e.g. time.dt=5e-5")

    runs = argparse.ArgumentParser(add_help=False)
    runs.add_argument('--out', type=Path, help=f"output directory (else ${OUT_ENV}, else ./runs)")
    runs.add_argument('--seed', type=int, help="seed of the noise streams")

    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common, runs], help="one stochastic path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('limit', parents=[common, runs], help="deterministic limit equation")
    p.add_argument('--with-enhancement', action='store_true',
                   help="also compare liquid fractions with and without the corrector")
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser('converge', parents=[common, runs], help="Monte Carlo convergence study")
    p.add_argument('--threads', type=int, help="worker threads (results do not depend on it)")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser('validate', parents=[verbosity], help="fast invariant suite")
    p.add_argument('--json', action='store_true', help="machine-readable report")
    p.add_argument('--graph', type=Path, help="write the prerequisite graph as graphviz source")
    p.add_argument('--property', action='append', help="run only the named properties")
    p.add_argument('--broken-symmetry', action='store_true',
                   help="negative control: break the radial symmetry of the noise family")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser('config', parents=[common], help="print the example or resolved configuration")
    p.add_argument('--example', action='store_true', help="commented default configuration")
    p.set_defaults(func=cmd_config)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        return args.func(args)
    except ConfigurationException as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowUpException as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ExperimentThresholdException as e:
        print(str(e), file=sys.stderr)
        for failure in e.failures:
            print(f"  {failure}", file=sys.stderr)
        return EXIT_THRESHOLD
