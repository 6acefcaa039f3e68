"""Command line entry point: ``firmsim run|calibrate|analyze|validate-config|generate``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import analysis, calibration, ingest, runner
from .config import PRESETS, ConfigError, load_config
from .world import SectorParams, WorldError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("firmsim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _config_args(p):
    p.add_argument("--config", type=Path, help="scenario TOML file")
    p.add_argument("--preset", choices=PRESETS, help="named parameter preset")
    p.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="firmsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate a scenario")
    _config_args(p)
    p.add_argument("--out", type=Path, help="output directory (default: config output_dir)")

    p = sub.add_parser("validate-config", help="check a scenario without running it")
    _config_args(p)

    p = sub.add_parser("calibrate", help="fit sector demography parameters to aggregate targets")
    p.add_argument("--targets", type=Path, help="targets CSV (default: bundled 1950/2004 totals)")
    p.add_argument("--horizon", type=int, default=54)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--theta-max", type=float, default=0.05)
    p.add_argument("--out", type=Path, help="results CSV path or directory (default: stdout)")

    p = sub.add_parser("analyze", help="rank-size and concentration metrics of a snapshot")
    p.add_argument("snapshot", type=Path, help="firm snapshot or raster CSV")
    p.add_argument("--compare", type=Path, help="second snapshot for a cell-level difference report")
    p.add_argument("--out", type=Path, help="output directory (default: metrics to stdout)")

    p = sub.add_parser("generate", help="write a synthetic registry and municipality map")
    _config_args(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return ap


def _load(args):
    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.config is None and args.preset is None:
        raise ConfigError("one of --config or --preset is required")
    return load_config(args.config, args.preset, overrides)


def cmd_run(args) -> int:
    cfg = _load(args).validate()
    t0 = time.perf_counter()
    result = runner.run(cfg, args.out)
    out = args.out or cfg.output_dir
    print(f"{result.iterations} years simulated, {result.state.n_firms} firms, "
          f"{len(result.snapshots) // 2} snapshots in {out} ({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args).validate()
    src = f"registry {cfg.registry}" if cfg.registry else "synthetic registry"
    print(f"ok: {cfg.start_year}-{cfg.end_year}, grid {cfg.grid.ncols}x{cfg.grid.nrows}, {src}, seed {cfg.seed}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    if args.targets is None:
        targets = calibration.bundled_targets(args.horizon)
    else:
        try:
            with open(args.targets, newline="") as fh:
                targets = calibration.read_targets(fh, args.horizon)
        except FileNotFoundError:
            raise ConfigError(f"targets file not found: {args.targets}") from None
    spec = calibration.SearchSpec(tolerance=args.tolerance, theta_bounds=(0.0, args.theta_max))
    results = []
    for t in targets:
        try:
            r = calibration.fit_sector(t, spec)
        except (calibration.CalibrationError, ValueError, ArithmeticError) as exc:
            logger.warning("sector %d: %s", t.sector, exc)
            r = calibration.CalibrationResult(t.sector, replace(SectorParams(), epsilon=math.nan), math.nan,
                                              math.nan, math.nan, math.nan, math.nan, 0, False, str(exc))
        if not r.converged:
            logger.warning("sector %d not converged: rel_xi=%.3g rel_psi=%.3g", r.sector, r.rel_xi, r.rel_psi)
        results.append(r)
    if args.out is None:
        calibration.write_results(results, sys.stdout)
    else:
        path = args.out / "calibration.csv" if args.out.is_dir() else args.out
        with open(path, "w", newline="") as fh:
            calibration.write_results(results, fh)
        bad = [r.sector for r in results if not r.converged]
        print(f"{len(results)} sectors fitted, {len(bad)} not converged {bad if bad else ''}".rstrip())
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        counts = analysis.load_counts(args.snapshot)
        other = analysis.load_counts(args.compare) if args.compare else None
    except FileNotFoundError as exc:
        raise ConfigError(f"snapshot not found: {exc.filename}") from None
    metrics = analysis.analyze(counts)
    if args.out is None:
        analysis.write_metrics(metrics, sys.stdout)
        if other is not None:
            analysis.write_diff(analysis.diff(counts, other), sys.stdout)
        return EXIT_OK
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "metrics.csv", "w", newline="") as fh:
        analysis.write_metrics(metrics, fh)
    with open(args.out / "rank_size.csv", "w", newline="") as fh:
        analysis.write_rank_size(metrics, fh)
    if other is not None:
        with open(args.out / "diff.csv", "w", newline="") as fh:
            analysis.write_diff(analysis.diff(counts, other), fh)
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _load(args)
    records, mmap = runner.initial_records(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "registry.csv", "w", newline="") as fh:
        ingest.write_registry(records, fh)
    with open(args.out / "municipalities.csv", "w", newline="") as fh:
        ingest.write_municipality_map(mmap, fh)
    print(f"{len(records)} firms in {len(mmap)} municipalities written to {args.out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate-config": cmd_validate, "calibrate": cmd_calibrate,
            "analyze": cmd_analyze, "generate": cmd_generate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ingest.IngestError, calibration.CalibrationError, WorldError) as exc:
        print(f"firmsim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report any runtime failure with an exit code
        print(f"firmsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
