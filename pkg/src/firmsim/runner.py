"""Year loop: fields, demography and relocation, with snapshots and a run report."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ingest, kernels
from . import rng as krng
from .config import ScenarioConfig
from .demography import step_demography
from .relocation import step_relocation
from .spatial import compute_fields
from .world import N_SECTORS, WorldState, build_world

logger = logging.getLogger(__name__)

AGGREGATE_FIELDS = ("year", "sector", "firms", "employees", "closures", "spinoffs", "moves",
                    "growth", "closed_employees", "firm_residual", "employee_residual")


class RunError(RuntimeError):
    pass


@dataclass
class RunResult:
    state: WorldState
    aggregates: list[dict]
    snapshots: list[Path] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    iterations: int = 0


def initial_records(cfg: ScenarioConfig):
    """Registry records and municipality map for ``cfg``, read or generated."""
    if cfg.registry is not None:
        try:
            with open(cfg.registry, newline="") as fh:
                records = ingest.parse_registry(fh)
            with open(cfg.municipality_map, newline="") as fh:
                mmap = ingest.parse_municipality_map(fh, cfg.grid)
        except OSError as exc:
            raise RunError(f"cannot read input: {exc}") from exc
        return records, mmap
    syn = dict(cfg.synthetic or {})
    total = syn.get("firms")
    spec = ingest.default_synthetic_spec(cfg.grid, None if total is None else int(total),
                                       clustering=float(syn.get("clustering", 1.0)),
                                       block=int(syn.get("block", 5)))
    if "size_sigma" in syn:
        spec.size_sigma = float(syn["size_sigma"])
    return ingest.generate_synthetic(spec, cfg.seed)


def initial_state(cfg: ScenarioConfig) -> WorldState:
    records, mmap = initial_records(cfg)
    firms = ingest.assign_to_cells(records, mmap, cfg.seed, cfg.start_year)
    return build_world(firms, cfg.grid, cfg.start_year)


def _year_rows(year, before: WorldState, after: WorldState, outcome, moves) -> list[dict]:
    """Per-sector aggregates for one year plus the firm and employee balance residuals.

    The employee residual is evaluated by one exactly-rounded sum over
    end sizes, start sizes, growth and closure terms, so it is 0.0 exactly
    when the bookkeeping balances.
    """
    rows = []
    # movers were all alive at the start of the year
    moved_mask = np.isin(before.firm_id, np.array([m[0] for m in moves], dtype=np.int64))
    moved = np.bincount(before.sector[moved_mask], minlength=N_SECTORS + 1)
    for s in range(1, N_SECTORS + 1):
        m0 = before.sector == s
        m1 = after.sector == s
        new = after.size[m1].tolist()
        old = before.size[m0].tolist()
        if outcome is not None:
            b = outcome.sector_balance(s)
            om = outcome.sector == s
            grown = outcome.grown_size[om].tolist()
            oldo = outcome.old_size[om].tolist()
            closed = outcome.grown_size[om & outcome.closed_mask].tolist()
        else:
            b = {"closures": 0, "spinoffs": 0, "growth": 0.0, "closed_employees": 0.0}
            grown = oldo = closed = []
        n0, n1 = int(m0.sum()), int(m1.sum())
        firm_res = n1 - (n0 - b["closures"] + b["spinoffs"])
        emp_res = math.fsum(new + [-x for x in old] + [-x for x in grown] + oldo + closed)
        rows.append({
            "year": year, "sector": s, "firms": n1, "employees": math.fsum(new),
            "closures": b["closures"], "spinoffs": b["spinoffs"], "moves": int(moved[s]),
            "growth": b["growth"], "closed_employees": b["closed_employees"],
            "firm_residual": firm_res, "employee_residual": emp_res,
        })
    return rows


def simulate(cfg: ScenarioConfig, state: WorldState | None = None, out_dir: Path | None = None,
             observer=None) -> RunResult:
    """Run the configured scenario; write snapshots to ``out_dir`` if given.

    ``observer(state)``, if given, is called on the initial state and after
    every simulated year.
    """
    t_start = time.perf_counter()
    if state is None:
        state = initial_state(cfg)
    timings = {"fields": 0.0, "demography": 0.0, "relocation": 0.0, "output": 0.0}
    snaps: list[Path] = []
    aggregates = _year_rows(state.year, state, state, None, [])

    def snapshot():
        if out_dir is None:
            return
        t0 = time.perf_counter()
        snaps.extend(ingest.write_snapshot(state, out_dir))
        timings["output"] += time.perf_counter() - t0

    snapshot()
    if observer is not None:
        observer(state)
    incremental = cfg.field_update == "incremental"
    iterations = 0
    while state.year < cfg.end_year:
        t0 = time.perf_counter()
        fld = compute_fields(state, cfg.sectors, cfg.potential_method, cfg.potential_radius,
                             cfg.potential_tolerance, cfg.potential_weighting)
        t1 = time.perf_counter()
        timings["fields"] += t1 - t0
        before = state.copy()
        outcome = None
        moves = []
        for stage in (("demography", "relocation") if cfg.event_order == "demography-first"
                      else ("relocation", "demography")):
            ts = time.perf_counter()
            if stage == "demography":
                outcome = step_demography(state, cfg.sectors, cfg.seed, cfg.demography)
            else:
                moves = step_relocation(state, fld, cfg.sectors, cfg.relocation, cfg.seed,
                                        cfg.utility_form, incremental)
            timings[stage] += time.perf_counter() - ts
        state.year += 1
        iterations += 1
        rows = _year_rows(state.year, before, state, outcome, moves)
        aggregates.extend(rows)
        logger.info("year %d: %d firms, %.1f employees, %d closures, %d spin-offs, %d moves",
                    state.year, state.n_firms, math.fsum(r["employees"] for r in rows),
                    sum(r["closures"] for r in rows), sum(r["spinoffs"] for r in rows), len(moves))
        if observer is not None:
            observer(state)
        if (state.year - cfg.start_year) % cfg.snapshot_every == 0 or state.year == cfg.end_year:
            snapshot()
    timings["total"] = time.perf_counter() - t_start
    return RunResult(state, aggregates, snaps, timings, iterations)


def write_aggregates(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_FIELDS)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in AGGREGATE_FIELDS])


def run(cfg: ScenarioConfig, out_dir=None) -> RunResult:
    """Validate, simulate and write snapshots, ``aggregates.csv`` and ``report.json``."""
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RunError(f"cannot create output directory {out}: {exc}") from exc
    result = simulate(cfg, out_dir=out)
    write_aggregates(result.aggregates, out / "aggregates.csv")
    report = {
        "seed": cfg.seed,
        "rng": krng.ALGORITHM,
        "backend": kernels.BACKEND,
        "start_year": cfg.start_year,
        "end_year": cfg.end_year,
        "iterations": result.iterations,
        "final_firms": result.state.n_firms,
        "snapshots": [p.name for p in result.snapshots],
        "max_abs_firm_residual": max(abs(r["firm_residual"]) for r in result.aggregates),
        "max_abs_employee_residual": max(abs(r["employee_residual"]) for r in result.aggregates),
        "timings_seconds": result.timings,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return result
