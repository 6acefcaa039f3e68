"""Registry and municipality-map I/O, cell assignment, synthetic data, snapshots."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, special

from . import rng as krng
from .world import N_SECTORS, CellId, Firm, GridGeometry, WorldState

REGISTRY_FIELDS = ("firm_id", "sector", "size", "municipality_id")
MAP_FIELDS = ("municipality_id", "col", "row")
SNAPSHOT_FIELDS = ("firm_id", "sector", "size", "col", "row", "year")
RASTER_FIELDS = ("col", "row", "sector", "count")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class RegistryRecord:
    firm_id: int
    sector: int
    size: int
    municipality_id: int


MunicipalityMap = dict  # municipality_id -> list[CellId]


def _reader(stream, required, what):
    fh = io.StringIO(stream) if isinstance(stream, str) else stream
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        raise IngestError(f"{what}: missing header row")
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestError(f"{what}: header lacks columns {missing}")
    return reader, {c: header.index(c) for c in required}


def _int(row, cols, name, lineno, what):
    try:
        return int(row[cols[name]])
    except IndexError:
        raise IngestError(f"{what} line {lineno}: missing column {name!r}") from None
    except ValueError:
        raise IngestError(f"{what} line {lineno}, column {name!r}: not an integer: {row[cols[name]]!r}") from None


def parse_registry(stream) -> list[RegistryRecord]:
    reader, cols = _reader(stream, REGISTRY_FIELDS, "registry")
    out = []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not x.strip() for x in row):
            continue
        fid, sector, size, muni = (_int(row, cols, c, lineno, "registry") for c in REGISTRY_FIELDS)
        if not 1 <= sector <= N_SECTORS:
            raise IngestError(f"registry line {lineno}, column 'sector': {sector} outside 1..{N_SECTORS}")
        if size < 1:
            raise IngestError(f"registry line {lineno}, column 'size': {size} is not a positive employee count")
        if fid in seen:
            raise IngestError(f"registry line {lineno}, column 'firm_id': duplicate firm_id {fid}")
        seen.add(fid)
        out.append(RegistryRecord(fid, sector, size, muni))
    return out


def write_registry(records, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(REGISTRY_FIELDS)
    for r in records:
        w.writerow((r.firm_id, r.sector, r.size, r.municipality_id))


def parse_municipality_map(stream, grid: GridGeometry | None = None) -> MunicipalityMap:
    reader, cols = _reader(stream, MAP_FIELDS, "municipality map")
    out: MunicipalityMap = {}
    owner = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not x.strip() for x in row):
            continue
        muni, col, r = (_int(row, cols, c, lineno, "municipality map") for c in MAP_FIELDS)
        cell = CellId(col, r)
        if grid is not None and not grid.contains(cell):
            raise IngestError(f"municipality map line {lineno}: cell {tuple(cell)} outside grid")
        if cell in owner and owner[cell] != muni:
            raise IngestError(f"municipality map line {lineno}: cell {tuple(cell)} already belongs to {owner[cell]}")
        owner[cell] = muni
        out.setdefault(muni, []).append(cell)
    return out


def write_municipality_map(mmap: MunicipalityMap, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(MAP_FIELDS)
    for muni in sorted(mmap):
        for c in mmap[muni]:
            w.writerow((muni, c.col, c.row))


def assign_to_cells(records, mmap: MunicipalityMap, seed: int, year: int = 0) -> list[Firm]:
    """Place each firm in a cell drawn uniformly from its municipality.

    The draw for a firm depends only on (seed, firm_id), so the assignment is
    reproducible and independent of record order.
    """
    records = list(records)
    for r in records:
        if r.municipality_id not in mmap:
            raise IngestError(f"firm {r.firm_id}: unknown municipality_id {r.municipality_id}")
        if not mmap[r.municipality_id]:
            raise IngestError(f"municipality {r.municipality_id} has no cells")
    if not records:
        return []
    ids = np.array([r.firm_id for r in records], dtype=np.int64)
    u = krng.uniform(seed, 0, ids, krng.ASSIGN)
    firms = []
    for r, ui in zip(records, u.tolist()):
        cells = mmap[r.municipality_id]
        firms.append(Firm(r.firm_id, r.sector, float(r.size), cells[int(ui * len(cells))], year))
    return firms


# synthetic registries ------------------------------------------------------


def expected_ceil_lognormal(mu: float, sigma: float) -> float:
    """E[ceil(X)] for X ~ lognormal(mu, sigma), i.e. sum_k P(X > k) for k >= 0."""
    if sigma == 0:
        return float(math.ceil(math.exp(mu)))
    k_max = int(min(2e4, max(10.0, math.exp(mu + 8 * sigma))))
    k = np.arange(1, k_max + 1, dtype=np.float64)
    z = (np.log(k) - mu) / sigma
    head = 1.0 + float(special.ndtr(-z).sum())
    # tail: integral of the survival function beyond k_max minus half its end value
    lk = math.log(k_max)
    integral = math.exp(mu + 0.5 * sigma**2) * special.ndtr((mu + sigma**2 - lk) / sigma) - k_max * special.ndtr((mu - lk) / sigma)
    return head + max(integral, 0.0) - 0.5 * float(special.ndtr(-z[-1]))


def lognormal_mu_for_mean(mean: float, sigma: float) -> float:
    """mu such that ceil(lognormal(mu, sigma)) has the requested mean (> 1)."""
    if mean <= 1:
        raise IngestError("integer sizes of at least 1 cannot have mean <= 1")
    hi = math.log(mean) + 1.0
    lo = math.log(mean) - 0.5 * sigma**2 - 30.0
    return optimize.brentq(lambda m: expected_ceil_lognormal(m, sigma) - mean, lo, hi, xtol=1e-12)


@dataclass
class SyntheticSpec:
    grid: GridGeometry
    counts: dict[int, int]
    mean_size: dict[int, float] = field(default_factory=dict)
    size_sigma: float = 1.0
    block: int = 5
    clustering: float = 0.0


def municipality_blocks(grid: GridGeometry, block: int) -> MunicipalityMap:
    """Tile the grid into contiguous block x block municipalities (row-major ids)."""
    mmap: MunicipalityMap = {}
    nbc = math.ceil(grid.ncols / block)
    for row in range(grid.nrows):
        for col in range(grid.ncols):
            muni = (row // block) * nbc + col // block
            mmap.setdefault(muni, []).append(CellId(col, row))
    return mmap


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[list[RegistryRecord], MunicipalityMap]:
    """Synthetic registry and municipality map.

    Sizes are ceil(lognormal) integers with the sector's requested mean.
    Municipalities are chosen with probability proportional to
    ``ncells * exp(clustering * g)`` where g is a standard normal score per
    municipality; clustering 0 gives uniform density over the grid.
    """
    gen = np.random.default_rng([int(seed) & ((1 << 64) - 1), krng.SYNTH])
    mmap = municipality_blocks(spec.grid, spec.block)
    munis = np.array(sorted(mmap), dtype=np.int64)
    ncells = np.array([len(mmap[m]) for m in munis], dtype=np.float64)
    score = gen.standard_normal(munis.size)
    w = ncells * np.exp(spec.clustering * (score - score.max()))
    w /= w.sum()
    records = []
    fid = 0
    for s in sorted(spec.counts):
        n = int(spec.counts[s])
        if n < 0:
            raise IngestError(f"sector {s}: negative count")
        if n == 0:
            continue
        mean = float(spec.mean_size.get(s, 2.0))
        if mean <= 1:
            sizes = np.ones(n, dtype=np.int64)
        else:
            mu = lognormal_mu_for_mean(mean, spec.size_sigma)
            sizes = np.ceil(gen.lognormal(mu, spec.size_sigma, n)).astype(np.int64)
            sizes = np.maximum(sizes, 1)
        where = gen.choice(munis, size=n, p=w)
        for z, m in zip(sizes.tolist(), where.tolist()):
            records.append(RegistryRecord(fid, int(s), int(z), int(m)))
            fid += 1
    return records, mmap


def default_synthetic_spec(grid: GridGeometry, total: int | None = None, clustering: float = 1.0, block: int = 5) -> SyntheticSpec:
    """Synthetic spec following the 1950 sector totals, optionally scaled to ``total`` firms."""
    from .calibration import bundled_targets

    targets = bundled_targets()
    n0 = sum(t.firms_t0 for t in targets)
    scale = 1.0 if total is None else total / n0
    counts = {t.sector: max(1, round(t.firms_t0 * scale)) if total is not None else t.firms_t0 for t in targets}
    means = {t.sector: t.employees_t0 / t.firms_t0 for t in targets}
    return SyntheticSpec(grid, counts, means, clustering=clustering, block=block)


# snapshots -----------------------------------------------------------------


def write_snapshot(state: WorldState, directory, stem: str | None = None) -> tuple[Path, Path]:
    """Write the firm table and the per-cell occupancy raster of ``state``.

    Returns the two paths. Sizes are written with ``repr`` so they read back
    bit-identically; the raster lists only non-empty (cell, sector) entries.
    """
    directory = Path(directory)
    stem = stem or f"{state.year}"
    firm_path = directory / f"firms_{stem}.csv"
    raster_path = directory / f"raster_{stem}.csv"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(firm_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SNAPSHOT_FIELDS)
            order = np.argsort(state.firm_id, kind="stable")
            for i in order.tolist():
                w.writerow((int(state.firm_id[i]), int(state.sector[i]), repr(float(state.size[i])),
                            int(state.col[i]), int(state.row[i]), state.year))
        with open(raster_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RASTER_FIELDS)
            s_idx, rows, cols = np.nonzero(state.occupancy)
            counts = state.occupancy[s_idx, rows, cols]
            order = np.lexsort((s_idx, cols, rows))
            for j in order.tolist():
                w.writerow((int(cols[j]), int(rows[j]), int(s_idx[j]) + 1, int(counts[j])))
    except OSError as exc:
        raise IngestError(f"cannot write snapshot to {directory}: {exc}") from exc
    return firm_path, raster_path


def read_snapshot(path) -> tuple[int | None, list[Firm]]:
    """Parse a firm snapshot written by :func:`write_snapshot`."""
    with open(path, newline="") as fh:
        reader, cols = _reader(fh, SNAPSHOT_FIELDS, os.fspath(path))
        firms = []
        year = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                size = float(row[cols["size"]])
            except ValueError:
                raise IngestError(f"{path} line {lineno}, column 'size': not a number") from None
            fid, sector, col, r, yr = (_int(row, cols, c, lineno, os.fspath(path))
                                       for c in ("firm_id", "sector", "col", "row", "year"))
            year = yr
            firms.append(Firm(fid, sector, size, CellId(col, r), yr))
    return year, firms


def read_raster(path) -> dict[int, dict[CellId, int]]:
    """Raster CSV as ``{sector: {cell: count}}``."""
    out: dict[int, dict[CellId, int]] = {}
    with open(path, newline="") as fh:
        reader, cols = _reader(fh, RASTER_FIELDS, os.fspath(path))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            col, r, s, n = (_int(row, cols, c, lineno, os.fspath(path)) for c in RASTER_FIELDS)
            out.setdefault(s, {})[CellId(col, r)] = n
    return out


def sampling_band(mean: float, sigma: float, n: int) -> float:
    """Upper bound on the standard error of the mean of n ceil(lognormal) sizes."""
    mu = lognormal_mu_for_mean(mean, sigma)
    # variance of ceil(X) <= E[ceil(X)^2] - mean^2 <= E[(X+1)^2] - mean^2
    ex2 = math.exp(2 * mu + 2 * sigma**2) + 2 * math.exp(mu + 0.5 * sigma**2) + 1.0
    return math.sqrt(max(ex2 - mean**2, 0.0) / n)

