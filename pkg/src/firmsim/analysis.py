"""Spatial concentration metrics on snapshots: rank-size tables, Zipf slope, top-decile share."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import ingest
from .world import CellId

METRIC_FIELDS = ("sector", "firms", "occupied_cells", "zipf_slope", "zipf_r2", "top_decile_share")
DIFF_FIELDS = ("col", "row", "sector", "count_a", "count_b", "change")


@dataclass(frozen=True)
class SectorMetrics:
    sector: int
    firms: int
    occupied_cells: int
    zipf_slope: float
    zipf_r2: float
    top_decile_share: float
    rank_size: tuple  # counts sorted descending


def rank_size(counts) -> np.ndarray:
    """Positive cell counts sorted in descending order."""
    c = np.asarray([x for x in counts if x >= 1], dtype=np.float64)
    return np.sort(c)[::-1]


def zipf_slope(counts) -> tuple[float, float]:
    """OLS slope and R^2 of log(count) on log(rank) over cells with count >= 1.

    NaN when fewer than two cells are occupied.
    """
    c = rank_size(counts)
    if c.size < 2:
        return math.nan, math.nan
    x = np.log(np.arange(1, c.size + 1, dtype=np.float64))
    y = np.log(c)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    sxy = float(np.sum((x - xm) * (y - ym)))
    syy = float(np.sum((y - ym) ** 2))
    slope = sxy / sxx
    r2 = 1.0 if syy == 0 else sxy * sxy / (sxx * syy)
    return slope, r2


def top_decile_share(counts) -> float:
    """Share of firms in the top 10% (rounded up) of occupied cells."""
    c = rank_size(counts)
    if c.size == 0:
        return math.nan
    k = math.ceil(0.1 * c.size)
    return float(c[:k].sum() / c.sum())


def sector_metrics(sector: int, cells: dict) -> SectorMetrics:
    counts = list(cells.values())
    rs = rank_size(counts)
    slope, r2 = zipf_slope(counts)
    return SectorMetrics(sector, int(rs.sum()), int(rs.size), slope, r2, top_decile_share(counts),
                         tuple(int(x) for x in rs))


def counts_from_firms(firms) -> dict[int, dict[CellId, int]]:
    out: dict[int, dict[CellId, int]] = {}
    for f in firms:
        cells = out.setdefault(f.sector, {})
        cells[f.cell] = cells.get(f.cell, 0) + 1
    return out


def load_counts(path) -> dict[int, dict[CellId, int]]:
    """Cell counts per sector from either a firm snapshot or a raster CSV."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if "firm_id" in header:
        return counts_from_firms(ingest.read_snapshot(path)[1])
    return ingest.read_raster(path)


def analyze(counts: dict[int, dict[CellId, int]]) -> list[SectorMetrics]:
    return [sector_metrics(s, counts[s]) for s in sorted(counts)]


def diff(a: dict, b: dict) -> list[tuple]:
    """Cell-level count changes between two snapshots, nonzero changes only."""
    out = []
    for s in sorted(set(a) | set(b)):
        ca, cb = a.get(s, {}), b.get(s, {})
        for cell in sorted(set(ca) | set(cb), key=lambda c: (c.row, c.col)):
            x, y = ca.get(cell, 0), cb.get(cell, 0)
            if x != y:
                out.append((cell.col, cell.row, s, x, y, y - x))
    return out


def write_metrics(metrics: list[SectorMetrics], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for m in metrics:
        w.writerow([m.sector, m.firms, m.occupied_cells, repr(m.zipf_slope), repr(m.zipf_r2), repr(m.top_decile_share)])


def write_rank_size(metrics: list[SectorMetrics], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("sector", "rank", "count"))
    for m in metrics:
        for r, c in enumerate(m.rank_size, start=1):
            w.writerow((m.sector, r, c))


def write_diff(rows: list[tuple], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(DIFF_FIELDS)
    w.writerows(rows)
