"""Market, agglomeration and congestion potentials over the grid.

Every potential is an exponentially distance-decayed sum of firm mass,
``sum_j N_j * exp(-decay * d_ij)``, with the source cell itself included at
weight 1. Two evaluation paths exist: ``exact`` is a brute-force double loop
kept as the oracle, ``truncated`` scatters each occupied cell over a
precomputed disc of offsets (radius R) through the compiled kernel.

Decay rates are sector specific, so the market and congestion potentials are
stored per sector as well (each sector sees all firms through its own decay).
Sectors sharing a decay share the same array.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .demography import as_table
from .world import N_SECTORS, GridGeometry, WorldState

_EXACT_CHUNK = 1 << 22


def cell_distance(a, b, grid: GridGeometry) -> float:
    return grid.cell_size * math.hypot(a[0] - b[0], a[1] - b[1])


def potential_at(i, weights: np.ndarray, decay: float, cell_size: float = 1.0) -> float:
    """Potential at cell ``i`` from a (nrows, ncols) mass array, by direct sum."""
    if not decay > 0:
        raise ValueError("decay must be positive")
    rows, cols = np.nonzero(weights)
    if rows.size == 0:
        return 0.0
    d = cell_size * np.sqrt((cols - i[0]) ** 2 + (rows - i[1]) ** 2.0)
    return math.fsum((weights[rows, cols] * np.exp(-decay * d)).tolist())


def exact_field(weights: np.ndarray, decay: float, cell_size: float = 1.0) -> np.ndarray:
    """Brute-force potential of every cell: loop over all (target, source) pairs."""
    nrows, ncols = weights.shape
    out = np.zeros((nrows, ncols))
    src_r, src_c = np.nonzero(weights)
    if src_r.size == 0:
        return out
    vals = weights[src_r, src_c]
    tr, tc = np.divmod(np.arange(nrows * ncols), ncols)
    flat = out.reshape(-1)
    step = max(1, _EXACT_CHUNK // src_r.size)
    for a in range(0, tr.size, step):
        dy = tr[a : a + step, None] - src_r[None, :]
        dx = tc[a : a + step, None] - src_c[None, :]
        d = cell_size * np.sqrt((dx * dx + dy * dy).astype(np.float64))
        flat[a : a + step] = (np.exp(-decay * d) * vals[None, :]).sum(axis=1)
    return out


@lru_cache(maxsize=64)
def disc_offsets(radius: float, nrows: int, ncols: int, cell_size: float = 1.0):
    """Offsets (dr, dc) with centroid distance <= radius, ordered by distance.

    Offsets are limited to what can land inside an nrows x ncols grid, so an
    infinite radius yields every possible displacement.
    """
    dr, dc = np.meshgrid(np.arange(-(nrows - 1), nrows), np.arange(-(ncols - 1), ncols), indexing="ij")
    dr, dc = dr.ravel(), dc.ravel()
    d = cell_size * np.sqrt((dr * dr + dc * dc).astype(np.float64))
    keep = d <= radius
    dr, dc, d = dr[keep], dc[keep], d[keep]
    order = np.lexsort((dc, dr, d))
    dr, dc, d = dr[order].astype(np.int64), dc[order].astype(np.int64), d[order]
    for a in (dr, dc, d):
        a.setflags(write=False)
    return dr, dc, d


def truncated_field(weights: np.ndarray, decay: float, radius: float, cell_size: float = 1.0) -> np.ndarray:
    """Potential of every cell counting only sources within ``radius``."""
    nrows, ncols = weights.shape
    out = np.zeros((nrows, ncols))
    src_r, src_c = np.nonzero(weights)
    if src_r.size == 0:
        return out
    dr, dc, d = disc_offsets(float(radius), nrows, ncols, float(cell_size))
    w = np.exp(-decay * d)
    vals = np.ascontiguousarray(weights[src_r, src_c], dtype=np.float64)
    kernels.scatter_offsets(out, src_r.astype(np.int64), src_c.astype(np.int64), vals, dr, dc, w)
    return out


def truncation_bound(weights: np.ndarray, decay: float, radius: float, cell_size: float = 1.0) -> np.ndarray:
    """Per-cell upper bound on the truncation error: ignored mass * exp(-decay * R).

    The ignored mass of a cell is the total mass minus the mass within R,
    the latter obtained by running the truncated kernel with unit weights.
    """
    if math.isinf(radius):
        return np.zeros(weights.shape)
    nrows, ncols = weights.shape
    within = np.zeros((nrows, ncols))
    src_r, src_c = np.nonzero(weights)
    if src_r.size:
        dr, dc, _ = disc_offsets(float(radius), nrows, ncols, float(cell_size))
        vals = np.ascontiguousarray(weights[src_r, src_c], dtype=np.float64)
        kernels.scatter_offsets(within, src_r.astype(np.int64), src_c.astype(np.int64), vals, dr, dc, np.ones(dr.size))
    ignored = np.maximum(float(weights.sum()) - within, 0.0)
    return ignored * math.exp(-decay * radius)


@dataclass
class PotentialField:
    """Potentials of one start-of-year snapshot.

    ``mp``, ``ap`` and ``cp`` have shape (21, nrows, ncols); index ``s - 1``
    holds the values relevant to sector ``s``. ``radius`` records the
    truncation radius used per sector and field (inf for exact).
    """

    mp: np.ndarray
    ap: np.ndarray
    cp: np.ndarray
    snapshot_year: int
    radius: dict = field(default_factory=dict)

    def copy(self) -> "PotentialField":
        return PotentialField(self.mp.copy(), self.ap.copy(), self.cp.copy(), self.snapshot_year, dict(self.radius))


def mass_arrays(state: WorldState, weighting: str = "firms") -> tuple[np.ndarray, np.ndarray]:
    """Per-sector and total source mass per cell (firm counts or employees)."""
    if weighting == "firms":
        per = state.occupancy.astype(np.float64)
        return per, state.occupancy_total.astype(np.float64)
    if weighting == "employees":
        g = state.grid
        per = np.zeros((N_SECTORS, g.nrows, g.ncols))
        np.add.at(per, (state.sector - 1, state.row, state.col), state.size)
        return per, per.sum(axis=0)
    raise ValueError(f"unknown weighting {weighting!r}")


def resolve_radius(decay: float, radius: float | None, tolerance: float) -> float:
    """Explicit radius, or the distance at which the kernel drops below ``tolerance``."""
    if radius is not None:
        return float(radius)
    return math.log(1.0 / tolerance) / decay


def compute_fields(
    state: WorldState,
    params,
    method: str = "truncated",
    radius: float | None = None,
    tolerance: float = 1e-6,
    weighting: str = "firms",
) -> PotentialField:
    tab = as_table(params)
    g = state.grid
    per, total = mass_arrays(state, weighting)
    shape = (N_SECTORS, g.nrows, g.ncols)
    mp, ap, cp = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    radii = {}
    cache: dict[tuple, np.ndarray] = {}

    def evaluate(mass, decay, key):
        if method == "exact":
            r = math.inf
            ck = (key, decay, r)
            if ck not in cache:
                cache[ck] = exact_field(mass, decay, g.cell_size)
        elif method == "truncated":
            r = resolve_radius(decay, radius, tolerance)
            ck = (key, decay, r)
            if ck not in cache:
                cache[ck] = truncated_field(mass, decay, r, g.cell_size)
        else:
            raise ValueError(f"unknown method {method!r}")
        return cache[ck], r

    for s in range(1, N_SECTORS + 1):
        mp[s - 1], r_mp = evaluate(total, float(tab.decay_mp[s]), "total")
        cp[s - 1], r_cp = evaluate(total, float(tab.decay_cp[s]), "total")
        if per[s - 1].any():
            ap[s - 1], r_ap = evaluate(per[s - 1], float(tab.decay_ap[s]), s)
        else:
            r_ap = math.inf if method == "exact" else resolve_radius(float(tab.decay_ap[s]), radius, tolerance)
        radii[s] = {"mp": r_mp, "ap": r_ap, "cp": r_cp}
    return PotentialField(mp, ap, cp, state.year, radii)


def kernel_image(cell, decay: float, grid: GridGeometry, radius: float = math.inf) -> np.ndarray:
    """exp(-decay * d(i, cell)) for every cell i, zero beyond ``radius``."""
    rows, cols = np.indices((grid.nrows, grid.ncols))
    d = grid.cell_size * np.sqrt(((cols - cell[0]) ** 2 + (rows - cell[1]) ** 2).astype(np.float64))
    img = np.exp(-decay * d)
    if not math.isinf(radius):
        img[d > radius] = 0.0
    return img


def field_delta_move(field: PotentialField, old_cell, new_cell, sector: int, params, grid: GridGeometry, mass: float = 1.0):
    """Update ``field`` in place for ``mass`` of ``sector`` moving between cells.

    Uses the same truncation radii the field was built with, so the result
    tracks a full recomputation by the same method.
    """
    if tuple(old_cell) == tuple(new_cell):
        return field
    tab = as_table(params)
    images: dict[tuple, np.ndarray] = {}

    def delta(decay, r):
        key = (decay, r)
        if key not in images:
            images[key] = mass * (kernel_image(new_cell, decay, grid, r) - kernel_image(old_cell, decay, grid, r))
        return images[key]

    for s in range(1, N_SECTORS + 1):
        r = field.radius.get(s, {"mp": math.inf, "ap": math.inf, "cp": math.inf})
        field.mp[s - 1] += delta(float(tab.decay_mp[s]), r["mp"])
        field.cp[s - 1] += delta(float(tab.decay_cp[s]), r["cp"])
    r_ap = field.radius.get(sector, {}).get("ap", math.inf)
    field.ap[sector - 1] += delta(float(tab.decay_ap[sector]), r_ap)
    return field


def write_field_csv(values: np.ndarray, path) -> None:
    """Raster dump of one (nrows, ncols) field as ``col,row,value``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["col", "row", "value"])
        for row in range(values.shape[0]):
            for col in range(values.shape[1]):
                w.writerow([col, row, repr(float(values[row, col]))])
