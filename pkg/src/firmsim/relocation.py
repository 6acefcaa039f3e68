"""Relocation: mode draw, candidate sets, utility and destination choice."""

from __future__ import annotations

import enum
import logging

import numpy as np

from . import kernels
from . import rng as krng
from .demography import as_table
from .spatial import PotentialField, cell_distance, field_delta_move
from .world import CellId, Firm, RelocationParams, SectorParams, WorldState

logger = logging.getLogger(__name__)

UTILITY_FORMS = ("weighted", "unweighted")


class RelocationMode(enum.IntEnum):
    STAY = 0
    MOVE_TO_OCCUPIED = 1
    MOVE_TO_UNOCCUPIED = 2


def mode_from_uniform(u: float, p: RelocationParams) -> RelocationMode:
    if u < p.lambda1:
        return RelocationMode.STAY
    if u < p.lambda1 + p.lambda2:
        return RelocationMode.MOVE_TO_OCCUPIED
    return RelocationMode.MOVE_TO_UNOCCUPIED


def sample_mode(p: RelocationParams, rng) -> RelocationMode:
    return mode_from_uniform(rng.random(), p)


def candidate_cells(state: WorldState, sector: int, mode: RelocationMode, origin) -> set[CellId]:
    if mode == RelocationMode.STAY:
        raise ValueError("no candidates for STAY")
    occ = state.occupancy[sector - 1]
    rows, cols = np.nonzero(occ >= 1) if mode == RelocationMode.MOVE_TO_OCCUPIED else np.nonzero(occ == 0)
    cells = {CellId(int(c), int(r)) for r, c in zip(rows, cols)}
    cells.discard(CellId(*origin))
    return cells


def _weights(params: SectorParams, form: str) -> tuple[float, float, float]:
    if form == "weighted":
        return params.w_mp, params.w_ap, params.w_cp
    if form == "unweighted":
        return 1.0, 1.0, 1.0
    raise ValueError(f"unknown utility form {form!r}")


def utility_base(field: PotentialField, sector: int, params: SectorParams, form: str = "weighted") -> np.ndarray:
    """Location-independent part of the utility for every cell, flattened row-major."""
    a, b, c = _weights(params, form)
    base = a * field.mp[sector - 1] + b * field.ap[sector - 1] + c * field.cp[sector - 1]
    return np.ascontiguousarray(base.reshape(-1))


def location_utility(l, firm: Firm, field: PotentialField, params: SectorParams, origin=None,
                     grid=None, form: str = "weighted") -> float:
    """Utility of cell ``l`` for ``firm``: weighted potentials plus delta * distance.

    ``origin`` defaults to the firm's current cell; ``grid`` is only needed
    for a non-unit cell size.
    """
    origin = firm.cell if origin is None else origin
    a, b, c = _weights(params, form)
    s = firm.sector - 1
    col, row = l
    base = a * field.mp[s, row, col] + b * field.ap[s, row, col] + c * field.cp[s, row, col]
    cell_size = 1.0 if grid is None else grid.cell_size
    d = cell_size * np.sqrt(float((col - origin[0]) ** 2 + (row - origin[1]) ** 2))
    return float(base + params.delta * d)


def choose_destination(firm: Firm, mode: RelocationMode, state: WorldState, field: PotentialField,
                       params: SectorParams, rng, form: str = "weighted", base=None) -> CellId:
    """Highest-utility candidate cell; the origin when there is none."""
    if mode == RelocationMode.STAY:
        return firm.cell
    if base is None:
        base = utility_base(field, firm.sector, params, form)
    g = state.grid
    occ = state.occupancy[firm.sector - 1].reshape(-1)
    idx = kernels.best_cell(base, occ, g.ncols, firm.cell[0], firm.cell[1], float(params.delta),
                            float(g.cell_size), mode == RelocationMode.MOVE_TO_OCCUPIED, rng.random())
    if idx < 0:
        logger.debug("firm %s: no candidate cells for %s, staying", firm.firm_id, mode.name)
        return firm.cell
    row, col = divmod(idx, g.ncols)
    return CellId(col, row)


def step_relocation(
    state: WorldState,
    field: PotentialField,
    params,
    reloc: RelocationParams,
    seed: int,
    form: str = "weighted",
    incremental: bool = False,
) -> list[tuple[int, CellId]]:
    """Relocate firms for one year, mutating ``state``.

    Firms are visited in a seeded shuffled order. Candidate sets read the
    live occupancy, so later movers see earlier moves; potentials stay at the
    start-of-year ``field`` unless ``incremental`` is set, in which case each
    move is folded into ``field`` before the next firm decides. Firms born
    during this year's demography step (``born_year > year``) do not move.
    """
    tab = as_table(params)
    t = state.year
    g = state.grid
    ids = state.firm_id
    if ids.size == 0:
        return []
    u = krng.uniform(seed, t, ids, krng.RELOCATION_MODE)
    movers = (u >= reloc.lambda1) & (state.born_year <= t)
    order = krng.shuffled_order(seed, t, krng.SHUFFLE_RELOCATION, ids)
    order = order[movers[order]]
    occupied_cut = reloc.lambda1 + reloc.lambda2
    bases: dict[int, np.ndarray] = {}
    moves = []
    stuck = 0
    for i in order.tolist():
        s = int(state.sector[i])
        fid = int(ids[i])
        if s not in bases:
            bases[s] = utility_base(field, s, tab[s], form)
        oc, orow = int(state.col[i]), int(state.row[i])
        occ = state.occupancy[s - 1].reshape(-1)
        idx = kernels.best_cell(bases[s], occ, g.ncols, oc, orow, float(tab.delta[s]), float(g.cell_size),
                                bool(u[i] < occupied_cut), krng.uniform(seed, t, fid, krng.TIE_BREAK))
        if idx < 0:
            stuck += 1
            continue
        row, col = divmod(idx, g.ncols)
        state.move_index(i, col, row)
        moves.append((fid, CellId(col, row)))
        if incremental:
            field_delta_move(field, (oc, orow), (col, row), s, tab, g)
            bases.clear()
    if stuck:
        logger.debug("year %d: %d relocation attempts found no candidate cell", t, stuck)
    return moves


__all__ = [
    "RelocationMode",
    "candidate_cells",
    "cell_distance",
    "choose_destination",
    "location_utility",
    "mode_from_uniform",
    "sample_mode",
    "step_relocation",
    "utility_base",
]
