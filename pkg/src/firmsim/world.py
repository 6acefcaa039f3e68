"""Domain types, grid geometry and the mutable per-year simulation state."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

N_SECTORS = 21
NO_PARENT = -1


class WorldError(ValueError):
    pass


def check_sector(s: int) -> int:
    s = int(s)
    if not 1 <= s <= N_SECTORS:
        raise WorldError(f"sector {s} outside 1..{N_SECTORS}")
    return s


class CellId(NamedTuple):
    col: int
    row: int


@dataclass(frozen=True)
class GridGeometry:
    ncols: int
    nrows: int
    cell_size: float = 1.0

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise WorldError(f"grid must be at least 1x1, got {self.ncols}x{self.nrows}")
        if not self.cell_size > 0:
            raise WorldError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def ncells(self) -> int:
        return self.ncols * self.nrows

    def contains(self, cell) -> bool:
        col, row = cell
        return 0 <= col < self.ncols and 0 <= row < self.nrows


@dataclass
class Firm:
    firm_id: int
    sector: int
    size: float
    cell: CellId
    born_year: int = 0
    parent_id: int | None = None

    def __post_init__(self):
        self.cell = CellId(int(self.cell[0]), int(self.cell[1]))


@dataclass
class SectorParams:
    """Per-sector constants for demography and location choice.

    ``delta`` multiplies the distance from the current cell in the utility and
    must be non-positive. Decay rates are per cell-edge unit of distance.
    """

    epsilon: float = 0.0
    theta: float = 0.0
    spin_alpha: float = 1.0
    spin_beta: float = 0.1
    s_crit: float = 1.0
    delta: float = -0.01
    sigma_phi: float = 0.02
    sigma_rho: float = 0.0
    spin_mu: float = 0.0
    spin_sigma: float = 1.0
    decay_mp: float = 0.6
    decay_ap: float = 0.6
    decay_cp: float = 0.6
    w_mp: float = 1.0
    w_ap: float = 0.5
    w_cp: float = -1.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise WorldError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.s_crit > 0:
            raise WorldError(f"s_crit must be positive, got {self.s_crit}")
        for name in ("decay_mp", "decay_ap", "decay_cp"):
            if not getattr(self, name) > 0:
                raise WorldError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma_phi < 0 or self.sigma_rho < 0 or self.spin_sigma < 0:
            raise WorldError("noise scales must be non-negative")
        if self.delta > 0:
            raise WorldError(f"delta must be <= 0, got {self.delta}")


@dataclass(frozen=True)
class RelocationParams:
    lambda1: float = 0.9
    lambda2: float = 0.09
    lambda3: float = 0.01

    def __post_init__(self):
        lam = (self.lambda1, self.lambda2, self.lambda3)
        if any(not 0.0 <= x <= 1.0 for x in lam):
            raise WorldError(f"relocation probabilities must lie in [0, 1], got {lam}")
        if abs(math.fsum(lam) - 1.0) > 1e-12:
            raise WorldError(f"relocation probabilities must sum to 1, got {math.fsum(lam)!r}")


@dataclass
class WorldState:
    """Firm population stored column-wise plus exact occupancy histograms.

    ``occupancy[s - 1, row, col]`` is the number of live firms of sector ``s``
    in a cell and ``occupancy_total[row, col]`` its sum over sectors. Every
    mutation goes through methods of this class so the histograms never drift
    from the firm columns.
    """

    year: int
    grid: GridGeometry
    firm_id: np.ndarray
    sector: np.ndarray
    size: np.ndarray
    col: np.ndarray
    row: np.ndarray
    born_year: np.ndarray
    parent_id: np.ndarray
    occupancy: np.ndarray = field(repr=False)
    occupancy_total: np.ndarray = field(repr=False)
    next_id: int = 0
    _index: dict | None = field(default=None, repr=False)

    @property
    def n_firms(self) -> int:
        return int(self.firm_id.shape[0])

    def index_of(self, firm_id: int) -> int:
        if self._index is None:
            self._index = {int(f): i for i, f in enumerate(self.firm_id)}
        try:
            return self._index[int(firm_id)]
        except KeyError:
            raise WorldError(f"unknown firm_id {firm_id}") from None

    def firm(self, firm_id: int) -> Firm:
        return self._firm_at(self.index_of(firm_id))

    def _firm_at(self, i: int) -> Firm:
        pid = int(self.parent_id[i])
        return Firm(
            firm_id=int(self.firm_id[i]),
            sector=int(self.sector[i]),
            size=float(self.size[i]),
            cell=CellId(int(self.col[i]), int(self.row[i])),
            born_year=int(self.born_year[i]),
            parent_id=None if pid == NO_PARENT else pid,
        )

    def firms(self) -> list[Firm]:
        return [self._firm_at(i) for i in range(self.n_firms)]

    def recompute_occupancy(self) -> tuple[np.ndarray, np.ndarray]:
        g = self.grid
        occ = np.zeros((N_SECTORS, g.nrows, g.ncols), dtype=np.int64)
        np.add.at(occ, (self.sector - 1, self.row, self.col), 1)
        return occ, occ.sum(axis=0)

    def check_consistency(self) -> None:
        occ, tot = self.recompute_occupancy()
        if not (np.array_equal(occ, self.occupancy) and np.array_equal(tot, self.occupancy_total)):
            raise WorldError("occupancy histogram out of sync with firm list")

    def copy(self) -> "WorldState":
        return WorldState(
            year=self.year,
            grid=self.grid,
            firm_id=self.firm_id.copy(),
            sector=self.sector.copy(),
            size=self.size.copy(),
            col=self.col.copy(),
            row=self.row.copy(),
            born_year=self.born_year.copy(),
            parent_id=self.parent_id.copy(),
            occupancy=self.occupancy.copy(),
            occupancy_total=self.occupancy_total.copy(),
            next_id=self.next_id,
        )

    def remove(self, mask: np.ndarray) -> None:
        """Drop the firms selected by boolean ``mask`` (closures)."""
        if not mask.any():
            return
        np.subtract.at(self.occupancy, (self.sector[mask] - 1, self.row[mask], self.col[mask]), 1)
        np.subtract.at(self.occupancy_total, (self.row[mask], self.col[mask]), 1)
        keep = ~mask
        for name in ("firm_id", "sector", "size", "col", "row", "born_year", "parent_id"):
            setattr(self, name, getattr(self, name)[keep])
        self._index = None

    def append(self, firm_id, sector, size, col, row, born_year, parent_id) -> None:
        """Append firms given as equal-length arrays (spin-offs)."""
        firm_id = np.asarray(firm_id, dtype=np.int64)
        if firm_id.size == 0:
            return
        sector = np.asarray(sector, dtype=np.int64)
        col = np.asarray(col, dtype=np.int64)
        row = np.asarray(row, dtype=np.int64)
        np.add.at(self.occupancy, (sector - 1, row, col), 1)
        np.add.at(self.occupancy_total, (row, col), 1)
        self.firm_id = np.concatenate([self.firm_id, firm_id])
        self.sector = np.concatenate([self.sector, sector])
        self.size = np.concatenate([self.size, np.asarray(size, dtype=np.float64)])
        self.col = np.concatenate([self.col, col])
        self.row = np.concatenate([self.row, row])
        self.born_year = np.concatenate([self.born_year, np.asarray(born_year, dtype=np.int64)])
        self.parent_id = np.concatenate([self.parent_id, np.asarray(parent_id, dtype=np.int64)])
        self.next_id = max(self.next_id, int(firm_id.max()) + 1)
        self._index = None

    def move_index(self, i: int, col: int, row: int) -> None:
        s = self.sector[i] - 1
        oc, orow = self.col[i], self.row[i]
        if oc == col and orow == row:
            return
        self.occupancy[s, orow, oc] -= 1
        self.occupancy_total[orow, oc] -= 1
        self.occupancy[s, row, col] += 1
        self.occupancy_total[row, col] += 1
        self.col[i] = col
        self.row[i] = row


def build_world(firms: Iterable[Firm], grid: GridGeometry, year: int) -> WorldState:
    firms = list(firms)
    seen = set()
    for f in firms:
        if not grid.contains(f.cell):
            raise WorldError(f"firm {f.firm_id} has cell {tuple(f.cell)} outside {grid.ncols}x{grid.nrows} grid")
        check_sector(f.sector)
        if not f.size > 0:
            raise WorldError(f"firm {f.firm_id} has non-positive size {f.size}")
        if f.firm_id in seen:
            raise WorldError(f"duplicate firm_id {f.firm_id}")
        seen.add(f.firm_id)
    n = len(firms)
    ids = np.fromiter((f.firm_id for f in firms), dtype=np.int64, count=n)
    state = WorldState(
        year=int(year),
        grid=grid,
        firm_id=ids,
        sector=np.fromiter((f.sector for f in firms), dtype=np.int64, count=n),
        size=np.fromiter((f.size for f in firms), dtype=np.float64, count=n),
        col=np.fromiter((f.cell[0] for f in firms), dtype=np.int64, count=n),
        row=np.fromiter((f.cell[1] for f in firms), dtype=np.int64, count=n),
        born_year=np.fromiter((f.born_year for f in firms), dtype=np.int64, count=n),
        parent_id=np.fromiter(
            (NO_PARENT if f.parent_id is None else f.parent_id for f in firms), dtype=np.int64, count=n
        ),
        occupancy=np.empty(0),
        occupancy_total=np.empty(0),
        next_id=int(ids.max()) + 1 if n else 0,
    )
    state.occupancy, state.occupancy_total = state.recompute_occupancy()
    return state


def sector_aggregate(state: WorldState, s: int) -> tuple[int, float]:
    """Firm count and employee total of sector ``s``.

    The employee sum is correctly rounded (``math.fsum``) so it carries no
    accumulation drift regardless of population size.
    """
    s = check_sector(s)
    mask = state.sector == s
    return int(mask.sum()), math.fsum(state.size[mask].tolist())


def apply_move(state: WorldState, firm_id: int, new_cell) -> WorldState:
    if not state.grid.contains(new_cell):
        raise WorldError(f"target cell {tuple(new_cell)} outside grid")
    i = state.index_of(firm_id)
    state.move_index(i, int(new_cell[0]), int(new_cell[1]))
    return state
