"""Yearly demographic events: growth, closure and spin-off."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import rng as krng
from .world import N_SECTORS, CellId, Firm, SectorParams, WorldState, check_sector


@dataclass(frozen=True)
class DemographyOptions:
    orientation: int = 1  # +1: logistic as printed (decreasing in size for alpha > 0)
    min_size: float = 0.5
    min_parent_size: float = 2.0
    spinoffs: bool = True

    def __post_init__(self):
        if self.orientation not in (1, -1):
            raise ValueError(f"orientation must be +1 or -1, got {self.orientation}")


class ParamTable:
    """Sector parameters as arrays indexed by sector id (slot 0 unused)."""

    FIELDS = tuple(SectorParams.__dataclass_fields__)

    def __init__(self, params: dict[int, SectorParams]):
        self.params = dict(params)
        default = SectorParams()
        for name in self.FIELDS:
            arr = np.full(N_SECTORS + 1, getattr(default, name), dtype=np.float64)
            for s, p in self.params.items():
                arr[check_sector(s)] = getattr(p, name)
            setattr(self, name, arr)

    def __getitem__(self, s: int) -> SectorParams:
        return self.params.get(s, SectorParams())


def as_table(params) -> ParamTable:
    return params if isinstance(params, ParamTable) else ParamTable(params)


def grow_firm(size: float, params: SectorParams, rng) -> float:
    """One year of growth: ``size * (1 + epsilon + phi)``, phi ~ N(0, sigma_phi).

    The raw result is returned; the caller closes a firm that ends up below
    the minimum size.
    """
    phi = rng.normal(0.0, params.sigma_phi) if params.sigma_phi > 0 else 0.0
    return size * (1.0 + params.epsilon + phi)


def closure_probability(params: SectorParams, rng) -> float:
    rho = rng.normal(0.0, params.sigma_rho) if params.sigma_rho > 0 else 0.0
    return min(1.0, max(0.0, params.theta + rho))


def spinoff_probability(size, params: SectorParams, orientation: int = 1):
    """Logistic spin-off probability ``1 / (1 + exp(o * (alpha*S - beta) / S_crit))``.

    Accepts scalar or array ``size``. At ``alpha * S == beta`` the value is
    exactly 0.5 for either orientation.
    """
    x = orientation * (params.spin_alpha * np.asarray(size, dtype=np.float64) - params.spin_beta) / params.s_crit
    p = expit(-x)
    return float(p) if np.ndim(p) == 0 else p


def split_size(size, sigma):
    """Split ``size`` into (parent, child) with child clamped to [1, size - 1].

    The child is re-derived as ``size - parent`` so ``parent + child == size``
    holds bit-exactly in floating point (Sterbenz on whichever difference is
    the large one).
    """
    sigma = np.minimum(np.maximum(sigma, 1.0), np.asarray(size) - 1.0)
    parent = size - sigma
    child = size - parent
    return parent, child


def execute_spinoff(parent: Firm, params: SectorParams, rng, new_id: int = -1, year: int | None = None):
    if parent.size < 2:
        raise ValueError(f"firm {parent.firm_id} of size {parent.size} is too small to spin off")
    sigma = rng.lognormal(params.spin_mu, params.spin_sigma)
    parent_size, child_size = split_size(parent.size, sigma)
    child = Firm(
        firm_id=new_id,
        sector=parent.sector,
        size=float(child_size),
        cell=CellId(*parent.cell),
        born_year=parent.born_year if year is None else year,
        parent_id=parent.firm_id,
    )
    return float(parent_size), child


@dataclass
class DemographyOutcome:
    """Arrays describing one year of demographic events.

    ``old_size``/``grown_size`` cover every firm alive at the start of the
    year (in state order), so the growth term of the employee balance is
    ``sum(grown_size - old_size)`` and the closure term is the grown size of
    the closed firms.
    """

    firm_id: np.ndarray
    sector: np.ndarray
    old_size: np.ndarray
    grown_size: np.ndarray
    closed_mask: np.ndarray
    spin_parent_ids: np.ndarray
    spin_child_ids: np.ndarray
    spin_sizes: np.ndarray
    spin_sector: np.ndarray
    new_children: list = field(default_factory=list)

    @property
    def grown(self) -> list[tuple[int, float]]:
        return list(zip(self.firm_id.tolist(), self.grown_size.tolist()))

    @property
    def closed(self) -> list[int]:
        return self.firm_id[self.closed_mask].tolist()

    @property
    def spinoffs(self) -> list[tuple[int, Firm]]:
        return list(zip(self.spin_parent_ids.tolist(), self.new_children))

    def sector_balance(self, s: int) -> dict:
        """Per-sector firm and employee balance terms for one year."""
        m = self.sector == s
        closed = m & self.closed_mask
        growth = math.fsum(self.grown_size[m].tolist() + (-self.old_size[m]).tolist())
        return {
            "closures": int(closed.sum()),
            "spinoffs": int((self.spin_sector == s).sum()),
            "growth": growth,
            "closed_employees": math.fsum(self.grown_size[closed].tolist()),
        }


def step_demography(
    state: WorldState,
    params,
    seed: int,
    options: DemographyOptions = DemographyOptions(),
) -> DemographyOutcome:
    """Apply growth, closure and spin-off to every firm and mutate ``state``.

    Firms are visited in a seeded shuffled order; all draws are keyed by
    (seed, year, firm_id) so the order only fixes which ids the new
    spin-offs receive. A firm closed this year never spins off. Spin-offs
    start in the parent's cell with ``born_year = year + 1``.
    """
    tab = as_table(params)
    t = state.year
    ids = state.firm_id
    sec = state.sector
    old = state.size.copy()

    sig_phi = tab.sigma_phi[sec]
    phi = np.where(sig_phi > 0, 0.0 + sig_phi * krng.normal(seed, t, ids, krng.GROWTH), 0.0)
    grown = old * (1.0 + tab.epsilon[sec] + phi)

    sig_rho = tab.sigma_rho[sec]
    rho = np.where(sig_rho > 0, 0.0 + sig_rho * krng.normal(seed, t, ids, krng.CLOSURE_NOISE), 0.0)
    p_close = np.clip(tab.theta[sec] + rho, 0.0, 1.0)
    closed = (grown < options.min_size) | (krng.uniform(seed, t, ids, krng.CLOSURE) < p_close)

    spin = np.zeros(ids.size, dtype=bool)
    if options.spinoffs and ids.size:
        x = options.orientation * (tab.spin_alpha[sec] * grown - tab.spin_beta[sec]) / tab.s_crit[sec]
        p_spin = expit(-x)
        spin = ~closed & (grown >= options.min_parent_size) & (krng.uniform(seed, t, ids, krng.SPINOFF) < p_spin)

    new_size = grown.copy()
    order = krng.shuffled_order(seed, t, krng.SHUFFLE_DEMOGRAPHY, ids)
    parents = order[spin[order]]
    if parents.size:
        pid = ids[parents]
        ps = sec[parents]
        draw = np.exp(tab.spin_mu[ps] + tab.spin_sigma[ps] * krng.normal(seed, t, pid, krng.SPINOFF_SIZE))
        parent_size, child_size = split_size(grown[parents], draw)
        new_size[parents] = parent_size
        child_ids = np.arange(state.next_id, state.next_id + parents.size, dtype=np.int64)
        child_col = state.col[parents].copy()
        child_row = state.row[parents].copy()
    else:
        pid = ps = child_ids = child_col = child_row = np.zeros(0, dtype=np.int64)
        child_size = np.zeros(0)

    outcome = DemographyOutcome(
        firm_id=ids.copy(),
        sector=sec.copy(),
        old_size=old,
        grown_size=grown,
        closed_mask=closed,
        spin_parent_ids=pid,
        spin_child_ids=child_ids,
        spin_sizes=np.asarray(child_size, dtype=np.float64),
        spin_sector=ps,
    )
    outcome.new_children = [
        Firm(int(c), int(s), float(z), CellId(int(cc), int(rr)), t + 1, int(p))
        for c, s, z, cc, rr, p in zip(child_ids, ps, outcome.spin_sizes, child_col, child_row, pid)
    ]

    state.size = new_size
    state.remove(closed)
    state.append(child_ids, ps, outcome.spin_sizes, child_col, child_row, np.full(child_ids.size, t + 1), pid)
    return outcome


def simulate_expected(
    sizes,
    params: SectorParams,
    years: int,
    options: DemographyOptions = DemographyOptions(),
) -> list[tuple[float, float]]:
    """Expected-value run of one sector's demography on an explicit firm list.

    Each firm becomes a cohort ``(weight, size)``: closure multiplies the
    weight by ``1 - theta``, spin-off moves weight ``w * p_spin(size)`` into a
    child cohort of the mean spin-off size (clamped like real spin-offs) while
    the parent cohort keeps weight ``w`` at its expected post-split size.
    Child cohorts born in the same year are pooled. Growth and closure noise
    are off. Returns ``(firms, employees)`` for years ``0..years``.
    """
    size = np.asarray(sizes, dtype=np.float64).copy()
    weight = np.ones_like(size)
    spin_mean = math.exp(params.spin_mu + 0.5 * params.spin_sigma**2)
    out = [(math.fsum(weight.tolist()), math.fsum((weight * size).tolist()))]
    for _ in range(years):
        size = size * (1.0 + params.epsilon)
        small = size < options.min_size
        weight = np.where(small, 0.0, weight * (1.0 - params.theta))
        if options.spinoffs:
            p = np.where(size >= options.min_parent_size, spinoff_probability(size, params, options.orientation), 0.0)
            p = np.where(weight > 0, p, 0.0)
            sigma = np.clip(spin_mean, 1.0, np.maximum(size - 1.0, 1.0))
            child_w = weight * p
            cw = math.fsum(child_w.tolist())
            if cw > 0:
                cs = math.fsum((child_w * sigma).tolist()) / cw
                size = size - p * sigma
                size = np.append(size, cs)
                weight = np.append(weight, cw)
        live = weight > 0
        size, weight = size[live], weight[live]
        out.append((math.fsum(weight.tolist()), math.fsum((weight * size).tolist())))
    return out
