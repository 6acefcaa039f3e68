"""Acceptance criteria 1-8, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed to the terminal even when output capture is on.
"""

import filecmp
import math
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firmsim import rng as krng
from firmsim.calibration import fit_sector, bundled_targets
from firmsim.config import from_dict, load_config
from firmsim.demography import DemographyOptions, simulate_expected, spinoff_probability, split_size, step_demography
from firmsim.relocation import RelocationMode, choose_destination, step_relocation
from firmsim.runner import run, simulate
from firmsim.spatial import PotentialField, compute_fields, potential_at, truncation_bound
from firmsim.world import N_SECTORS, CellId, Firm, GridGeometry, RelocationParams, SectorParams, build_world


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return report


# 1 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fits():
    t0 = time.perf_counter()
    res = [fit_sector(t) for t in bundled_targets()]
    return res, time.perf_counter() - t0


def test_criterion_1_calibration(verdict, fits):
    res, elapsed = fits
    assert len(res) == 21
    ok_rows = [r for r in res if r.converged]
    flagged = [r for r in res if not r.converged]
    within = all(r.rel_xi <= 1e-3 and r.rel_psi <= 1e-3 for r in ok_rows)
    # a sector may only be missing from the converged set if it is flagged with a reason
    reported = all(r.message and (r.rel_xi > 1e-3 or r.rel_psi > 1e-3) for r in flagged)
    worst = max(max(r.rel_xi, r.rel_psi) for r in ok_rows)
    detail = (f"{len(ok_rows)}/21 sectors converged (worst relative objective {worst:.1e}); "
              f"flagged infeasible: {[(r.sector, round(r.rel_psi, 3)) for r in flagged]}; {elapsed:.2f} s")
    verdict(1, within and reported and elapsed <= 60.0, detail)


# 2 -------------------------------------------------------------------------

def test_criterion_2_mean_field_consistency(verdict, fits):
    res, _ = fits
    worst = 0.0
    rows = []
    for r, t in zip(res, bundled_targets()):
        if not r.converged:
            continue
        params = replace(r.params, sigma_phi=0.0, sigma_rho=0.0)
        m0 = t.employees_t0 / t.firms_t0
        path = simulate_expected(np.full(t.firms_t0, m0), params, 54)
        f, e = path[-1]
        dev = max(abs(f - t.firms_T) / t.firms_T, abs(e - t.employees_T) / t.employees_T)
        rows.append((t.sector, dev))
        worst = max(worst, dev)
    worst_sector = max(rows, key=lambda x: x[1])[0]
    verdict(2, worst <= 0.01, f"{len(rows)} converged sectors, worst deviation {worst:.3%} (sector {worst_sector})")


# 3 -------------------------------------------------------------------------

def test_criterion_3_kernel_oracle(verdict):
    rng = np.random.default_rng(2024)
    g = GridGeometry(50, 50)
    firms = [Firm(i, int(rng.integers(1, 22)), 1.0, (int(rng.integers(0, 50)), int(rng.integers(0, 50))))
             for i in range(1000)]
    state = build_world(firms, g, 0)
    decays = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    params = {s: SectorParams(decay_mp=decays[s % 6], decay_ap=decays[(s + 2) % 6], decay_cp=decays[(s + 4) % 6])
              for s in range(1, 22)}
    t0 = time.perf_counter()
    exact = compute_fields(state, params, method="exact")
    total = state.occupancy_total.astype(float)
    # spot check the vectorised exact path against a direct fsum at a few cells
    for cell in ((0, 0), (25, 17), (49, 49)):
        assert exact.mp[0][cell[1], cell[0]] == pytest.approx(potential_at(cell, total, params[1].decay_mp), rel=1e-13)
    worst_ratio = 0.0
    for radius in (5.0, 10.0, 20.0):
        tr = compute_fields(state, params, method="truncated", radius=radius)
        for s in range(1, 22):
            p = params[s]
            for name, mass, decay in (("mp", total, p.decay_mp), ("cp", total, p.decay_cp),
                                      ("ap", state.occupancy[s - 1].astype(float), p.decay_ap)):
                err = getattr(exact, name)[s - 1] - getattr(tr, name)[s - 1]
                bound = truncation_bound(mass, decay, radius)
                slack = 1e-12 * np.maximum(getattr(exact, name)[s - 1], 1.0)
                if np.any(err > bound + slack) or np.any(err < -slack):
                    verdict(3, False, f"bound violated at R={radius}, sector {s}, {name}")
                nz = bound > 0
                if nz.any():
                    worst_ratio = max(worst_ratio, float(np.max(err[nz] / bound[nz])))
    inf = compute_fields(state, params, method="truncated", radius=math.inf)
    rel = max(float(np.max(np.abs(getattr(inf, n) - getattr(exact, n)) / np.maximum(getattr(exact, n), 1e-300)))
              for n in ("mp", "ap", "cp"))
    elapsed = time.perf_counter() - t0
    verdict(3, rel <= 1e-12 and elapsed <= 10.0,
            f"bound holds for R in (5, 10, 20) (max error/bound {worst_ratio:.3f}); R=inf max rel {rel:.1e}; {elapsed:.2f} s")


# 4 -------------------------------------------------------------------------

def test_criterion_4_demographic_statistics(verdict):
    p = 0.99**54
    sd = math.sqrt(1000 * p * (1 - p))
    params = {s: SectorParams(theta=0.01, epsilon=0.0, sigma_phi=0.0) for s in range(1, 22)}
    counts = []
    for seed in range(10):
        state = build_world([Firm(i, 1 + i % 21, 5.0, (i % 10, i // 100)) for i in range(1000)], GridGeometry(10, 10), 0)
        for _ in range(54):
            step_demography(state, params, seed, DemographyOptions(spinoffs=False))
            state.year += 1
        counts.append(state.n_firms)
    surv_ok = all(abs(c - 581.0) <= 3 * sd for c in counts)

    # movers through the relocation step itself: 10^5 firms, one year
    n = 100_000
    g = GridGeometry(150, 150)
    rng = np.random.default_rng(0)
    cols, rows = rng.integers(0, 150, n), rng.integers(0, 150, n)
    firms = [Firm(i, 1 + i % 21, 3.0, (int(c), int(r)), 1990) for i, (c, r) in enumerate(zip(cols, rows))]
    state = build_world(firms, g, 1990)
    sp = {s: SectorParams() for s in range(1, 22)}
    moves = step_relocation(state, compute_fields(state, sp), sp, RelocationParams(0.9, 0.09, 0.01), 77)
    frac = len(moves) / n
    frac_sd = math.sqrt(0.1 * 0.9 / n)
    mov_ok = abs(frac - 0.10) <= 3 * frac_sd
    verdict(4, surv_ok and mov_ok,
            f"survivors {counts} vs 581.0 +- {3 * sd:.1f}; mover fraction {frac:.5f} vs 0.1 +- {3 * frac_sd:.5f}")


# 5 -------------------------------------------------------------------------

@settings(max_examples=500, deadline=None)
@given(st.floats(2.0, 1e9, allow_subnormal=False), st.floats(1e-9, 1e10, allow_subnormal=False))
def _split_property(size, sigma):
    parent, child = split_size(size, sigma)
    assert parent + child == size


def test_criterion_5_conservation(verdict):
    _split_property()

    params = {s: SectorParams(epsilon=0.02, theta=0.03, sigma_phi=0.1, sigma_rho=0.01, spin_alpha=0.0,
                              spin_beta=-8.0, s_crit=4.0, spin_mu=1.0) for s in range(1, 22)}
    years_checked = 0
    for seed in (1, 99, 2**40 + 3):
        rng = np.random.default_rng(seed % 1000)
        firms = [Firm(i, int(rng.integers(1, 22)), float(rng.integers(1, 80)) * 1.01,
                      (int(rng.integers(0, 20)), int(rng.integers(0, 20)))) for i in range(400)]
        state = build_world(firms, GridGeometry(20, 20), 0)
        for _ in range(15):
            old_sizes = [Fraction(x) for x in state.size.tolist()]
            n0 = state.n_firms
            out = step_demography(state, params, seed)
            growth = sum((Fraction(a) - Fraction(b) for a, b in zip(out.grown_size.tolist(), out.old_size.tolist())),
                         Fraction(0))
            closed = sum((Fraction(x) for x in out.grown_size[out.closed_mask].tolist()), Fraction(0))
            new_total = sum((Fraction(x) for x in state.size.tolist()), Fraction(0))
            assert state.n_firms == n0 - len(out.closed) + len(out.spinoffs)
            assert new_total == sum(old_sizes, Fraction(0)) + growth - closed
            before = state.copy()
            fld = compute_fields(state, params)
            step_relocation(state, fld, params, RelocationParams(0.5, 0.3, 0.2), seed)
            assert state.n_firms == before.n_firms
            assert np.array_equal(np.sort(state.size), np.sort(before.size))
            assert math.fsum(state.size.tolist()) == math.fsum(before.size.tolist())
            state.check_consistency()
            state.year += 1
            years_checked += 1

    cfg = from_dict({"preset": "paper-2008", "grid": {"ncols": 40, "nrows": 30}, "synthetic": {"firms": 1500},
                     "end_year": 1970, "seed": 12}).validate()
    res = simulate(cfg)
    runner_ok = all(r["firm_residual"] == 0 and r["employee_residual"] == 0.0 for r in res.aggregates)
    verdict(5, runner_ok, f"split property 500 cases bit-exact; firm/employee balances exact in rationals over "
                          f"{years_checked} seeded years; relocation conserves counts and sizes; runner residuals all 0")


# 6 -------------------------------------------------------------------------

def _flat(g, mp=0.0, ap=0.0, cp=0.0):
    shape = (N_SECTORS, g.nrows, g.ncols)
    return PotentialField(np.full(shape, mp), np.full(shape, ap), np.full(shape, cp), 0)


def test_criterion_6_choice_properties(verdict):
    # logistic midpoint
    rng = np.random.default_rng(6)
    mid_ok = True
    for _ in range(2000):
        a, size, sc = rng.uniform(0.01, 10), rng.uniform(0.5, 1e4), rng.uniform(0.1, 100)
        p = SectorParams(spin_alpha=a, spin_beta=a * size, s_crit=sc)
        mid_ok &= spinoff_probability(size, p) == 0.5 and spinoff_probability(size, p, -1) == 0.5

    # argmax invariance under joint positive scaling of the utility weights and delta
    g = GridGeometry(25, 20)
    inv_ok = True
    trials = 0
    for seed in range(40):
        r = np.random.default_rng(seed)
        firms = [Firm(i, 1 + i % 3, 2.0, (int(r.integers(0, 25)), int(r.integers(0, 20)))) for i in range(150)]
        state = build_world(firms, g, 0)
        shape = (N_SECTORS, g.nrows, g.ncols)
        fld = PotentialField(r.random(shape) * 5, r.random(shape) * 5, r.random(shape) * 5, 0)
        base = SectorParams(w_mp=r.uniform(0.1, 2), w_ap=r.uniform(0.1, 2), w_cp=-r.uniform(0.1, 2),
                            delta=-r.uniform(0.001, 0.5))
        f = state.firms()[seed]
        for mode in (RelocationMode.MOVE_TO_OCCUPIED, RelocationMode.MOVE_TO_UNOCCUPIED):
            ref = choose_destination(f, mode, state, fld, base, krng.Stream(seed, 1))
            for k in (0.25, 3.7, 1000.0):
                scaled = replace(base, w_mp=k * base.w_mp, w_ap=k * base.w_ap, w_cp=k * base.w_cp, delta=k * base.delta)
                inv_ok &= choose_destination(f, mode, state, fld, scaled, krng.Stream(seed, 1)) == ref
                trials += 1

    # two-cell instances: origin at (0, 0), candidates (1, 0) and (0, 1) at equal distance
    g3 = GridGeometry(2, 2)
    st3 = build_world([Firm(0, 1, 2.0, (0, 0))], g3, 0)
    p = SectorParams()
    cong = _flat(g3, 1.0, 1.0, 1.0)
    cong.cp[0, 0, 1] = 3.0  # more congestion at (1, 0)
    cong_ok = choose_destination(st3.firm(0), RelocationMode.MOVE_TO_UNOCCUPIED, st3, cong, p,
                                 krng.Stream(0)) == CellId(0, 1)
    cong2 = _flat(g3, 1.0, 1.0, 1.0)
    cong2.cp[0, 1, 0] = 3.0
    cong2.cp[0, 1, 1] = 3.0
    cong_ok &= choose_destination(st3.firm(0), RelocationMode.MOVE_TO_UNOCCUPIED, st3, cong2, p,
                                  krng.Stream(0)) == CellId(1, 0)
    agg = _flat(g3, 1.0, 1.0, 1.0)
    agg.ap[0, 1, 0] = 4.0  # more same-sector mass at (0, 1)
    agg_ok = choose_destination(st3.firm(0), RelocationMode.MOVE_TO_UNOCCUPIED, st3, agg, p,
                                krng.Stream(0)) == CellId(0, 1)
    verdict(6, bool(mid_ok and inv_ok and cong_ok and agg_ok),
            f"midpoint exact in 2000 cases; argmax invariant in {trials} scaled choices; "
            f"congestion repulsion {cong_ok}; agglomeration attraction {agg_ok}")


# 7 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_determinism(verdict, tmp_path):
    cfg = load_config(preset="paper-2008", overrides={"seed": 2008})
    assert (cfg.grid.ncols, cfg.grid.nrows, cfg.synthetic["firms"]) == (125, 106, 10000)
    a = run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    other = load_config(preset="paper-2008", overrides={"seed": 2009})
    run(other, tmp_path / "c")
    differs = [n for n in names if (tmp_path / "a" / n).read_bytes() != (tmp_path / "c" / n).read_bytes()]
    ok = not mismatch and not errors and len(differs) == len(names)
    verdict(7, ok, f"{len(names)} output files byte-identical across repeat runs ({a.iterations} years, "
                   f"{a.state.n_firms} final firms); {len(differs)}/{len(names)} differ under another seed")


# 8 -------------------------------------------------------------------------

def test_criterion_8_path_dependency(verdict):
    cfg = from_dict({"preset": "paper-2008", "grid": {"ncols": 60, "nrows": 50},
                     "synthetic": {"firms": 3000, "block": 5}, "seed": 8,
                     "relocation": {"lambda": [0.9, 0.1, 0.0]}}).validate()
    seen: dict[int, set] = {}
    initial: dict[int, set] = {}

    def observe(state):
        for s in range(1, N_SECTORS + 1):
            rows, cols = np.nonzero(state.occupancy[s - 1])
            seen.setdefault(s, set()).update(zip(cols.tolist(), rows.tolist()))
        if not initial:
            initial.update({s: set(c) for s, c in seen.items()})

    res = simulate(cfg, observer=observe)
    bad = [s for s in seen if not seen[s] <= initial[s]]
    moved = sum(r["moves"] for r in res.aggregates)
    verdict(8, res.iterations == 54 and not bad and moved > 0,
            f"{res.iterations} years, {moved} relocations; sectors leaving their t=0 cells: {bad or 'none'}")
