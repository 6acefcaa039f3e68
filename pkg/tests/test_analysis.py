import math

import numpy as np
import pytest

from conftest import random_world
from firmsim.analysis import (analyze, counts_from_firms, diff, load_counts, rank_size, top_decile_share,
                              zipf_slope)
from firmsim.ingest import write_snapshot
from firmsim.world import CellId


def test_all_in_one_cell():
    assert top_decile_share([40]) == 1.0
    assert math.isnan(zipf_slope([40])[0])


def test_exact_zipf():
    k = 10_000
    counts = [k / j for j in range(1, 200)]
    slope, r2 = zipf_slope(counts)
    assert abs(slope + 1.0) < 0.01 and r2 == pytest.approx(1.0)
    # integer counts, as cells hold whole firms
    slope_int, _ = zipf_slope([round(k / j) for j in range(1, 200)])
    assert abs(slope_int + 1.0) < 0.01


def test_uniform_flat():
    slope, _ = zipf_slope([7] * 50)
    assert slope == pytest.approx(0.0, abs=1e-12)


def test_top_decile_rounding_and_rank_size():
    counts = [1] * 10 + [0, 0] + [11]
    # 11 occupied cells -> ceil(1.1) = 2 top cells
    assert top_decile_share(counts) == pytest.approx(12 / 21)
    assert rank_size([0, 3, 1, 2]).tolist() == [3, 2, 1]
    assert math.isnan(top_decile_share([]))


def test_analyze_snapshot_and_raster_agree(tmp_path):
    st_ = random_world(400, seed=2)
    fp, rp = write_snapshot(st_, tmp_path)
    a = analyze(load_counts(fp))
    b = analyze(load_counts(rp))
    assert a == b
    assert sum(m.firms for m in a) == 400
    assert analyze(load_counts(fp)) == a  # pure


def test_diff():
    a = {1: {CellId(0, 0): 2, CellId(1, 0): 1}}
    b = {1: {CellId(0, 0): 2, CellId(2, 2): 3}, 4: {CellId(0, 0): 1}}
    assert diff(a, b) == [(1, 0, 1, 1, 0, -1), (2, 2, 1, 0, 3, 3), (0, 0, 4, 0, 1, 1)]
    assert diff(a, a) == []


def test_counts_from_firms():
    st_ = random_world(50)
    c = counts_from_firms(st_.firms())
    for s, cells in c.items():
        for cell, n in cells.items():
            assert st_.occupancy[s - 1, cell.row, cell.col] == n
