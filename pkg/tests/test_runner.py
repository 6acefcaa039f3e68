import filecmp
import json
import logging

import numpy as np
import pytest

from firmsim.config import from_dict
from firmsim.ingest import RegistryRecord, municipality_blocks, write_municipality_map, write_registry
from firmsim.runner import RunError, initial_state, run, simulate
from firmsim.world import GridGeometry

QUIET = {"epsilon": 0.0, "theta": 0.0, "sigma_phi": 0.0, "spin_alpha": 0.0, "spin_beta": -1e9}


def small(**kw):
    data = {"grid": {"ncols": 20, "nrows": 16}, "synthetic": {"firms": 300, "block": 4}, "seed": 5,
            "start_year": 1950, "end_year": 1956, "snapshot_every": 3}
    data.update(kw)
    return from_dict(data).validate()


def test_null_dynamics_output_equals_input(tmp_path):
    cfg = small(end_year=1951, sector_defaults=QUIET, relocation={"lambda": [1.0, 0.0, 0.0]})
    res = run(cfg, tmp_path)
    a = (tmp_path / "firms_1950.csv").read_text().splitlines()
    b = (tmp_path / "firms_1951.csv").read_text().splitlines()
    assert len(a) == len(b) == res.state.n_firms + 1
    # identical apart from the year column
    assert [r.rsplit(",", 1)[0] for r in a] == [r.rsplit(",", 1)[0] for r in b]
    assert (tmp_path / "raster_1950.csv").read_text() == (tmp_path / "raster_1951.csv").read_text()


def test_iterations_logged(caplog):
    cfg = small(end_year=2004)
    with caplog.at_level(logging.INFO, logger="firmsim.runner"):
        res = simulate(cfg)
    assert res.iterations == 54
    assert len([r for r in caplog.records if r.message.startswith("year ")]) == 54


def test_bookkeeping_residuals_zero():
    cfg = small(end_year=1970, sector_defaults={"theta": 0.03, "epsilon": 0.01, "spin_alpha": 0.0,
                                                 "spin_beta": -5.0, "s_crit": 5.0})
    res = simulate(cfg)
    rows = [r for r in res.aggregates if r["year"] > 1950]
    assert sum(r["closures"] for r in rows) > 0 and sum(r["spinoffs"] for r in rows) > 0
    assert all(r["firm_residual"] == 0 for r in rows)
    assert all(r["employee_residual"] == 0.0 for r in rows)
    final = [r for r in res.aggregates if r["year"] == 1970]
    assert sum(r["firms"] for r in final) == res.state.n_firms


def test_deterministic_and_seeded(tmp_path):
    run(small(), tmp_path / "a")
    run(small(), tmp_path / "b")
    run(small(seed=6), tmp_path / "c")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert names == ["aggregates.csv", "firms_1950.csv", "firms_1953.csv", "firms_1956.csv",
                     "raster_1950.csv", "raster_1953.csv", "raster_1956.csv"]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []
    assert (tmp_path / "a" / "firms_1956.csv").read_bytes() != (tmp_path / "c" / "firms_1956.csv").read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["iterations"] == 6 and report["max_abs_employee_residual"] == 0.0
    assert set(report["timings_seconds"]) >= {"fields", "demography", "relocation", "total"}


def test_relocation_first_and_incremental():
    a = simulate(small(event_order="relocation-first"))
    b = simulate(small(relocation={"field_update": "incremental"}))
    assert a.iterations == b.iterations == 6
    a.state.check_consistency()
    b.state.check_consistency()
    assert all(r["employee_residual"] == 0.0 for r in a.aggregates + b.aggregates)


def test_registry_input(tmp_path):
    g = GridGeometry(10, 10)
    mmap = municipality_blocks(g, 5)
    recs = [RegistryRecord(i, 1 + i % 4, 1 + i % 7, i % 4) for i in range(80)]
    with open(tmp_path / "reg.csv", "w") as fh:
        write_registry(recs, fh)
    with open(tmp_path / "map.csv", "w") as fh:
        write_municipality_map(mmap, fh)
    cfg = from_dict({"grid": {"ncols": 10, "nrows": 10}, "end_year": 1952,
                     "input": {"registry": str(tmp_path / "reg.csv"), "municipality_map": str(tmp_path / "map.csv")}})
    st_ = initial_state(cfg.validate())
    assert st_.n_firms == 80 and st_.year == 1950
    for f in st_.firms():
        assert f.cell in mmap[f.firm_id % 4]
    assert run(cfg, tmp_path / "out").iterations == 2


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(RunError):
        run(small(), blocker / "sub")
