"""Scenario configuration: TOML files, presets and validation."""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import rng as krng
from .demography import DemographyOptions
from .world import N_SECTORS, GridGeometry, RelocationParams, SectorParams, WorldError

PRESETS = ("paper-2008",)
EVENT_ORDERS = ("demography-first", "relocation-first")
_SECTOR_KEYS = {f.name for f in fields(SectorParams)}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    seed: int = 0
    start_year: int = 1950
    end_year: int = 2004
    grid: GridGeometry = field(default_factory=lambda: GridGeometry(125, 106, 1.0))
    sectors: dict = field(default_factory=dict)
    relocation: RelocationParams = field(default_factory=RelocationParams)
    demography: DemographyOptions = field(default_factory=DemographyOptions)
    event_order: str = "demography-first"
    potential_method: str = "truncated"
    potential_radius: float | None = None
    potential_tolerance: float = 1e-6
    potential_weighting: str = "firms"
    utility_form: str = "weighted"
    field_update: str = "synchronous"
    snapshot_every: int = 6
    registry: Path | None = None
    municipality_map: Path | None = None
    synthetic: dict | None = None
    output_dir: Path = Path("out")
    rng: str = krng.ALGORITHM

    @property
    def years(self) -> int:
        return self.end_year - self.start_year

    def validate(self, check_files: bool = True) -> "ScenarioConfig":
        if not self.start_year < self.end_year:
            raise ConfigError(f"start_year {self.start_year} must precede end_year {self.end_year}")
        if self.event_order not in EVENT_ORDERS:
            raise ConfigError(f"event_order must be one of {EVENT_ORDERS}")
        if self.potential_method not in ("exact", "truncated"):
            raise ConfigError("potential.method must be 'exact' or 'truncated'")
        if self.potential_weighting not in ("firms", "employees"):
            raise ConfigError("potential.weighting must be 'firms' or 'employees'")
        if self.potential_radius is not None and not self.potential_radius > 0:
            raise ConfigError("potential.radius must be positive")
        if not 0 < self.potential_tolerance < 1:
            raise ConfigError("potential.tolerance must lie in (0, 1)")
        if self.utility_form not in ("weighted", "unweighted"):
            raise ConfigError("relocation.utility must be 'weighted' or 'unweighted'")
        if self.field_update not in ("synchronous", "incremental"):
            raise ConfigError("relocation.field_update must be 'synchronous' or 'incremental'")
        if self.field_update == "incremental" and self.potential_weighting != "firms":
            raise ConfigError("incremental field updates require firm-count weighting")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")
        if self.rng != krng.ALGORITHM:
            raise ConfigError(f"rng algorithm {self.rng!r} not available (have {krng.ALGORITHM!r})")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.synthetic is None and self.registry is None:
            raise ConfigError("either [input] registry/municipality_map or [synthetic] is required")
        if self.registry is not None and self.municipality_map is None:
            raise ConfigError("a registry needs a municipality_map")
        if check_files and self.registry is not None:
            for p in (self.registry, self.municipality_map):
                if not Path(p).is_file():
                    raise ConfigError(f"input file not found: {p}")
        return self


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("firmsim").joinpath(f"data/{name}.toml").read_text()
    return tomllib.loads(text)


def _sector_params(values: dict, where: str) -> SectorParams:
    values = dict(values)
    mean = values.pop("spin_mean", None)
    unknown = set(values) - _SECTOR_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        p = SectorParams(**{k: float(v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    if mean is not None:
        m = p.s_crit if mean == "s_crit" else float(mean)
        if not m > 0:
            raise ConfigError(f"{where}: spin_mean must be positive")
        p.spin_mu = math.log(m) - 0.5 * p.spin_sigma**2
    return p


def from_dict(data: dict, base_dir: Path | None = None) -> ScenarioConfig:
    """Build a config from parsed TOML, applying a named ``preset`` first."""
    data = dict(data)
    preset = data.pop("preset", None)
    if preset is not None:
        data = _merge(preset_dict(preset), data)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    def path(p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    try:
        g = data.get("grid", {})
        grid = GridGeometry(int(g.get("ncols", 125)), int(g.get("nrows", 106)), float(g.get("cell_size", 1.0)))
        reloc = data.get("relocation", {})
        lam = reloc.get("lambda", [0.9, 0.09, 0.01])
        if len(lam) != 3:
            raise ConfigError("relocation.lambda needs three probabilities")
        pot = data.get("potential", {})
        dem = data.get("demography", {})
        defaults = data.get("sector_defaults", {})
        sectors = {}
        for s in range(1, N_SECTORS + 1):
            own = data.get("sectors", {}).get(str(s), {})
            sectors[s] = _sector_params({**defaults, **own}, f"sectors.{s}")
        extra = set(data.get("sectors", {})) - {str(s) for s in range(1, N_SECTORS + 1)}
        if extra:
            raise ConfigError(f"unknown sector tables {sorted(extra)}")
        inp = data.get("input", {})
        synthetic = None if inp.get("registry") is not None else data.get("synthetic")
        cfg = ScenarioConfig(
            seed=int(data.get("seed", 0)),
            start_year=int(data.get("start_year", 1950)),
            end_year=int(data.get("end_year", 2004)),
            grid=grid,
            sectors=sectors,
            relocation=RelocationParams(*(float(x) for x in lam)),
            demography=DemographyOptions(
                orientation=int(dem.get("orientation", 1)),
                min_size=float(dem.get("min_size", 0.5)),
                min_parent_size=float(dem.get("min_parent_size", 2.0)),
                spinoffs=bool(dem.get("spinoffs", True)),
            ),
            event_order=str(data.get("event_order", "demography-first")),
            potential_method=str(pot.get("method", "truncated")),
            potential_radius=None if pot.get("radius") is None else float(pot["radius"]),
            potential_tolerance=float(pot.get("tolerance", 1e-6)),
            potential_weighting=str(pot.get("weighting", "firms")),
            utility_form=str(reloc.get("utility", "weighted")),
            field_update=str(reloc.get("field_update", "synchronous")),
            snapshot_every=int(data.get("snapshot_every", 6)),
            registry=path(inp.get("registry")),
            municipality_map=path(inp.get("municipality_map")),
            synthetic=synthetic,
            output_dir=path(data.get("output_dir", "out")),
            rng=str(data.get("rng", krng.ALGORITHM)),
        )
    except (WorldError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> ScenarioConfig:
    data: dict = {}
    base_dir = None
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base_dir = path.parent
    if preset is not None:
        data = {**data, "preset": preset} if "preset" not in data else data
    if overrides:
        data = _merge(data, overrides)
    return from_dict(data, base_dir)
