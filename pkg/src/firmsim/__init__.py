"""Agent-based simulation of firm demography and location on a regular grid."""

from .kernels import BACKEND
from .world import (N_SECTORS, CellId, Firm, GridGeometry, RelocationParams, SectorParams, WorldState,
                    build_world)

__version__ = "0.1.0"
