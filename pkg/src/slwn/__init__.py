"""Steerable block-structured CFD server with sliding-window data streaming."""

from .geometry import Box, Face, FACES, face_from_name
from .hiergrid import FieldSet, Forest, GridNode, create_root, distribute
from .exchange import HaloMsg, TopologyIndex, run_exchange_cycle
from .solver import BoundaryCondition, BoundarySpec, FluidParams, Simulation
from .window import CellBatch, Selection, WindowQuery, extract, intersects, select

__version__ = "0.1.0"

__all__ = [
    "Box", "Face", "FACES", "face_from_name",
    "FieldSet", "Forest", "GridNode", "create_root", "distribute",
    "HaloMsg", "TopologyIndex", "run_exchange_cycle",
    "BoundaryCondition", "BoundarySpec", "FluidParams", "Simulation",
    "CellBatch", "Selection", "WindowQuery", "extract", "intersects", "select",
    "__version__",
]
