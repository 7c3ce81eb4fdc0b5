"""Footstep planning for a passive planar spring-loaded inverted pendulum hopper."""

from .slip import ApexState, FailureKind, HopperParams, OdeCounter, apex_step
from .terrain import Terrain, TerrainGenConfig, discretize, gen_world

__version__ = "0.1.0"

__all__ = [
    "ApexState",
    "FailureKind",
    "HopperParams",
    "OdeCounter",
    "Terrain",
    "TerrainGenConfig",
    "apex_step",
    "discretize",
    "gen_world",
]
