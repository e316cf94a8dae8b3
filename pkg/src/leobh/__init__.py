"""Beam-hopping and power control for multi-satellite TDOA positioning in LEO."""
from .crlb import SignalSpec, tdoa_crlb, toa_variance, user_crlb
from .errors import LeoBHError
from .fbhca import AlgoConfig, Scenario, Solution, run_fbhca, run_tmcb, run_uvbhs_epa
from .geometry import ConstellationParams, GroundPosition, build_constellation, propagate
from .linkbudget import LinkParams
from .runner import ScenarioConfig, load_config, run_orbit_height_sweep, run_snapshot_sweep

__version__ = "0.1.0"

__all__ = [
    "AlgoConfig", "ConstellationParams", "GroundPosition", "LeoBHError", "LinkParams",
    "Scenario", "ScenarioConfig", "SignalSpec", "Solution", "build_constellation",
    "load_config", "propagate", "run_fbhca", "run_orbit_height_sweep", "run_snapshot_sweep",
    "run_tmcb", "run_uvbhs_epa", "tdoa_crlb", "toa_variance", "user_crlb",
]
