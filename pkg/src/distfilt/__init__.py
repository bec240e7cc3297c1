"""distfilt: synthesis and validation of cooperating H-infinity estimator
networks over directed communication graphs.

The package solves the coupled matrix-inequality conditions that certify a
network of interconnected state estimators, either centrally or by a
distributed method-of-multipliers iteration in which every node only
talks to its graph neighbors, and then validates the synthesized gains by
closed-loop simulation.
"""

from importlib import resources

from .config import ScenarioConfig, load_config, parse_config
from .distributed import ConsensusProtocol, RunOptions, run
from .lmis import Gains, SynthesisParams, synthesize_central
from .model import CommGraph, Plant, SensorNode, check_assumptions
from .simulate import Scenario, hinf_metrics, integrate

__all__ = [
    "CommGraph",
    "ConsensusProtocol",
    "Gains",
    "Plant",
    "RunOptions",
    "Scenario",
    "ScenarioConfig",
    "SensorNode",
    "SynthesisParams",
    "bundled_scenario_path",
    "check_assumptions",
    "hinf_metrics",
    "integrate",
    "load_config",
    "parse_config",
    "run",
    "synthesize_central",
]

__version__ = "0.1.0"


def bundled_scenario_path(name="sensor6"):
    """Filesystem path of a scenario file shipped with the package."""
    return str(resources.files("distfilt").joinpath("data", f"{name}.cfg"))
