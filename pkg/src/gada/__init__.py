"""Graph adversarial domain adaptation at desk scale."""

from .hierarchy import HierarchyGraph, PprConfig, load_graph
from .model import GadaModel, Predictions, forward_all, init_model
from .synth import ScenarioConfig, sample_scenario, standard_config, standard_scenarios
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"
