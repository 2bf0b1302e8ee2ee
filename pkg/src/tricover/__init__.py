"""White-box testing toolkit for feed-forward neural networks.

Measures pairwise coverage over neuron triplets spanning adjacent
layers, generates test inputs by gradient ascent on coverage and
cross-model divergence objectives, and flags inputs on which multiple
model implementations disagree.
"""

from .coverage import (CoverageState, CoverageStats, NeuronCoverageState,
                       Triplet, TripletRegistry, enumerate_triplets, load_state,
                       save_state, triplet_count, uncovered_targets)
from .errors import (ConfigError, CoverageError, DatasetError, ModelFileError,
                     NumericError, ObjectiveError, OracleError, ShapeError,
                     TricoverError)
from .generate import Candidate, GenParams, ascend, build_objective, generate
from .harness import (CampaignConfig, CampaignReport, read_report, render_table,
                      run_baseline, run_campaign, run_guided, run_random_eval,
                      write_report)
from .idx import Dataset, load_idx, save_idx
from .modelio import load_model, save_model
from .network import (ActivationTrace, LayerSpec, NetworkModel, forward,
                      layer_output_shape)
from .objective import (CoverageTerm, DifferentialTerm, NeuronId, ObjectiveSpec,
                        evaluate_with_gradient, input_gradient, objective_value)
from .oracle import (OracleVerdict, adversarial_ratio, judge,
                     judge_with_reference, seed_label, strict_majority,
                     verdict_from_labels)
from .tensor import Tensor, as_tensor

__version__ = "0.1.0"

__all__ = [
    "ActivationTrace", "CampaignConfig", "CampaignReport", "Candidate",
    "ConfigError", "CoverageError", "CoverageState", "CoverageStats",
    "CoverageTerm", "Dataset", "DatasetError", "DifferentialTerm", "GenParams",
    "LayerSpec", "ModelFileError", "NetworkModel", "NeuronCoverageState",
    "NeuronId", "NumericError", "ObjectiveError", "ObjectiveSpec",
    "OracleError", "OracleVerdict", "ShapeError", "Tensor", "TricoverError",
    "Triplet", "TripletRegistry", "adversarial_ratio", "ascend", "as_tensor",
    "build_objective", "enumerate_triplets", "evaluate_with_gradient",
    "forward", "generate", "input_gradient", "judge", "judge_with_reference",
    "layer_output_shape", "load_idx", "load_model", "load_state",
    "objective_value", "read_report", "render_table", "run_baseline",
    "run_campaign", "run_guided", "run_random_eval", "save_idx", "save_model",
    "save_state", "seed_label", "strict_majority", "triplet_count",
    "uncovered_targets", "verdict_from_labels", "write_report",
]
