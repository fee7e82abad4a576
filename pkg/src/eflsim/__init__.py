"""Deterministic simulator of an ensemble federated learning protocol."""

__version__ = "0.1.0"

from .data import LabeledDataset, NodeData  # noqa: F401
from .learners import LearnerConfig, default_roster, fine_tune, train  # noqa: F401
from .models import FusionRule, ModelId, ModelTree, predict, predict_proba  # noqa: F401
from .server import FederationConfig, FederationTrace, run_federation  # noqa: F401
