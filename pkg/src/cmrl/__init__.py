"""Causal relational learning on graph pairs.

Disentangles a causal substructure from shortcut substructures conditioned on
the paired graph and trains with a conditional backdoor-adjustment objective.
"""

__version__ = "0.1.0"

from .disentangle import GumbelConfig
from .graphs import (
    Graph,
    PairDataset,
    PairSample,
    SplitPlan,
    kfold_splits,
    load_dataset,
    save_dataset,
    scaffold_ood_split,
)
from .model import ModelConfig, ModelState, build_model
from .synthetic import BiasedPairConfig, MotifSpec, bias_of, make_dataset, make_graph
from .tensor import Tape, Tensor, gradcheck
from .training import TrainConfig, bias_sweep, cross_validate, evaluate, train

__all__ = [
    "BiasedPairConfig",
    "Graph",
    "GumbelConfig",
    "ModelConfig",
    "ModelState",
    "MotifSpec",
    "PairDataset",
    "PairSample",
    "SplitPlan",
    "Tape",
    "Tensor",
    "TrainConfig",
    "bias_of",
    "bias_sweep",
    "build_model",
    "cross_validate",
    "evaluate",
    "gradcheck",
    "kfold_splits",
    "load_dataset",
    "make_dataset",
    "make_graph",
    "save_dataset",
    "scaffold_ood_split",
    "train",
]
