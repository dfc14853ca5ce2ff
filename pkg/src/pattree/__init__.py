"""Probabilistic attribute tree: attribute-routed soft clustering with a marginal softmax classifier."""

from . import data, head, kernels, trainer, tree
from .data import Dataset, SynthConfig, generate
from .tree import AttributeSchema, PatTree, build_tree, propagate
from .trainer import TrainConfig, run_training

__version__ = "0.1.0"

__all__ = [
    "data",
    "head",
    "kernels",
    "trainer",
    "tree",
    "Dataset",
    "SynthConfig",
    "generate",
    "AttributeSchema",
    "PatTree",
    "build_tree",
    "propagate",
    "TrainConfig",
    "run_training",
]
