"""Neural machine translation with graph-convolutional encoders over
labeled directed graphs (semantic roles and/or syntactic dependencies)."""

from .config import DataPaths, ExperimentConfig, TrainConfig
from .corpus import AnnotatedSentence, Batch, BpeModel, LabelVocab, Vocabulary
from .model import Model, build_model
from .tensor import Tensor

__all__ = [
    "AnnotatedSentence",
    "Batch",
    "BpeModel",
    "DataPaths",
    "ExperimentConfig",
    "LabelVocab",
    "Model",
    "Tensor",
    "TrainConfig",
    "Vocabulary",
    "build_model",
]

__version__ = "0.1.0"
