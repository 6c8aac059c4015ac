"""Discriminative low-rank representation for robust classification.

Per-class low-rank recovery with a structural-incoherence penalty, a
low-rank projection that corrects corrupted queries, and collaborative
representation classification, plus SRC/LRC/NN baselines.
"""

__version__ = "0.1.0"

from .classifiers import (
    ClassificationOutcome,
    Dictionary,
    crc_classify,
    lrc_classify,
    nn_classify,
    src_classify,
)
from .data import CorruptionSpec, DatasetManifest, corrupt, load_dataset, synth_multisubspace
from .features import FeatureSpace, fit_pca, project
from .linalg import pinv, ridge_solve, shrink_l21, svd, svt
from .pipeline import PipelineOptions, TrainedModel, evaluate, predict, train
from .projection import ProjectionMatrix, correct_sample, learn_projection
from .samples import SampleMatrix
from .solver import RecoveryResult, SolverConfig, recover_dictionary, solve_class

__all__ = [
    "ClassificationOutcome",
    "CorruptionSpec",
    "DatasetManifest",
    "Dictionary",
    "FeatureSpace",
    "PipelineOptions",
    "ProjectionMatrix",
    "RecoveryResult",
    "SampleMatrix",
    "SolverConfig",
    "TrainedModel",
    "correct_sample",
    "corrupt",
    "crc_classify",
    "evaluate",
    "fit_pca",
    "learn_projection",
    "load_dataset",
    "lrc_classify",
    "nn_classify",
    "pinv",
    "predict",
    "project",
    "recover_dictionary",
    "ridge_solve",
    "shrink_l21",
    "solve_class",
    "src_classify",
    "svd",
    "svt",
    "synth_multisubspace",
]
