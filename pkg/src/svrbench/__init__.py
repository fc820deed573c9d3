from .errors import (
    SvrBenchError,
    ConfigError,
    FormatError,
    DimensionMismatch,
    InsufficientData,
    MissingUtterance,
    MissingLabels,
    EmptyClass,
    DegenerateCohort,
    MissingCell,
    ZeroVector,
    SingularCovariance,
    NumericalDivergence,
)
from .embeddings import (
    Embedding,
    EmbeddingSet,
    Trial,
    ScoreEntry,
    ScoreSet,
    cosine_similarity,
    length_normalize,
    length_normalize_set,
)
from .file_io import load_embeddings, save_embeddings, load_trials, save_trials, load_scores, save_scores
from .network import MlpParameters, PairSample, init_parameters, mlp_forward, svr_pair_loss, svr_pair_grad
from .network import load_model, save_model
from .training import TrainConfig, PairedData, sample_pairs, train, reconstruct
from .plda import PldaModel, plda_train_em, plda_score, plda_adapt, load_plda, save_plda
from .scoring import CosineBackend, PldaBackend, Cohort, ScoringOptions, snorm, score_trials
from .metrics import OperatingPoint, MetricsReport, operating_points, eer, min_dcf, evaluate
from .simulate import WorldConfig, DegradationChannel, SplitConfig, generate_world, degrade, make_protocol
from .experiment import sweep_alpha, summarize, run_full_experiment
from .cli import run_command

__all__ = [
    "SvrBenchError",
    "ConfigError",
    "FormatError",
    "DimensionMismatch",
    "InsufficientData",
    "MissingUtterance",
    "MissingLabels",
    "EmptyClass",
    "DegenerateCohort",
    "MissingCell",
    "ZeroVector",
    "SingularCovariance",
    "NumericalDivergence",
    "Embedding",
    "EmbeddingSet",
    "Trial",
    "ScoreEntry",
    "ScoreSet",
    "cosine_similarity",
    "length_normalize",
    "length_normalize_set",
    "load_embeddings",
    "save_embeddings",
    "load_trials",
    "save_trials",
    "load_scores",
    "save_scores",
    "MlpParameters",
    "PairSample",
    "init_parameters",
    "mlp_forward",
    "svr_pair_loss",
    "svr_pair_grad",
    "load_model",
    "save_model",
    "TrainConfig",
    "PairedData",
    "sample_pairs",
    "train",
    "reconstruct",
    "PldaModel",
    "plda_train_em",
    "plda_score",
    "plda_adapt",
    "load_plda",
    "save_plda",
    "CosineBackend",
    "PldaBackend",
    "Cohort",
    "ScoringOptions",
    "snorm",
    "score_trials",
    "OperatingPoint",
    "MetricsReport",
    "operating_points",
    "eer",
    "min_dcf",
    "evaluate",
    "WorldConfig",
    "DegradationChannel",
    "SplitConfig",
    "generate_world",
    "degrade",
    "make_protocol",
    "sweep_alpha",
    "summarize",
    "run_full_experiment",
    "run_command",
]
