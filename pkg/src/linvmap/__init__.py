"""Dense correspondence between non-rigid point clouds through linearly-invariant embeddings.

A network maps each cloud to a per-point ``k``-dimensional embedding such that
corresponding embeddings of two shapes differ by a ``k x k`` linear transform.
A second network produces probe functions that pin that transform down at test
time; matches are nearest neighbors in the aligned embedding space.
"""
from .errors import (
    ContractError,
    DisconnectedGraphWarning,
    LinvmapError,
    NumericalFailure,
    RankWarning,
    SingularEmbeddingError,
    TrainingError,
)
from .fmaps import estimate_adjoint, extract_map, fmap_from_pi, graph_laplacian_basis, gt_adjoint
from .geometry import PointCloud, corrupt, correspondence_error, make_template, normalize, synth_pair
from .network import PointNetLite, load_checkpoint, save_checkpoint
from .pipeline import (
    MatchReport,
    TrainConfig,
    evaluate,
    match,
    match_laplacian,
    match_universal,
    toy_benchmark,
    train_stage1,
    train_stage2,
    train_universal,
)

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DisconnectedGraphWarning",
    "LinvmapError",
    "MatchReport",
    "NumericalFailure",
    "PointCloud",
    "PointNetLite",
    "RankWarning",
    "SingularEmbeddingError",
    "TrainConfig",
    "TrainingError",
    "correspondence_error",
    "corrupt",
    "estimate_adjoint",
    "evaluate",
    "extract_map",
    "fmap_from_pi",
    "graph_laplacian_basis",
    "gt_adjoint",
    "load_checkpoint",
    "make_template",
    "match",
    "match_laplacian",
    "match_universal",
    "normalize",
    "save_checkpoint",
    "synth_pair",
    "toy_benchmark",
    "train_stage1",
    "train_stage2",
    "train_universal",
]
