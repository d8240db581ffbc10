"""Temporal point-cloud segmentation toolkit.

A sparse-voxel backbone with two cross-frame mechanisms (global channel
attention, variation-aware feature interpolation) and a point-level temporal
refiner, trained end to end with hand-rolled backpropagation.
"""

from .errors import DivergenceError, InputError, StructuralError
from .frames import (
    ClassMap,
    Frame,
    VoxelGrid,
    align_to_previous,
    crop_centered,
    devoxelize,
    voxelize,
)
from .geometry import (
    CrossFrameDistances,
    NeighborSet,
    cross_frame_distances,
    interpolation_weights,
    knn_previous,
)
from .model import ModelConfig, SequenceModel, make_model
from .synthetic import SyntheticSceneSpec, generate_dataset, generate_synthetic_sequence
from .temporal import (
    InterpolationConfig,
    RefinerParams,
    TemporalGraph,
    build_temporal_graph,
    cross_frame_attention,
    make_refiner,
    refine_predictions,
    temporal_interpolation,
)
from .training import (
    PredictionSet,
    PseudoCache,
    TrainConfig,
    TrainLog,
    augment_pair,
    infer_sequence,
    train_stage1,
    train_stage2,
    train_stage3,
)
from .evaluation import ConfusionMatrix, EvalReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "ClassMap", "ConfusionMatrix", "CrossFrameDistances", "DivergenceError",
    "EvalReport", "Frame", "InputError", "InterpolationConfig", "ModelConfig",
    "NeighborSet", "PredictionSet", "PseudoCache", "RefinerParams",
    "SequenceModel", "StructuralError", "SyntheticSceneSpec", "TemporalGraph",
    "TrainConfig", "TrainLog", "VoxelGrid", "align_to_previous", "augment_pair",
    "build_temporal_graph", "crop_centered", "cross_frame_attention",
    "cross_frame_distances", "devoxelize", "evaluate", "generate_dataset",
    "generate_synthetic_sequence", "infer_sequence", "interpolation_weights",
    "knn_previous", "make_model", "make_refiner", "refine_predictions",
    "temporal_interpolation", "train_stage1", "train_stage2", "train_stage3",
    "voxelize",
]
