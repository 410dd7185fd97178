"""Learned asymmetric rectification of segmentation masks with a bilayer MRF."""
from .classifiers import ClassifierSource, ColorMixtureModel, fit_fb_model, predict_prob_map, reclassify_refine, threshold_map
from .core import (
    EdgeWeightField,
    InvalidInputError,
    WeightVector,
    build_edge_weights,
    compute_features,
    compute_features_rgbd,
    energy,
    shape_distance,
)
from .edges import EdgeConfig, detect_edges
from .evaluation import accumulation_curve, boundary_deviation, fpr_fnr, pixel_error, uniform_baseline_weights
from .inference import (
    PairwiseCosts,
    UnaryCosts,
    brute_force_minimize,
    build_pairwise,
    build_unary,
    loss_augmented_minimize,
    minimize_energy,
)
from .learning import (
    LearnConfig,
    TrainingSample,
    cross_validate_prior,
    make_training_sample,
    solve_simplex_qp,
    theorem1_harness,
    train_2cssvm,
    train_ossvm,
    train_ossvm_rgbd,
)
from .pipeline import FrameData, PipelineConfig, PropagationResult, propagate_sequence, rectify_frame
from .synth import BiasSpec, SceneSpec, generate_sequence, inject_bias, render_sequence

__all__ = [
    "BiasSpec",
    "ClassifierSource",
    "ColorMixtureModel",
    "EdgeConfig",
    "EdgeWeightField",
    "FrameData",
    "InvalidInputError",
    "LearnConfig",
    "PairwiseCosts",
    "PipelineConfig",
    "PropagationResult",
    "SceneSpec",
    "TrainingSample",
    "UnaryCosts",
    "WeightVector",
    "accumulation_curve",
    "boundary_deviation",
    "brute_force_minimize",
    "build_edge_weights",
    "build_pairwise",
    "build_unary",
    "compute_features",
    "compute_features_rgbd",
    "cross_validate_prior",
    "detect_edges",
    "energy",
    "fit_fb_model",
    "fpr_fnr",
    "generate_sequence",
    "inject_bias",
    "loss_augmented_minimize",
    "make_training_sample",
    "minimize_energy",
    "pixel_error",
    "predict_prob_map",
    "propagate_sequence",
    "reclassify_refine",
    "rectify_frame",
    "render_sequence",
    "shape_distance",
    "solve_simplex_qp",
    "theorem1_harness",
    "threshold_map",
    "train_2cssvm",
    "train_ossvm",
    "train_ossvm_rgbd",
    "uniform_baseline_weights",
]

__version__ = "0.1.0"
