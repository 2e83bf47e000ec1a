"""terraclass: per-point semantic classification of colored 3D point clouds.

Multi-scale covariance eigen-features + HSV color features over a voxel
pyramid, classified with in-repo Random Forest / Gradient Boosted Trees.
"""

from .cloudio import (
    CLASSES,
    PALETTE,
    UNLABELED,
    ClassSet,
    CloudFormatError,
    Point,
    PointCloud,
    read_cloud,
    synth_scene,
    write_cloud,
)
from .spatial import SpatialIndex, build_index, knn, knn_batch, radius_search
from .pyramid import PyramidLevel, ScalePyramid, base_scale, build_pyramid, voxel_downsample
from .geomfeat import (
    GEOM_FEATURE_NAMES,
    EigenDecomp3,
    GeomFeatures,
    covariance_tensor,
    eig3,
    features_multiscale,
    features_single_scale,
)
from .colorfeat import (
    color_feature_block,
    neighborhood_color_features,
    point_color_features,
    rgb_to_hsv,
)
from .featmat import FeatureMatrix, FeatureSetSpec, read_features, write_features
from .ensemble import (
    Ensemble,
    ModelFormatError,
    TrainConfig,
    load_model,
    predict,
    predict_proba,
    save_model,
    train_gbt,
    train_rf,
)
from .evaluate import (
    ConfusionMatrix,
    SplitPlane,
    ablation_run,
    balanced_sample,
    evaluate,
    find_split_plane,
)
from .pipeline import (PipelineConfig, TimingReport, config_from_model,
                       extract_features, run_predict, run_train)

__version__ = "0.1.0"

__all__ = [
    "CLASSES",
    "PALETTE",
    "UNLABELED",
    "ClassSet",
    "CloudFormatError",
    "ConfusionMatrix",
    "EigenDecomp3",
    "Ensemble",
    "FeatureMatrix",
    "FeatureSetSpec",
    "GEOM_FEATURE_NAMES",
    "GeomFeatures",
    "ModelFormatError",
    "PipelineConfig",
    "Point",
    "PointCloud",
    "PyramidLevel",
    "ScalePyramid",
    "SpatialIndex",
    "SplitPlane",
    "TimingReport",
    "TrainConfig",
    "ablation_run",
    "balanced_sample",
    "base_scale",
    "build_index",
    "build_pyramid",
    "color_feature_block",
    "covariance_tensor",
    "eig3",
    "evaluate",
    "extract_features",
    "features_multiscale",
    "features_single_scale",
    "find_split_plane",
    "knn",
    "knn_batch",
    "load_model",
    "neighborhood_color_features",
    "point_color_features",
    "predict",
    "predict_proba",
    "radius_search",
    "read_cloud",
    "read_features",
    "rgb_to_hsv",
    "config_from_model",
    "run_predict",
    "run_train",
    "save_model",
    "synth_scene",
    "train_gbt",
    "train_rf",
    "voxel_downsample",
    "write_cloud",
    "write_features",
]
