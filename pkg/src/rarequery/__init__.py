"""rarequery: find rare positives in multimodal tilesets with few labels.

Pipeline: crop orthomosaics into multimodal tiles, rank tiles by an
informative metric, query a labeler through a ranked stochastic
active-learning loop, benchmark against passive training and baseline
query strategies, and map clustered detections.
"""

from .classifier import TileNetClassifier, bce_loss, extract_features
from .engine import (
    ActiveSession,
    ClassScore,
    EnsembleWeights,
    Strategy,
    ensemble_score,
    ground_truth_oracle,
    render_run_log,
    sample_prediction,
    select_training_set,
    update_weights,
)
from .experiments import (
    ConfusionMetrics,
    SplitSpec,
    confusion_metrics,
    labeling_time,
    make_split,
    run_active_benchmark,
    run_passive_trial,
)
from .mapping import DetectionMap, KMeansLloyd, detections_to_points, export_map, kmeans
from .ranking import RankingSpec, bayes_positive_curve, compute_metric, rank_tiles
from .tilestore import (
    CropGeometry,
    MiddenRegistry,
    Orthomosaic,
    Tileset,
    build_tileset,
    crop_orthomosaics,
    downshift_thermal,
    filter_zero_tiles,
    fuse_modalities,
    generate_synthetic_site,
    load_tileset,
    save_tileset,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveSession",
    "ClassScore",
    "ConfusionMetrics",
    "CropGeometry",
    "DetectionMap",
    "EnsembleWeights",
    "KMeansLloyd",
    "MiddenRegistry",
    "Orthomosaic",
    "RankingSpec",
    "SplitSpec",
    "Strategy",
    "TileNetClassifier",
    "Tileset",
    "bayes_positive_curve",
    "bce_loss",
    "build_tileset",
    "compute_metric",
    "confusion_metrics",
    "crop_orthomosaics",
    "detections_to_points",
    "downshift_thermal",
    "ensemble_score",
    "export_map",
    "extract_features",
    "filter_zero_tiles",
    "fuse_modalities",
    "generate_synthetic_site",
    "ground_truth_oracle",
    "kmeans",
    "labeling_time",
    "load_tileset",
    "make_split",
    "rank_tiles",
    "render_run_log",
    "run_active_benchmark",
    "run_passive_trial",
    "sample_prediction",
    "save_tileset",
    "select_training_set",
    "update_weights",
]
