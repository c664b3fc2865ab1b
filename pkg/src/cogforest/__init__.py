"""cogforest: coarse-grained leading forests, attribute-balanced sampling,
multi-center losses, noise selection, and a toy multi-environment training loop."""

from .data import (
    METRICS,
    BalanceFactors,
    DistanceMatrix,
    FeatureMatrix,
    ForestParams,
    NoiseParams,
    base_distance,
    format_float,
    load_features,
    load_features_cgf,
    load_features_csv,
    pairwise_distances,
    resolve_params,
    save_features_cgf,
    save_features_csv,
)
from .errors import InputError
from .forest import (
    CoarseNode,
    Densities,
    ForestBuild,
    LeadingForest,
    build_clf,
    build_forests,
    compute_density,
    forest_from_doc,
    forest_stats,
    forest_to_doc,
    load_forest,
    save_forest,
)
from .losses import (
    CenterSet,
    LossBreakdown,
    assign_center,
    centers_to_doc,
    extract_centers,
    multi_center_loss,
    multi_center_triplet_loss,
    save_centers,
    softmax_cross_entropy,
)
from .noise import NoiseReport, flagged_ids, noise_to_csv, select_noise, select_noise_all
from .sampling import (
    AttributeWeightDetail,
    Environment,
    PathSet,
    SampleWeights,
    attribute_weight_detail,
    attribute_weights,
    build_environment,
    draw_batch,
    environment_from_doc,
    environment_to_doc,
    generate_paths,
    load_environment,
    resample_probs,
    save_environment,
    weights_to_csv,
    weights_to_doc,
)
from .synthetic import SyntheticData, make_two_attribute_gaussians, save_synthetic
from .training import (
    LinearExtractor,
    SoftmaxClassifier,
    TrainConfig,
    TrainHistory,
    balanced_accuracy,
    make_toy_classifier,
    make_toy_extractor,
    model_to_doc,
    run_training,
    run_training_with_noise_filter,
    save_model,
)

__version__ = "0.1.0"
