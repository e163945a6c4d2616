"""Superpoint-guided semi-supervised point-cloud segmentation at desk scale."""

from .cloud import PointCloud, SpatialIndex, SurfaceEstimate, build_index, estimate_surface
from .errors import ParseError, SceneSpecError, TrainingDiverged, ValidationError
from .labels import EdgeLabels, LabelSet, compute_edge_labels, optimize_pseudo_labels
from .losses import (
    LossReport,
    LossTerm,
    combine_losses,
    consistency_loss,
    cross_entropy_loss,
    edge_loss,
    weighted_cross_entropy_loss,
)
from .network import (
    ModelConfig,
    Params,
    aggregate_superpoint_features,
    backward,
    classify,
    edge_head,
    extract_features,
    forward,
    init_params,
    load_params,
    save_params,
)
from .optim import Adam
from .scenes import (
    Primitive,
    Scene,
    SceneSet,
    SceneSpec,
    beam_demo_spec,
    board_demo_spec,
    default_room_spec,
    generate_synthetic_scene,
    make_scene_set,
)
from .superpoints import (
    GrowingConfig,
    SuperpointPartition,
    from_membership,
    grow_color,
    grow_geometric,
    merge_partitions,
    restrict_partition,
    sample_group_indices,
)
from .trainer import (
    MetricsReport,
    SceneCache,
    TrainConfig,
    TrainResult,
    ablation_suite,
    evaluate,
    metrics_from_confusion,
    precompute_scene,
    precompute_scenes,
    predict_pseudo_labels,
    train,
)

__version__ = "0.1.0"
