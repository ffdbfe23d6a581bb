"""Lane geometry reconstruction from vehicle trajectories, geometric scoring
losses, and federated meta-learning of scene-adaptive detection parameters."""

from .geometry import (
    DegenerateProjection,
    Homography,
    Polyline,
    TangentPlaneAnchor,
    apply_homography,
    apply_homography_many,
    discrete_frechet,
    gps_to_plane,
    plane_to_gps,
    resample_arclength,
    unit_normals,
)
from .lanes import (
    PARAM_RANGES,
    DetectionParams,
    InsufficientData,
    Lane,
    LaneModel,
    Track,
    detect_lanes,
    estimate_lane_count,
    group_by_direction,
    load_tracks_jsonl,
    save_tracks_jsonl,
    to_geojson,
)
from .losses import (
    LossBreakdown,
    loss_center,
    loss_consistency,
    loss_geometry,
    loss_lane_num,
    loss_param,
    loss_total,
    match_lanes,
)
from .metanet import (
    MetaNet,
    SceneFeatures,
    alignment_loss,
    forward,
    grad_param_loss,
    init_net,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .federated import (
    ClientTask,
    CommLedger,
    FedTrainConfig,
    bps,
    run_round,
    train_fedmeta,
)
from .scenario import (
    SceneSpec,
    benchmark_scenes,
    build_client,
    extract_features,
    generate_tracks,
    oracle_params,
    reference_model,
)

__version__ = "0.1.0"
