"""Uncertainty-driven PnP object localization toolkit.

Estimates yaw-plus-translation object poses from dense, noise-weighted
2D-3D correspondences; propagates the per-point uncertainty to a pose
covariance; calibrates that covariance against observed errors; and
turns pose distributions into localization confidence scores. A
synthetic-scene generator with brute-force oracles provides ground truth
for verification, and a CLI exposes the batch pipeline.
"""

from .calibration import (
    CalibrationFit,
    CalibrationPair,
    CalibrationVector,
    ReliabilityRecord,
    ReliabilityReport,
    calibrated_cov,
    fit_calibration,
    gaussian_entropy,
    reliability,
)
from .errors import (
    AllStartsDiverged,
    DegenerateData,
    EmptyBatch,
    EmptyMask,
    FrustumExhausted,
    InsufficientPairs,
    NotConverged,
    PointBehindCamera,
    ProbPnpError,
    SchemaError,
    SingularCovariance,
    TooFewPoints,
    TooFewSamples,
)
from .geometry import (
    SIGMA_MIN,
    Z_MIN,
    CameraIntrinsics,
    Correspondence,
    CorrespondenceSet,
    Dimensions,
    Pose,
    camera_frame_points,
    noc_to_oc,
    project,
    project_points,
    projection_derivatives,
    residual,
    residual_jacobian,
    rotation_from_yaw,
    wrap_angle,
)
from .losses import (
    LossEval,
    WeightNormalizer,
    calib_loss,
    e2e_losses,
    gaussian_kl,
    laplacian_kl,
    masked_noc_loss,
    mixed_kl,
    normalizer_update,
    robust_kl,
    score_bce,
    smooth_l1,
    target_score,
)
from .pnp import (
    PnpGradients,
    PoseDistribution,
    SolverConfig,
    backward,
    covariance,
    objective,
    objective_batch,
    refine,
    solve,
)
from .scoring import Box3D, Score, compose_score, iou3d, mc_score
from .synth import (
    NoiseModel,
    Scene,
    SceneObject,
    SearchBox,
    generate,
    oracle_grid_pose,
    oracle_voxel_iou,
)
from .uncertainty import (
    CombinedUncertainty,
    EnsemblePrediction,
    combine,
    ensemble_stats,
    pixel_scale,
    project_variance,
)

__version__ = "0.1.0"

__all__ = [
    "AllStartsDiverged",
    "Box3D",
    "CalibrationFit",
    "CalibrationPair",
    "CalibrationVector",
    "CameraIntrinsics",
    "CombinedUncertainty",
    "Correspondence",
    "CorrespondenceSet",
    "DegenerateData",
    "Dimensions",
    "EmptyBatch",
    "EmptyMask",
    "EnsemblePrediction",
    "FrustumExhausted",
    "InsufficientPairs",
    "LossEval",
    "NoiseModel",
    "NotConverged",
    "PnpGradients",
    "PointBehindCamera",
    "Pose",
    "PoseDistribution",
    "ProbPnpError",
    "ReliabilityRecord",
    "ReliabilityReport",
    "SIGMA_MIN",
    "Scene",
    "SceneObject",
    "SchemaError",
    "Score",
    "SearchBox",
    "SingularCovariance",
    "SolverConfig",
    "TooFewPoints",
    "TooFewSamples",
    "WeightNormalizer",
    "Z_MIN",
    "backward",
    "calib_loss",
    "calibrated_cov",
    "camera_frame_points",
    "combine",
    "compose_score",
    "covariance",
    "e2e_losses",
    "ensemble_stats",
    "fit_calibration",
    "gaussian_entropy",
    "gaussian_kl",
    "generate",
    "iou3d",
    "laplacian_kl",
    "masked_noc_loss",
    "mc_score",
    "mixed_kl",
    "noc_to_oc",
    "normalizer_update",
    "objective",
    "objective_batch",
    "oracle_grid_pose",
    "oracle_voxel_iou",
    "pixel_scale",
    "project",
    "project_points",
    "project_variance",
    "projection_derivatives",
    "refine",
    "reliability",
    "residual",
    "residual_jacobian",
    "robust_kl",
    "rotation_from_yaw",
    "score_bce",
    "smooth_l1",
    "solve",
    "target_score",
    "wrap_angle",
]
