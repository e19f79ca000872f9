"""Rigid-body localization from incomplete TOF ranges via bounded EDM completion."""

from .analysis import (
    CrlbResult, FisherInformation, SingularInformation, check_availability, crlb, epoch_error,
    fisher_information, rmse,
)
from .baselines import DacEstimate, dac_estimate, pipeline_with_shortest_path_bounds
from .edm import (
    BoundedEdm, CompletedEdm, CompletionConfig, DisconnectedGraph, MeasuredEdm, build_measured_edm,
    complete_edm, edm_frobenius_error, estimate_bounds, is_edm, shortest_path_bounds,
)
from .geometry import (
    AnchorSet, Pose, TagLayout, TofMeasurementSet, angles_from_rotation, inter_tag_distances,
    rotation_from_angles, transform_tag,
)
from .pose_estimation import (
    DegenerateLayout, PipelineConfig, PipelineStepError, PoseEstimate, PoseRefineConfig, Unavailable,
    closed_form_pose, erbl_edmc_estimate, refine_pose,
)
from .scene import Box, Scene, Trajectory, compute_visibility
from .scenes import build_paper_scenes, builtin_scene
from .simulation import EpochResult, NoiseModel, run_monte_carlo, run_trajectory, simulate_epoch
from .tag_localization import (
    DegenerateAnchorGeometry, SingularNormalMatrix, TagLocalizationConfig, TagPositionEstimate,
    coarse_tag_positions, refine_tag_positions,
)

__version__ = "0.1.0"
