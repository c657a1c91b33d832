"""panoworld: explorable panoramic worlds with world-model rollouts.

The package builds procedural 3D scenes, renders them as equirectangular
panoramas, steps an agent through them with a pluggable world model, and
scores the results (loop consistency, imagination-driven decision
accuracy).  The WebSocket session server lives in ``panoworld.server``
(``create_app``) and the command-line interface in ``panoworld.cli``;
neither is imported here so ``import panoworld`` stays light.
"""

from .errors import (ConfigError, ConsistencyError, CoordinateRangeError,
                     DecodeError, DegenerateInputError, DetectionError,
                     DimensionError, GenerationError, ParameterError,
                     RolloutError, SceneError)
from .exploration import (ActionFeed, GoalSpec, chroma_mask, detect_goal,
                          heuristic_pilot, run_session)
from .geometry import (Dir3, PixelCoord, RotationSpec, SphericalCoord,
                       angular_distance, check_pano_dims, normalize_longitude,
                       pixel_center_grid, pixel_to_sphere,
                       pixel_to_sphere_arrays, rotate_pixel, rotate_spherical,
                       sphere_to_pixel, sphere_to_pixel_arrays, wrap_latitude,
                       yaw_column_shift)
from .image import (CubeMapImage, PanoramaImage, PerspectiveImage,
                    cubemap_to_equirect, equirect_to_cubemap,
                    extract_perspective, load_cubemap, load_panorama,
                    load_raster, rotate_panorama_image, save_cubemap,
                    save_raster, seam_delta, turn_view)
from .metrics import (evaluate_ielc, evaluate_session, mse, psnr, ssim,
                      write_ielc_outputs)
from .policy import (decide_base, decide_imagine, decide_multi_agent,
                     decide_random, evaluate_policies, make_eqa_scenario,
                     make_multi_agent_scenario)
from .transition import (Action, DegradedModel, ExplorationSession,
                         GroundTruthModel, SessionStep, TransitionConfig,
                         WorldModel, apply_action, degrade_frame,
                         initialize_world, invert_actions, load_session,
                         rollout, sample_action)
from .world import (PALETTE, AgentPose, Primitive, SceneSpec,
                    bev_pixel_of_point, capture_trajectory_dataset,
                    clearance_along_path, footprint_distance, is_visible,
                    path_blocked, render_bev, render_panorama,
                    scene_from_spec, validate_dataset)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "ConfigError", "ConsistencyError", "CoordinateRangeError", "DecodeError",
    "DegenerateInputError", "DetectionError", "DimensionError",
    "GenerationError", "ParameterError", "RolloutError", "SceneError",
    # geometry
    "Dir3", "PixelCoord", "RotationSpec", "SphericalCoord",
    "angular_distance", "check_pano_dims", "normalize_longitude",
    "pixel_center_grid", "pixel_to_sphere", "pixel_to_sphere_arrays",
    "rotate_pixel", "rotate_spherical", "sphere_to_pixel",
    "sphere_to_pixel_arrays", "wrap_latitude", "yaw_column_shift",
    # images
    "CubeMapImage", "PanoramaImage", "PerspectiveImage",
    "cubemap_to_equirect", "equirect_to_cubemap", "extract_perspective",
    "load_cubemap", "load_panorama", "load_raster", "rotate_panorama_image",
    "save_cubemap", "save_raster", "seam_delta", "turn_view",
    # world
    "PALETTE", "AgentPose", "Primitive", "SceneSpec", "bev_pixel_of_point",
    "capture_trajectory_dataset", "clearance_along_path",
    "footprint_distance", "is_visible", "path_blocked", "render_bev",
    "render_panorama", "scene_from_spec", "validate_dataset",
    # transitions
    "Action", "DegradedModel", "ExplorationSession", "GroundTruthModel",
    "SessionStep", "TransitionConfig", "WorldModel", "apply_action",
    "degrade_frame", "initialize_world", "invert_actions", "load_session",
    "rollout", "sample_action",
    # exploration
    "ActionFeed", "GoalSpec", "chroma_mask", "detect_goal",
    "heuristic_pilot", "run_session",
    # metrics
    "evaluate_ielc", "evaluate_session", "mse", "psnr", "ssim",
    "write_ielc_outputs",
    # policies
    "decide_base", "decide_imagine", "decide_multi_agent", "decide_random",
    "evaluate_policies", "make_eqa_scenario", "make_multi_agent_scenario",
]
