"""Realtime multi-camera, multi-target 3D tracking with a deterministic
simulation harness.

Camera-node processes extract 2D blob features from grayscale frames and
ship them over a binary wire protocol to a hub, which assembles per-frame
observations, associates them to per-target extended Kalman filters and
manages track birth and death. The simulation harness synthesizes camera
rigs, flight trajectories and feature streams so the whole pipeline can be
verified at desk scale.
"""

from .association import (
    AssignmentMatrix,
    GateConfig,
    assign,
    cull_targets,
    feature_likelihood,
    mahalanobis_closest_point,
    resolve_shared,
    spawn_targets,
)
from .features import (
    BackgroundModel,
    Feature,
    Frame,
    extract_features,
    update_background,
)
from .geometry import (
    CameraModel,
    Plane3,
    Ray3,
    apply_distortion,
    body_axis,
    correct_distortion,
    dehomogenize,
    dlt_calibrate,
    load_calibration,
    pixel_ray,
    project,
    save_calibration,
    triangulate,
)
from .hub import TrackerWorld, process_frame, run
from .metrics import evaluate
from .netproto import (
    AssembledFrame,
    FrameAssembler,
    FramePacket,
    assemble,
    decode,
    encode,
)
from .simharness import (
    PRESETS,
    RigSpec,
    TruthTrajectory,
    generate_rig,
    simulate_truth,
    synthesize_observations,
)
from .tracker import (
    ObservationModel,
    ProcessModel,
    TargetState,
    extrapolate,
    observation_function,
    observation_jacobian,
    predict,
    update,
)

__version__ = "0.1.0"
