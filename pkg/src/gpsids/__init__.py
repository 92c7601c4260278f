"""Closed-loop simulator of a GPS-guided ground vehicle and a GPS-spoofing detector suite."""

__version__ = "0.1.0"

from .attack import BiasAngle, FixedTarget, GaussianOffset, Phase, SpoofConfig  # noqa: E402
from .control import ControllerConfig, PidGains  # noqa: E402
from .dataset import generate, read_csv, write_csv  # noqa: E402
from .detection import Detector, ModelSpec, cross_validate, threshold_sweep, train  # noqa: E402
from .dynamics import SignConvention, VehicleParams, VehicleState, state_matrices  # noqa: E402
from .estimation import EkfConfig  # noqa: E402
from .navigation import GeoPoint, Mission, circular_mission, straight_mission, target_yaw_from_gps  # noqa: E402
from .simulation import FEATURES, FeatureRow, Scenario, SimLog, run  # noqa: E402

__all__ = [
    "BiasAngle", "ControllerConfig", "Detector", "EkfConfig", "FEATURES", "FeatureRow", "FixedTarget",
    "GaussianOffset", "GeoPoint", "Mission", "ModelSpec", "PidGains", "Phase", "Scenario", "SignConvention",
    "SimLog", "SpoofConfig", "VehicleParams", "VehicleState", "circular_mission", "cross_validate",
    "generate", "read_csv", "run", "state_matrices", "straight_mission", "target_yaw_from_gps",
    "threshold_sweep", "train", "write_csv",
]
