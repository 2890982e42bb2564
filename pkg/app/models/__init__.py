from app.models.dynamics import CompensationParams, DynDerivatives, MinvWorkspace
from app.models.fixed_point import FxpFormat, FxpStats, FxpValue
from app.models.hardware import ControlRateEstimate, DspCostTable, PipelinePlan, UnitProfile
from app.models.robot import Frame, Joint, JointState, RobotModel
from app.models.simulation import ControlOutput, ErrorStats, TrajectoryPair
from app.models.spatial import SpatialInertia, SpatialTransform

# Export these models so they can be imported from app.models
__all__ = [
    "CompensationParams",
    "ControlOutput",
    "ControlRateEstimate",
    "DspCostTable",
    "DynDerivatives",
    "ErrorStats",
    "Frame",
    "FxpFormat",
    "FxpStats",
    "FxpValue",
    "Joint",
    "JointState",
    "MinvWorkspace",
    "PipelinePlan",
    "RobotModel",
    "SpatialInertia",
    "SpatialTransform",
    "TrajectoryPair",
    "UnitProfile",
]
