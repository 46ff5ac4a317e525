from .interp import (
    ParamVector,
    RobotModel,
    flatten_params,
    interpolate,
    linear,
    materialize,
    pad_action,
    pad_state,
    unpad_action,
    unpad_state,
)
from .matching import MorphologyCorrespondence, match_morphology
from .tree import (
    Body,
    DescriptionError,
    Joint,
    KinematicTree,
    asset_names,
    format_robot_description,
    load_robot,
    parse_robot_description,
)
