from .config import ConfigError, RunConfig, TransferConfig, load_config, parse_config
from .orchestrator import (
    FinalEval,
    Learner,
    PhaseRecord,
    RobotCache,
    TrainingError,
    TransferReport,
    adaptive_extend,
    build_pair,
    evaluate,
    fetch_robot,
    make_family,
    pretrain,
    run_baseline,
    run_phase,
    run_revolver,
    sample_beta,
    shape_reward,
)
