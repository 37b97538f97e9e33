from mmbt.labsim.ft import WindowError, preprocess_ft, synth_ft_trace
from mmbt.labsim.sensors import NoSurrogate, SensorSurrogate, sense
from mmbt.labsim.sim import (
    DETERMINISTIC_CONDITIONS,
    FUSED_CONDITIONS,
    GUARD_CONDITIONS,
    TASKS,
    LabTrial,
    TaskSetup,
    TrialResult,
    VoteLog,
    trial_streams,
)
from mmbt.labsim.world import (
    CappingParams,
    CappingWorld,
    FaultInjection,
    InsertionParams,
    InsertionWorld,
    InvariantViolation,
    PhysicalOrderError,
)

__all__ = [
    "CappingParams",
    "CappingWorld",
    "DETERMINISTIC_CONDITIONS",
    "FUSED_CONDITIONS",
    "FaultInjection",
    "GUARD_CONDITIONS",
    "InsertionParams",
    "InsertionWorld",
    "InvariantViolation",
    "LabTrial",
    "NoSurrogate",
    "PhysicalOrderError",
    "SensorSurrogate",
    "TASKS",
    "TaskSetup",
    "TrialResult",
    "VoteLog",
    "WindowError",
    "preprocess_ft",
    "sense",
    "synth_ft_trace",
    "trial_streams",
]
