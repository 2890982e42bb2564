from app.schemas.reports import (
    AuditEntry,
    CandidateResult,
    CheckResult,
    QuantReport,
    RangeReport,
    VerifyReport,
    Violation,
)
from app.schemas.run_config import (
    ControllerConfig,
    HwConfig,
    LqrConfig,
    MpcConfig,
    PidConfig,
    RunConfig,
    SearchConstraints,
    SimConfig,
)

__all__ = [
    "AuditEntry",
    "CandidateResult",
    "CheckResult",
    "ControllerConfig",
    "HwConfig",
    "LqrConfig",
    "MpcConfig",
    "PidConfig",
    "QuantReport",
    "RangeReport",
    "RunConfig",
    "SearchConstraints",
    "SimConfig",
    "VerifyReport",
    "Violation",
]
