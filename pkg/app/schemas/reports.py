from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field

PASSED = "passed"
PRUNED = "pruned"
REJECTED = "rejected"
UNTESTED = "untested"


class RangeReport(BaseModel):
    n_int: int = Field(..., description="Integer bits (sign included) required by the observed ranges")
    peak: float = Field(..., description="Largest |value| over all tracked variables")
    peaks: Dict[str, float] = Field(default_factory=dict, description="Peak |value| per variable")
    samples: int = 0
    seed: int = 0


class Violation(BaseModel):
    metric: str
    value: float
    tolerance: float
    rollout: int = Field(..., description="Position of the rollout in the evaluation order")
    fraction: float = Field(..., description="Share of the evaluation set run when it was found")
    error: Optional[str] = Field(None, description="Domain error raised by the rollout, if any")


class CandidateResult(BaseModel):
    format: str
    n_int: int
    n_frac: int
    width: int
    status: Literal["passed", "pruned", "rejected", "untested"] = UNTESTED
    rollouts: int = 0
    metrics: Dict[str, float] = Field(default_factory=dict, description="Worst value per metric")
    violation: Optional[Violation] = None


class AuditEntry(BaseModel):
    format: str
    rollout: int
    metric: str
    value: float
    tolerance: float
    confirmed: bool


class QuantReport(BaseModel):
    """Outcome of one format search"""

    status: Literal["pass", "fail", "budget_exhausted"]
    robot: str
    controller: str
    mode: str
    chosen_format: Optional[str] = Field(None, description="Winning format, or best effort on failure")
    range: RangeReport
    tolerances: Dict[str, float]
    candidates: List[CandidateResult] = Field(default_factory=list)
    compensation: Optional[dict] = None
    compensation_metrics: Dict[str, float] = Field(default_factory=dict)
    compensation_validated: Optional[bool] = None
    audits: List[AuditEntry] = Field(default_factory=list)
    rollouts_used: int = 0
    rollout_budget: Optional[int] = None
    seed: int = 0
    # logged only; report.json is byte-identical across identical runs
    wall_time_s: float = Field(0.0, exclude=True)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def pruning_log(self) -> List[dict]:
        """One row per rejected candidate: which metric failed and when."""
        rows = []
        for c in self.candidates:
            if c.violation is None:
                continue
            rows.append(
                {
                    "format": c.format,
                    "status": c.status,
                    "metric": c.violation.metric,
                    "value": c.violation.value,
                    "tolerance": c.violation.tolerance,
                    "rollout": c.violation.rollout,
                    "fraction": c.violation.fraction,
                    "error": c.violation.error or "",
                }
            )
        return rows


class CheckResult(BaseModel):
    name: str
    passed: bool
    residual: float = Field(..., description="Largest residual observed by the check")
    threshold: float
    detail: Optional[str] = None


class VerifyReport(BaseModel):
    robot: str
    samples: int
    seed: int
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)
