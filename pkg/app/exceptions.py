from typing import Optional


class RbdLabError(Exception):
    """Base class for all errors raised by the lab"""


# Input / configuration errors (CLI exit code 1)


class ConfigError(RbdLabError, ValueError):
    """Invalid run configuration; ``field`` names the offending entry"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class UrdfError(RbdLabError, ValueError):
    """Malformed or unsupported robot description"""


class DimensionError(RbdLabError, ValueError):
    """Array shapes do not match the robot model"""


class FormatMismatchError(RbdLabError, ValueError):
    """Fixed-point operands carry different formats"""


class AccumulatorWidthError(RbdLabError, ValueError):
    """Dot-product accumulator too narrow for the requested chain"""


class CostTableError(RbdLabError, ValueError):
    """Operand width missing from the DSP cost table"""


class InsufficientSamplesError(RbdLabError, ValueError):
    """Too few samples requested for a statistical fit"""


# Domain failures (CLI exit code 2)


class InertiaError(RbdLabError):
    """A joint's articulated inertia D_i is not positive"""

    def __init__(self, joint: int, value: float):
        self.joint = joint
        self.value = value
        super().__init__(f"non-positive articulated inertia D[{joint}] = {value!r}")


class RiccatiConvergenceError(RbdLabError):
    """The discrete Riccati recursion did not reach its tolerance"""


class RolloutDivergenceError(RbdLabError):
    """A simulated state left the configured bound"""

    def __init__(self, step: int, norm: float, run: str = ""):
        self.step = step
        self.norm = norm
        self.run = run
        where = f" in run {run}" if run else ""
        super().__init__(f"state norm {norm:.3e} exceeded bound at step {step}{where}")


class RangeAnalysisError(RbdLabError):
    """A tracked intermediate became non-finite"""

    def __init__(self, variable: str):
        self.variable = variable
        super().__init__(f"unbounded intermediate: {variable}")


class EmptyCandidateSetError(RbdLabError):
    """No fixed-point format satisfies the search constraints"""


class InfeasibleBudgetError(RbdLabError):
    """The DSP budget cannot host one DSP per pipeline unit"""

    def __init__(self, budget: int, minimum: int):
        self.budget = budget
        self.minimum = minimum
        super().__init__(
            f"DSP budget {budget} is infeasible; minimum feasible budget is {minimum}"
        )
