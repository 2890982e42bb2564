from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

ID = "ID"
FD = "FD"


@dataclass(frozen=True)
class DynDerivatives:
    """∂out/∂q and ∂out/∂q̇ of inverse (``ID``) or forward (``FD``) dynamics."""

    function: str
    d_dq: np.ndarray
    d_dqd: np.ndarray

    def __post_init__(self):
        if self.function not in (ID, FD):
            raise ValueError(f"derivatives are tagged ID or FD, got {self.function!r}")
        if self.d_dq.shape != self.d_dqd.shape or self.d_dq.ndim != 2:
            raise ValueError("derivative blocks must be square and of equal shape")

    @property
    def n(self) -> int:
        return self.d_dq.shape[0]

    def stacked(self) -> np.ndarray:
        """[∂/∂q, ∂/∂q̇] as one N x 2N block."""
        return np.hstack([self.d_dq, self.d_dqd])


@dataclass
class MinvWorkspace:
    """Per-joint scalars produced by one M⁻¹ evaluation.

    For the division-deferred variant ``alpha`` holds the transfer coefficient
    each joint received from its subtree and ``holding`` the factor it passed to
    its parent; both are 1 for the original recursion.
    """

    variant: str
    D: np.ndarray
    Dinv: np.ndarray
    alpha: np.ndarray
    holding: np.ndarray
    backward_divisions: int = 0
    reciprocals: int = 0

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "D": self.D.tolist(),
            "Dinv": self.Dinv.tolist(),
            "alpha": self.alpha.tolist(),
            "holding": self.holding.tolist(),
            "backward_divisions": self.backward_divisions,
            "reciprocals": self.reciprocals,
        }


@dataclass(frozen=True)
class CompensationParams:
    """Offset added to quantized M⁻¹, plus the fit that produced it."""

    offset: np.ndarray
    samples: int = 0
    fmt: Optional[str] = None
    residual_before: float = 0.0
    residual_after: float = 0.0
    offdiag_before: float = 0.0
    offdiag_after: float = 0.0
    diagonal_only: bool = True

    def __post_init__(self):
        offset = np.asarray(self.offset, dtype=float)
        if offset.ndim != 2 or offset.shape[0] != offset.shape[1]:
            raise ValueError("compensation offset must be a square matrix")
        if not np.allclose(offset, offset.T, atol=1e-12):
            raise ValueError("compensation offset must be symmetric")
        object.__setattr__(self, "offset", offset)

    @property
    def n(self) -> int:
        return self.offset.shape[0]

    @classmethod
    def zero(cls, n: int) -> "CompensationParams":
        return cls(np.zeros((n, n)))

    def to_dict(self) -> dict:
        return {
            "format": self.fmt,
            "diagonal_only": self.diagonal_only,
            "samples": self.samples,
            "offset": self.offset.tolist(),
            "residuals": {
                "frobenius_before": self.residual_before,
                "frobenius_after": self.residual_after,
                "offdiag_mae_before": self.offdiag_before,
                "offdiag_mae_after": self.offdiag_after,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CompensationParams":
        residuals = data.get("residuals", {})
        return cls(
            offset=np.array(data["offset"], dtype=float),
            samples=int(data.get("samples", 0)),
            fmt=data.get("format"),
            residual_before=residuals.get("frobenius_before", 0.0),
            residual_after=residuals.get("frobenius_after", 0.0),
            offdiag_before=residuals.get("offdiag_mae_before", 0.0),
            offdiag_after=residuals.get("offdiag_mae_after", 0.0),
            diagonal_only=bool(data.get("diagonal_only", True)),
        )


@dataclass
class KernelTrace:
    """Kernel intermediates kept for callers that need more than the output."""

    v: List[np.ndarray] = field(default_factory=list)
    a: List[np.ndarray] = field(default_factory=list)
    f: List[np.ndarray] = field(default_factory=list)
