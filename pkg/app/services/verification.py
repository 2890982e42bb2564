"""Property checks of the double-precision kernels on one robot."""

from typing import Callable, List

import numpy as np

from app.exceptions import RbdLabError
from app.models.robot import RobotModel
from app.schemas.reports import CheckResult, VerifyReport
from app.services.arithmetic import OpCounter, RealArithmetic
from app.services.icms import sample_states
from app.services.rbd_kernels import (
    BACKWARD,
    DEFERRED,
    DIVIDE,
    MINV,
    ORIGINAL,
    RbdBinding,
)
from app.utils.logging import get_logger

logger = get_logger(__name__)

FD_STEP = 1e-6


def _scaled(diff: float, reference: float) -> float:
    return diff / max(1.0, reference)


def central_difference(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Jacobian of ``fn`` at ``x`` by central differences, one column per coordinate."""
    cols = []
    for k in range(len(x)):
        step = np.zeros_like(x)
        step[k] = h
        cols.append((fn(x + step) - fn(x - step)) / (2.0 * h))
    return np.column_stack(cols)


class KernelVerifier:
    """Runs each check over the same sampled states."""

    def __init__(self, model: RobotModel, samples: int = 100, seed: int = 0):
        self.model = model
        self.samples = samples
        self.seed = seed
        self.states = sample_states(model, samples, seed)
        self.original = RbdBinding(model, variant=ORIGINAL)
        self.deferred = RbdBinding(model, variant=DEFERRED)
        rng = np.random.default_rng(seed)
        self.taus = [rng.normal(size=model.n) for _ in self.states]

    def minv_equivalence(self) -> float:
        """Largest absolute elementwise gap between the two M⁻¹ recursions."""
        worst = 0.0
        for s in self.states:
            a, _ = self.original.minv(s.q)
            b, _ = self.deferred.minv(s.q)
            worst = max(worst, float(np.max(np.abs(a - b))))
        return worst

    def minv_identity(self) -> float:
        eye = np.eye(self.model.n)
        worst = 0.0
        for s in self.states:
            M = self.original.mass_matrix(s.q)
            Minv, _ = self.original.minv(s.q)
            worst = max(worst, np.max(np.abs(Minv @ M - eye)))
        return worst

    def mass_symmetry(self) -> float:
        worst = 0.0
        for s in self.states:
            M = self.original.mass_matrix(s.q)
            worst = max(worst, _scaled(np.max(np.abs(M - M.T)), np.max(np.abs(M))))
        return worst

    def id_fd_roundtrip(self) -> float:
        worst = 0.0
        for s, tau in zip(self.states, self.taus):
            qdd = self.deferred.forward_dynamics(s.q, s.qd, tau)
            back = self.deferred.inverse_dynamics(s.q, s.qd, qdd)
            worst = max(worst, _scaled(np.max(np.abs(back - tau)), np.max(np.abs(tau))))
        return worst

    def id_gradients(self) -> float:
        worst = 0.0
        b = self.deferred
        for s in self.states:
            derivs = b.id_derivatives(s.q, s.qd, s.qdd)
            fd_q = central_difference(lambda q: b.inverse_dynamics(q, s.qd, s.qdd), s.q)
            fd_v = central_difference(lambda v: b.inverse_dynamics(s.q, v, s.qdd), s.qd)
            for analytic, numeric in ((derivs.d_dq, fd_q), (derivs.d_dqd, fd_v)):
                worst = max(
                    worst,
                    _scaled(np.max(np.abs(analytic - numeric)), np.max(np.abs(numeric))),
                )
        return worst

    def fd_gradients(self) -> float:
        worst = 0.0
        b = self.deferred
        for s, tau in zip(self.states, self.taus):
            derivs = b.fd_derivatives(s.q, s.qd, tau)
            fd_q = central_difference(lambda q: b.forward_dynamics(q, s.qd, tau), s.q)
            fd_v = central_difference(lambda v: b.forward_dynamics(s.q, v, tau), s.qd)
            for analytic, numeric in ((derivs.d_dq, fd_q), (derivs.d_dqd, fd_v)):
                worst = max(
                    worst,
                    _scaled(np.max(np.abs(analytic - numeric)), np.max(np.abs(numeric))),
                )
        return worst

    def deferred_divisions(self) -> float:
        """Backward-pass divisions plus |reciprocals − N_B| of the deferred M⁻¹."""
        counter = OpCounter()
        binding = RbdBinding(self.model, RealArithmetic(counter), variant=DEFERRED)
        binding.minv(self.states[0].q)
        backward = counter.total("div", MINV, BACKWARD)
        reciprocals = counter.total("div", MINV, DIVIDE)
        return float(backward + abs(reciprocals - self.model.n))

    CHECKS = (
        ("minv_deferred_vs_original", "minv_equivalence", 1e-10),
        ("minv_times_mass_is_identity", "minv_identity", 1e-7),
        ("mass_matrix_symmetric", "mass_symmetry", 1e-9),
        ("id_fd_roundtrip", "id_fd_roundtrip", 1e-7),
        ("id_gradients_vs_finite_differences", "id_gradients", 1e-5),
        ("fd_gradients_vs_finite_differences", "fd_gradients", 1e-5),
        ("deferred_minv_division_count", "deferred_divisions", 0.0),
    )

    def run(self) -> VerifyReport:
        report = VerifyReport(robot=self.model.name, samples=self.samples, seed=self.seed)
        for name, method, threshold in self.CHECKS:
            try:
                residual = float(getattr(self, method)())
                result = CheckResult(
                    name=name, passed=residual <= threshold, residual=residual, threshold=threshold
                )
            except RbdLabError as exc:
                logger.error(f"Check {name} raised: {exc}", exc_info=True)
                result = CheckResult(
                    name=name,
                    passed=False,
                    residual=float("inf"),
                    threshold=threshold,
                    detail=f"{type(exc).__name__}: {exc}",
                )
            logger.info(
                f"{name}: {'pass' if result.passed else 'FAIL'} (residual {result.residual:.3e})"
            )
            report.checks.append(result)
        return report


def verify_model(model: RobotModel, samples: int = 100, seed: int = 0) -> VerifyReport:
    return KernelVerifier(model, samples, seed).run()


def failed_checks(report: VerifyReport) -> List[str]:
    return [c.name for c in report.checks if not c.passed]
