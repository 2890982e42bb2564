"""Controller templates: computed-torque PID, LQR and iLQR-based MPC.

Every controller reaches the robot dynamics only through an ``RbdBinding``,
so the same controller runs on real or quantized kernels. Controller state
(integral term, warm-start plan) lives in explicit records.
"""

from typing import Optional, Tuple

import numpy as np

from app.exceptions import DimensionError, RiccatiConvergenceError, RolloutDivergenceError
from app.models.robot import JointState
from app.models.simulation import ControlOutput, MpcPlan, PidState
from app.schemas.run_config import ControllerConfig, LqrConfig, MpcConfig, PidConfig
from app.services.rbd_kernels import RbdBinding
from app.utils.logging import get_logger

logger = get_logger(__name__)


def clamp_torque(binding: RbdBinding, tau: np.ndarray) -> np.ndarray:
    limits = binding.model.effort_limits
    if limits is None:
        return tau
    return np.clip(tau, -limits, limits)


def _check(binding: RbdBinding, *vectors):
    n = binding.model.n
    for v in vectors:
        if np.shape(v) != (n,):
            raise DimensionError(f"expected vectors of length {n}, got shape {np.shape(v)}")


def pid_computed_torque(
    state: JointState,
    reference: JointState,
    cfg: PidConfig,
    binding: RbdBinding,
    pid_state: Optional[PidState] = None,
) -> ControlOutput:
    """τ = ID(q, q̇, q̈_ref + Kp e + Kd ė + Ki ∫e) with e = q_ref − q.

    ``pid_state`` is advanced in place; the integral is clamped per joint.
    """
    n = binding.model.n
    _check(binding, state.q, state.qd, reference.q, reference.qd, reference.qdd)
    kp, ki, kd = cfg.gains(n)
    pid_state = pid_state or PidState.zero(n)

    e = reference.q - state.q
    e_dot = reference.qd - state.qd
    pid_state.integral = np.clip(
        pid_state.integral + e * cfg.dt, -cfg.integral_clamp, cfg.integral_clamp
    )
    qdd_cmd = reference.qdd + kp * e + kd * e_dot + ki * pid_state.integral
    tau = binding.inverse_dynamics(state.q, state.qd, qdd_cmd)
    return ControlOutput(clamp_torque(binding, tau), float(np.linalg.norm(e)))


def linearize(binding: RbdBinding, q0: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Euler-discretized (A, B) about rest at ``q0`` under gravity-holding torque."""
    n = binding.model.n
    qd0 = np.zeros(n)
    tau0 = binding.gravity_torque(q0)
    derivs, _, minv = binding.fd_derivatives_with_minv(q0, qd0, tau0)
    eye, zero = np.eye(n), np.zeros((n, n))
    A = np.eye(2 * n) + dt * np.block([[zero, eye], [derivs.d_dq, derivs.d_dqd]])
    B = dt * np.vstack([zero, minv])
    return A, B


def riccati_gain(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    max_iterations: int = 5000,
    tolerance: float = 1e-9,
) -> Tuple[np.ndarray, np.ndarray]:
    """Iterate the discrete Riccati recursion from P = Q to its fixed point.

    Convergence is judged relative to ‖P‖ so scaling Q and R together leaves
    the iteration (and K) unchanged.
    """
    P = Q.copy()
    for iteration in range(1, max_iterations + 1):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_next = Q + A.T @ P @ (A - B @ K)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise RiccatiConvergenceError(f"Riccati iterate diverged at iteration {iteration}")
        change = np.max(np.abs(P_next - P))
        P = P_next
        if change <= tolerance * np.max(np.abs(P)):
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            logger.debug(f"Riccati recursion converged after {iteration} iterations")
            return K, P
    raise RiccatiConvergenceError(
        f"Riccati recursion did not converge within {max_iterations} iterations"
    )


def lqr_gain(binding: RbdBinding, operating_point: np.ndarray, cfg: LqrConfig) -> np.ndarray:
    """Feedback gain K (N x 2N) of the discrete LQR about ``operating_point``."""
    n = binding.model.n
    q0 = np.asarray(operating_point, dtype=float)
    _check(binding, q0)
    Q, R = cfg.cost_matrices(n)
    A, B = linearize(binding, q0, cfg.dt)
    K, _ = riccati_gain(A, B, Q, R, cfg.max_iterations, cfg.tolerance)
    radius = float(np.max(np.abs(np.linalg.eigvals(A - B @ K))))
    if not radius < 1.0:
        raise RiccatiConvergenceError(f"closed-loop spectral radius {radius:.6f} is not below 1")
    logger.debug(f"LQR gain at {binding!r}: closed-loop spectral radius {radius:.6f}")
    return K


# iLQR


def _discrete_step(binding: RbdBinding, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    n = binding.model.n
    q, qd = x[:n], x[n:]
    qdd = binding.forward_dynamics(q, qd, u)
    qd_next = qd + dt * qdd
    return np.concatenate([q + dt * qd_next, qd_next])


def _step_jacobians(binding: RbdBinding, x: np.ndarray, u: np.ndarray, dt: float):
    """Jacobians of the semi-implicit Euler step: q̇⁺ = q̇ + dt q̈, q⁺ = q + dt q̇⁺."""
    n = binding.model.n
    derivs, _, minv = binding.fd_derivatives_with_minv(x[:n], x[n:], u)
    eye = np.eye(n)
    fq, fv = derivs.d_dq, derivs.d_dqd
    A = np.block(
        [
            [eye + dt * dt * fq, dt * eye + dt * dt * fv],
            [dt * fq, eye + dt * fv],
        ]
    )
    B = np.vstack([dt * dt * minv, dt * minv])
    return A, B


class IlqrSolver:
    """Shooting iLQR over a fixed horizon with a quadratic tracking cost

        Σ (x−x_ref)ᵀQ(x−x_ref) + (u−u_ref)ᵀR(u−u_ref) + (x_N−x_ref)ᵀQf(x_N−x_ref)

    where ``u_ref`` is the inverse-dynamics torque that holds the reference.
    """

    def __init__(self, binding: RbdBinding, cfg: MpcConfig):
        self.binding = binding
        self.cfg = cfg
        self.n = binding.model.n
        self.Q, self.R, self.Qf = cfg.cost_matrices(self.n)

    def feedforward(self, x_ref: np.ndarray) -> np.ndarray:
        n = self.n
        return np.array(
            [
                self.binding.inverse_dynamics(x[:n], x[n:], np.zeros(n))
                for x in x_ref[:-1]
            ]
        )

    def cost(self, xs, us, x_ref, u_ref) -> float:
        dx = xs - x_ref
        du = us - u_ref
        stage = np.einsum("ki,ij,kj->", dx[:-1], self.Q, dx[:-1])
        stage += np.einsum("ki,ij,kj->", du, self.R, du)
        return float(stage + dx[-1] @ self.Qf @ dx[-1])

    def rollout(self, x0, us, xs_nom=None, ff=None, K=None, alpha=1.0):
        """Simulate the prediction model; with a nominal plan apply its feedback law."""
        horizon = len(us)
        xs = np.zeros((horizon + 1, 2 * self.n))
        applied = np.zeros_like(us)
        xs[0] = x0
        for k in range(horizon):
            u = us[k]
            if xs_nom is not None:
                u = u + alpha * ff[k] + K[k] @ (xs[k] - xs_nom[k])
            applied[k] = clamp_torque(self.binding, u)
            xs[k + 1] = _discrete_step(self.binding, xs[k], applied[k], self.cfg.dt)
            norm = np.linalg.norm(xs[k + 1])
            if not np.isfinite(norm) or norm > self.cfg.divergence_bound:
                raise RolloutDivergenceError(k + 1, float(norm), "mpc-prediction")
        return xs, applied

    def backward_pass(self, xs, us, x_ref, u_ref, mu: float):
        horizon, n2 = len(us), 2 * self.n
        ff = np.zeros_like(us)
        K = np.zeros((horizon, self.n, n2))
        Vx = 2.0 * self.Qf @ (xs[-1] - x_ref[-1])
        Vxx = 2.0 * self.Qf
        for k in reversed(range(horizon)):
            A, B = _step_jacobians(self.binding, xs[k], us[k], self.cfg.dt)
            Qx = 2.0 * self.Q @ (xs[k] - x_ref[k]) + A.T @ Vx
            Qu = 2.0 * self.R @ (us[k] - u_ref[k]) + B.T @ Vx
            Qxx = 2.0 * self.Q + A.T @ Vxx @ A
            Quu = 2.0 * self.R + B.T @ Vxx @ B + mu * np.eye(self.n)
            Qux = B.T @ Vxx @ A
            ff[k] = -np.linalg.solve(Quu, Qu)
            K[k] = -np.linalg.solve(Quu, Qux)
            Vx = Qx + K[k].T @ Quu @ ff[k] + K[k].T @ Qu + Qux.T @ ff[k]
            Vxx = Qxx + K[k].T @ Quu @ K[k] + K[k].T @ Qux + Qux.T @ K[k]
            Vxx = 0.5 * (Vxx + Vxx.T)
        return ff, K

    def solve(self, x0: np.ndarray, x_ref: np.ndarray, us_init: Optional[np.ndarray] = None) -> MpcPlan:
        """Run ``cfg.iterations`` iLQR iterations; accepted costs never increase."""
        cfg = self.cfg
        if len(x_ref) < cfg.horizon + 1:
            raise DimensionError(
                f"reference needs {cfg.horizon + 1} states, got {len(x_ref)}"
            )
        x_ref = np.asarray(x_ref[: cfg.horizon + 1], dtype=float)
        u_ref = self.feedforward(x_ref)
        us = u_ref.copy() if us_init is None else np.array(us_init, dtype=float)
        xs, us = self.rollout(x0, us)
        cost = self.cost(xs, us, x_ref, u_ref)
        costs = [cost]
        mu = cfg.regularization
        K = np.zeros((cfg.horizon, self.n, 2 * self.n))

        for iteration in range(cfg.iterations):
            ff, K_new = self.backward_pass(xs, us, x_ref, u_ref, mu)
            accepted = False
            alpha = 1.0
            for _ in range(cfg.line_search_steps):
                try:
                    xs_new, us_new = self.rollout(x0, us, xs, ff, K_new, alpha)
                except RolloutDivergenceError:
                    alpha *= 0.5
                    continue
                new_cost = self.cost(xs_new, us_new, x_ref, u_ref)
                if new_cost <= cost:
                    xs, us, cost, K = xs_new, us_new, new_cost, K_new
                    accepted = True
                    break
                alpha *= 0.5
            costs.append(cost)
            if accepted:
                mu = max(cfg.regularization, mu / 10.0)
            else:
                mu *= 10.0
            logger.trace(
                f"iLQR iteration {iteration}: cost {cost:.6e}, step {alpha if accepted else 0.0}, mu {mu:.1e}"
            )
        return MpcPlan(xs=xs, us=us, K=K, cost=cost, costs=costs)


def mpc_step(
    state: JointState,
    ref_traj: np.ndarray,
    cfg: MpcConfig,
    binding: RbdBinding,
    warm_start: Optional[MpcPlan] = None,
) -> Tuple[ControlOutput, MpcPlan]:
    """Solve the iLQR problem from ``state`` and return its first control."""
    solver = IlqrSolver(binding, cfg)
    us_init = None
    if warm_start is not None:
        shift = min(warm_start.age, len(warm_start.us) - 1)
        us_init = np.vstack(
            [warm_start.us[shift:], np.repeat(warm_start.us[-1:], shift, axis=0)]
        )
    plan = solver.solve(state.as_vector(), ref_traj, us_init)
    error = float(np.linalg.norm(ref_traj[0][: binding.model.n] - state.q))
    return ControlOutput(plan.us[0].copy(), error, plan.cost), plan


class Controller:
    """Closed-loop controller regulating towards a fixed target state."""

    kind = "abstract"

    def __init__(self, binding: RbdBinding, target: JointState):
        _check(binding, target.q, target.qd)
        self.binding = binding
        self.target = target

    def reset(self):
        pass

    def control(self, state: JointState) -> ControlOutput:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.binding!r})"


class PidController(Controller):
    kind = "pid"

    def __init__(self, binding: RbdBinding, target: JointState, cfg: PidConfig):
        super().__init__(binding, target)
        self.cfg = cfg
        self.state = PidState.zero(binding.model.n)

    def reset(self):
        self.state = PidState.zero(self.binding.model.n)

    def control(self, state: JointState) -> ControlOutput:
        return pid_computed_torque(state, self.target, self.cfg, self.binding, self.state)


class LqrController(Controller):
    """u = g(q_ref) − K (x − x_ref) with K from the controller's own kernels."""

    kind = "lqr"

    def __init__(self, binding: RbdBinding, target: JointState, cfg: LqrConfig):
        super().__init__(binding, target)
        self.cfg = cfg
        q0 = target.q if cfg.operating_point is None else np.asarray(cfg.operating_point)
        self.K = lqr_gain(binding, q0, cfg)
        self.feedforward = binding.gravity_torque(target.q)
        self.x_ref = target.as_vector()

    def control(self, state: JointState) -> ControlOutput:
        dx = state.as_vector() - self.x_ref
        tau = self.feedforward - self.K @ dx
        return ControlOutput(
            clamp_torque(self.binding, tau),
            float(np.linalg.norm(dx[: self.binding.model.n])),
        )


class MpcController(Controller):
    """Re-solves every ``replan_interval`` calls and tracks the plan in between.

    ``plant_dt`` is the period between calls; between re-solves the plan step
    covering the elapsed time is tracked with its feedback gain.
    """

    kind = "mpc"

    def __init__(
        self,
        binding: RbdBinding,
        target: JointState,
        cfg: MpcConfig,
        plant_dt: Optional[float] = None,
    ):
        super().__init__(binding, target)
        self.cfg = cfg
        self.plant_dt = cfg.dt if plant_dt is None else plant_dt
        self.ref_traj = np.tile(target.as_vector(), (cfg.horizon + 1, 1))
        self.plan: Optional[MpcPlan] = None
        self.calls = 0

    def reset(self):
        self.plan = None
        self.calls = 0

    def _plan_step(self) -> int:
        return int(self.calls * self.plant_dt / self.cfg.dt + 1e-9)

    def control(self, state: JointState) -> ControlOutput:
        plan = self.plan
        if plan is not None:
            plan.age = self._plan_step()
        if plan is None or self.calls >= self.cfg.replan_interval or plan.age >= len(plan.us):
            output, self.plan = mpc_step(state, self.ref_traj, self.cfg, self.binding, plan)
            self.calls = 1
            return output
        k = plan.age
        tau = plan.us[k] + plan.K[k] @ (state.as_vector() - plan.xs[k])
        self.calls += 1
        error = float(np.linalg.norm(self.target.q - state.q))
        return ControlOutput(clamp_torque(self.binding, tau), error, plan.cost)


def build_controller(
    cfg: ControllerConfig,
    binding: RbdBinding,
    target: JointState,
    plant_dt: Optional[float] = None,
) -> Controller:
    if cfg.kind == "pid":
        return PidController(binding, target, cfg.pid)
    if cfg.kind == "lqr":
        return LqrController(binding, target, cfg.lqr)
    if cfg.kind == "mpc":
        return MpcController(binding, target, cfg.mpc, plant_dt)
    raise ValueError(f"unknown controller kind {cfg.kind!r}")
