"""Rigid-body dynamics kernels written once against an ``Arithmetic`` binding.

Every function here runs unchanged in double precision (the oracle) and in
fixed point (the device model). Inputs and outputs at the public boundary are
real arrays; everything in between lives in the binding's representation.

Pipeline units are tagged ``(module, pass, joint)`` through ``arith.unit`` so an
``OpCounter`` attributes each operation to the hardware stage that performs it.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.config import WORKERS
from app.exceptions import DimensionError, InertiaError
from app.models.dynamics import (
    FD,
    ID,
    CompensationParams,
    DynDerivatives,
    KernelTrace,
    MinvWorkspace,
)
from app.models.fixed_point import FxpFormat, FxpStats
from app.models.robot import BASE, JointState, RobotModel
from app.services.arithmetic import Arithmetic, FixedPointArithmetic, OpCounter, RealArithmetic
from app.services.fixed_point import NEAREST
from app.services.spatial import (
    crf,
    cross_force,
    expand,
    force_cross_operand,
    joint_matrix,
    motion_cross_subspace,
    project,
    subspace_column,
    subspace_force_cross,
    validate_state,
)
from app.utils.logging import get_logger

logger = get_logger(__name__)

RNEA = "RNEA"
DRNEA = "dRNEA"
MINV = "Minv"

FORWARD = "forward"
BACKWARD = "backward"
DIVIDE = "divide"

ORIGINAL = "original"
DEFERRED = "deferred"
MINV_VARIANTS = (ORIGINAL, DEFERRED)


class _Lifted:
    """Joint transforms and inertias of one configuration, in binding form."""

    def __init__(self, arith: Arithmetic, model: RobotModel, q: np.ndarray):
        self.X = [arith.lift(joint_matrix(j, float(qi))) for j, qi in zip(model.joints, q)]
        self.XT = [X.T for X in self.X]
        self.I = [arith.lift(j.inertia.matrix) for j in model.joints]


def _base_acceleration(arith: Arithmetic, model: RobotModel, gravity: bool):
    g = model.gravity if gravity else np.zeros(3)
    return arith.lift(np.concatenate([np.zeros(3), -g]))


def _check_fext(model: RobotModel, fext) -> Optional[np.ndarray]:
    if fext is None:
        return None
    fext = np.asarray(fext, dtype=float)
    if fext.shape != (model.n, 6):
        raise DimensionError(f"fext must have shape ({model.n}, 6), got {fext.shape}")
    return fext


# RNEA


def _rnea_forward(arith, model, lifted, qd, qdd, fext, gravity, trace=None):
    """Forward pass: link velocities, accelerations and net forces."""
    a_base = _base_acceleration(arith, model, gravity)
    v, a, f = [None] * model.n, [None] * model.n, [None] * model.n
    for i, joint in enumerate(model.joints):
        with arith.unit(RNEA, FORWARD, i):
            X, p = lifted.X[i], joint.parent
            vJ = expand(arith, joint, qd[i])
            if p == BASE:
                v[i] = vJ
                a[i] = arith.add(arith.matmul(X, a_base), expand(arith, joint, qdd[i]))
            else:
                v[i] = arith.add(arith.matmul(X, v[p]), vJ)
                a[i] = arith.add(
                    arith.add(arith.matmul(X, a[p]), expand(arith, joint, qdd[i])),
                    arith.mul(motion_cross_subspace(arith, joint, v[i]), qd[i]),
                )
            Iv = arith.matmul(lifted.I[i], v[i])
            f[i] = arith.add(arith.matmul(lifted.I[i], a[i]), cross_force(arith, v[i], Iv))
            if fext is not None:
                f[i] = arith.sub(f[i], arith.lift(fext[i]))
            arith.track("rnea.v", v[i])
            arith.track("rnea.a", a[i])
            arith.track("rnea.f", f[i])
    if trace is not None:
        trace.v, trace.a, trace.f = v, a, list(f)
    return v, a, f


def _rnea_backward(arith, model, lifted, f):
    tau = arith.zeros(model.n)
    for i in reversed(range(model.n)):
        joint = model.joints[i]
        with arith.unit(RNEA, BACKWARD, i):
            tau[i] = project(arith, joint, f[i])
            if joint.parent != BASE:
                p = joint.parent
                f[p] = arith.add(f[p], arith.matmul(lifted.XT[i], f[i]))
                arith.track("rnea.f", f[p])
    arith.track("rnea.tau", tau)
    return tau


def _rnea(arith, model, lifted, qd, qdd, fext=None, gravity=True, trace=None):
    _, _, f = _rnea_forward(arith, model, lifted, qd, qdd, fext, gravity, trace)
    return _rnea_backward(arith, model, lifted, f)


def rnea(
    model: RobotModel,
    state: JointState,
    fext=None,
    arith: Optional[Arithmetic] = None,
    gravity: bool = True,
) -> np.ndarray:
    """Inverse dynamics τ = M(q) q̈ + C(q, q̇, fext).

    ``fext`` holds one spatial force per link, expressed in that link's frame.
    """
    arith = arith or RealArithmetic()
    validate_state(model, state.q, state.qd, state.qdd)
    fext = _check_fext(model, fext)
    lifted = _Lifted(arith, model, state.q)
    tau = _rnea(
        arith, model, lifted, arith.lift(state.qd), arith.lift(state.qdd), fext, gravity
    )
    return arith.lower(tau)


# Mass matrix


def _mass_matrix(arith, model, lifted):
    n = model.n
    zero = arith.zeros(n)
    M = arith.zeros((n, n))
    for j in range(n):
        e_j = arith.zeros(n)
        e_j[j] = arith.lift(1.0)
        M[:, j] = _rnea(arith, model, lifted, zero, e_j, gravity=False)
    return M


def mass_matrix(model: RobotModel, q: np.ndarray, arith: Optional[Arithmetic] = None) -> np.ndarray:
    """Joint-space inertia matrix, one unit-acceleration RNEA per column.

    With q̇ = 0 and no gravity the bias term vanishes, so column j is simply
    rnea(q, 0, e_j).
    """
    arith = arith or RealArithmetic()
    validate_state(model, q)
    return arith.lower(_mass_matrix(arith, model, _Lifted(arith, model, q)))


# M⁻¹


@dataclass
class _MinvState:
    Minv: object
    U: List = field(default_factory=list)
    UDinv: List = field(default_factory=list)
    F: List = field(default_factory=list)


def _check_d(arith, i: int, D):
    value = float(arith.lower(D))
    if not value > 0.0:
        raise InertiaError(i, value)
    return value


def _minv_forward(arith, model, lifted, st: _MinvState):
    n = model.n
    for i, joint in enumerate(model.joints):
        with arith.unit(MINV, FORWARD, i):
            p = joint.parent
            if p != BASE:
                XF = arith.matmul(lifted.X[i], st.F[p][:, i:])
                st.Minv[i, i:] = arith.sub(st.Minv[i, i:], arith.matmul(st.UDinv[i], XF))
                st.F[i][:, i:] = arith.add(expand(arith, joint, st.Minv[i, i:]), XF)
            else:
                st.F[i][:, i:] = expand(arith, joint, st.Minv[i, i:])
            arith.track("minv.row", st.Minv[i, i:])
    # upper triangle is complete; mirror it
    lower = np.tril_indices(n, -1)
    st.Minv[lower] = st.Minv.T[lower]
    return st.Minv


def _minv_original(arith, model, lifted):
    n = model.n
    one = arith.lift(1.0)
    IA = list(lifted.I)
    st = _MinvState(Minv=arith.zeros((n, n)), F=[arith.zeros((6, n)) for _ in range(n)])
    st.U, st.UDinv = [None] * n, [None] * n
    D = np.zeros(n)
    Dinv = np.zeros(n)
    divisions = 0
    for i in reversed(range(n)):
        joint = model.joints[i]
        sub = list(model.subtree(i))
        with arith.unit(MINV, BACKWARD, i):
            U = subspace_column(arith, joint, IA[i])
            Di = project(arith, joint, U)
            D[i] = _check_d(arith, i, Di)
            di = arith.reciprocal(Di)
            divisions += 1
            Dinv[i] = float(arith.lower(di))
            delta = arith.zeros(len(sub))
            delta[0] = one
            R = arith.sub(delta, project(arith, joint, st.F[i][:, sub]))
            st.Minv[i, sub] = arith.mul(di, R)
            st.U[i] = U
            st.UDinv[i] = arith.mul(U, di)
            p = joint.parent
            if p != BASE:
                Fi = arith.add(st.F[i][:, sub], arith.mul(U[:, None], st.Minv[i, sub][None, :]))
                st.F[i][:, sub] = Fi
                st.F[p][:, sub] = arith.add(st.F[p][:, sub], arith.matmul(lifted.XT[i], Fi))
                Ia = arith.sub(IA[i], arith.mul(st.UDinv[i][:, None], U[None, :]))
                IA[p] = arith.add(IA[p], arith.matmul(lifted.XT[i], arith.matmul(Ia, lifted.X[i])))
                arith.track("minv.IA", IA[p])
                arith.track("minv.F", st.F[p])
    Minv = _minv_forward(arith, model, lifted, st)
    ws = MinvWorkspace(
        variant=ORIGINAL,
        D=D,
        Dinv=Dinv,
        alpha=np.ones(n),
        holding=np.ones(n),
        backward_divisions=divisions,
        reciprocals=divisions,
    )
    return Minv, ws


def _holding_shift(arith, a, b) -> int:
    """Power of two that brings the product ``a*b`` into [1, 2)."""
    return 1 - arith.product_exponent(a, b)


def _minv_deferred(arith, model, lifted):
    """M⁻¹ with every reciprocal moved out of the backward recursion.

    Each joint's accumulator stores (ÎA, F̂, κ) standing for IA = ÎA/κ and
    F = F̂/κ. Instead of dividing by D_i, a joint hands its parent the
    numerators scaled by the holding factor β_i = κ_i D̂_i, and the parent
    cross-multiplies. Every product that feeds a holding factor is rescaled
    by a power of two inside the same rounding, so κ and β stay in [1, 2) and
    the accumulators keep the precision of the unscaled recursion. The N_B
    reciprocals 1/D̂_i run as one batch between the passes and the forward
    pass consumes them exactly like the original.
    """
    n = model.n
    one = arith.lift(1.0)
    IA = list(lifted.I)
    F = [arith.zeros((6, n)) for _ in range(n)]
    kappa = [one] * n
    Dhat, Rhat, Uhat = [None] * n, [None] * n, [None] * n
    alpha = np.ones(n)
    holding = np.ones(n)
    for i in reversed(range(n)):
        joint = model.joints[i]
        sub = list(model.subtree(i))
        with arith.unit(MINV, BACKWARD, i):
            a_i = kappa[i]
            alpha[i] = float(arith.lower(a_i))
            U = subspace_column(arith, joint, IA[i])
            Di = project(arith, joint, U)
            delta = arith.zeros(len(sub))
            delta[0] = a_i
            Rhat[i] = arith.sub(delta, project(arith, joint, F[i][:, sub]))
            Dhat[i], Uhat[i] = Di, U
            p = joint.parent
            if p != BASE:
                k = _holding_shift(arith, a_i, Di)
                beta = arith.mul_scaled(a_i, Di, k)
                N = arith.sub(
                    arith.mul_scaled(Di, IA[i], k), arith.mul_scaled(U[:, None], U[None, :], k)
                )
                G = arith.add(
                    arith.mul_scaled(Di, F[i][:, sub], k),
                    arith.mul_scaled(U[:, None], Rhat[i][None, :], k),
                )
                holding[i] = float(arith.lower(beta))
                XtNX = arith.matmul(lifted.XT[i], arith.matmul(N, lifted.X[i]))
                XtG = arith.matmul(lifted.XT[i], G)
                k = _holding_shift(arith, kappa[p], beta)
                IA[p] = arith.add(
                    arith.mul_scaled(beta, IA[p], k), arith.mul_scaled(kappa[p], XtNX, k)
                )
                F[p] = arith.mul_scaled(beta, F[p], k)
                F[p][:, sub] = arith.add(F[p][:, sub], arith.mul_scaled(kappa[p], XtG, k))
                kappa[p] = arith.mul_scaled(kappa[p], beta, k)
                arith.track("minv.IA", IA[p])
                arith.track("minv.F", F[p])

    D = np.zeros(n)
    Dinv = np.zeros(n)
    w = [None] * n
    for i in range(n):
        with arith.unit(MINV, DIVIDE, i):
            D[i] = _check_d(arith, i, Dhat[i]) / alpha[i]
            w[i] = arith.reciprocal(Dhat[i])
            Dinv[i] = float(arith.lower(w[i])) * alpha[i]

    st = _MinvState(Minv=arith.zeros((n, n)), F=[arith.zeros((6, n)) for _ in range(n)])
    st.UDinv = [None] * n
    for i in range(n):
        sub = list(model.subtree(i))
        with arith.unit(MINV, FORWARD, i):
            st.Minv[i, sub] = arith.mul(w[i], Rhat[i])
            st.UDinv[i] = arith.mul(Uhat[i], w[i])
    Minv = _minv_forward(arith, model, lifted, st)
    ws = MinvWorkspace(
        variant=DEFERRED,
        D=D,
        Dinv=Dinv,
        alpha=alpha,
        holding=holding,
        backward_divisions=0,
        reciprocals=n,
    )
    return Minv, ws


_MINV_IMPL = {ORIGINAL: _minv_original, DEFERRED: _minv_deferred}


def minv_original(
    model: RobotModel, q: np.ndarray, arith: Optional[Arithmetic] = None
) -> Tuple[np.ndarray, MinvWorkspace]:
    """Analytical M⁻¹ with the reciprocal of D_i taken inside the backward pass."""
    arith = arith or RealArithmetic()
    validate_state(model, q)
    Minv, ws = _minv_original(arith, model, _Lifted(arith, model, q))
    return arith.lower(Minv), ws


def minv_deferred(
    model: RobotModel, q: np.ndarray, arith: Optional[Arithmetic] = None
) -> Tuple[np.ndarray, MinvWorkspace]:
    """Analytical M⁻¹ with all divisions deferred until after the backward pass."""
    arith = arith or RealArithmetic()
    validate_state(model, q)
    Minv, ws = _minv_deferred(arith, model, _Lifted(arith, model, q))
    return arith.lower(Minv), ws


# Forward dynamics


def _row_product(arith, model, A, B):
    """A @ B with row i computed in the M⁻¹ forward unit of joint i."""
    out = arith.zeros((model.n,) + np.shape(B)[1:])
    for i in range(model.n):
        with arith.unit(MINV, FORWARD, i):
            out[i] = arith.matmul(A[i], B)
    return out


def _forward_dynamics(arith, model, lifted, Minv, qd, tau, fext):
    zero = arith.zeros(model.n)
    bias = _rnea(arith, model, lifted, qd, zero, fext)
    qdd = _row_product(arith, model, Minv, arith.sub(tau, bias))
    arith.track("fd.qdd", qdd)
    return qdd


def forward_dynamics(
    model: RobotModel,
    state: JointState,
    tau: np.ndarray,
    fext=None,
    arith: Optional[Arithmetic] = None,
    variant: str = DEFERRED,
) -> np.ndarray:
    """q̈ = M⁻¹ (τ − C(q, q̇, fext))."""
    return RbdBinding(model, arith, variant=variant).forward_dynamics(
        state.q, state.qd, tau, fext
    )


# Derivatives (ΔRNEA)


def _id_derivatives(arith, model, lifted, qd, qdd, fext, gravity=True):
    """Analytical ∂τ/∂q and ∂τ/∂q̇, propagated column-wise through both passes."""
    n = model.n
    v, a, f = _rnea_forward(arith, model, lifted, qd, qdd, fext, gravity)
    a_base = _base_acceleration(arith, model, gravity)
    dv_q, dv_qd, da_q, da_qd, df_q, df_qd = ([None] * n for _ in range(6))
    for i, joint in enumerate(model.joints):
        with arith.unit(DRNEA, FORWARD, i):
            X, p = lifted.X[i], joint.parent
            if p == BASE:
                dvq, dvqd = arith.zeros((6, n)), arith.zeros((6, n))
                daq, daqd = arith.zeros((6, n)), arith.zeros((6, n))
                Xa = arith.matmul(X, a_base)
                dvqd[:, i] = expand(arith, joint, arith.lift(1.0))
            else:
                dvq = arith.matmul(X, dv_q[p])
                dvqd = arith.matmul(X, dv_qd[p])
                daq = arith.matmul(X, da_q[p])
                daqd = arith.matmul(X, da_qd[p])
                Xv = arith.matmul(X, v[p])
                Xa = arith.matmul(X, a[p])
                dvq[:, i] = arith.add(dvq[:, i], motion_cross_subspace(arith, joint, Xv))
                dvqd[:, i] = arith.add(dvqd[:, i], expand(arith, joint, arith.lift(1.0)))
            daq[:, i] = arith.add(daq[:, i], motion_cross_subspace(arith, joint, Xa))
            daq = arith.add(daq, arith.mul(motion_cross_subspace(arith, joint, dvq), qd[i]))
            daqd = arith.add(daqd, arith.mul(motion_cross_subspace(arith, joint, dvqd), qd[i]))
            daqd[:, i] = arith.add(daqd[:, i], motion_cross_subspace(arith, joint, v[i]))

            I = lifted.I[i]
            L = force_cross_operand(arith.matmul(I, v[i]))
            crf_v = crf(v[i])
            dfq = arith.add(
                arith.add(arith.matmul(I, daq), arith.matmul(L, dvq)),
                arith.matmul(crf_v, arith.matmul(I, dvq)),
            )
            dfqd = arith.add(
                arith.add(arith.matmul(I, daqd), arith.matmul(L, dvqd)),
                arith.matmul(crf_v, arith.matmul(I, dvqd)),
            )
            dv_q[i], dv_qd[i], da_q[i], da_qd[i] = dvq, dvqd, daq, daqd
            df_q[i], df_qd[i] = dfq, dfqd
            arith.track("drnea.dv", dvq)
            arith.track("drnea.da", daq)
            arith.track("drnea.df", dfq)

    dtau_q, dtau_qd = arith.zeros((n, n)), arith.zeros((n, n))
    for i in reversed(range(n)):
        joint = model.joints[i]
        with arith.unit(DRNEA, BACKWARD, i):
            dtau_q[i] = project(arith, joint, df_q[i])
            dtau_qd[i] = project(arith, joint, df_qd[i])
            p = joint.parent
            if p != BASE:
                XT = lifted.XT[i]
                df_q[p] = arith.add(df_q[p], arith.matmul(XT, df_q[i]))
                df_q[p][:, i] = arith.add(
                    df_q[p][:, i], arith.matmul(XT, subspace_force_cross(arith, joint, f[i]))
                )
                df_qd[p] = arith.add(df_qd[p], arith.matmul(XT, df_qd[i]))
                f[p] = arith.add(f[p], arith.matmul(XT, f[i]))
    arith.track("drnea.dtau", dtau_q)
    arith.track("drnea.dtau", dtau_qd)
    return dtau_q, dtau_qd


def id_derivatives(
    model: RobotModel, state: JointState, fext=None, arith: Optional[Arithmetic] = None
) -> DynDerivatives:
    """∂τ/∂q and ∂τ/∂q̇ of inverse dynamics at ``state``."""
    return RbdBinding(model, arith).id_derivatives(state.q, state.qd, state.qdd, fext)


def fd_derivatives(
    model: RobotModel,
    state: JointState,
    tau: np.ndarray,
    fext=None,
    arith: Optional[Arithmetic] = None,
    variant: str = DEFERRED,
) -> DynDerivatives:
    """Jacobian of forward dynamics: ∂q̈/∂x = −M⁻¹ ∂τ/∂x at q̈ = FD(q, q̇, τ)."""
    return RbdBinding(model, arith, variant=variant).fd_derivatives(
        state.q, state.qd, tau, fext
    )


class RbdBinding:
    """A robot model bound to one scalar binding and M⁻¹ variant.

    Controllers call RBD functions only through this object, so the same
    controller code runs on real or quantized kernels. ``compensation`` is added
    to M⁻¹ (in the binding's representation) wherever M⁻¹ is used.
    """

    def __init__(
        self,
        model: RobotModel,
        arith: Optional[Arithmetic] = None,
        compensation: Optional[CompensationParams] = None,
        variant: str = DEFERRED,
    ):
        if variant not in MINV_VARIANTS:
            raise ValueError(f"unknown Minv variant {variant!r}")
        if compensation is not None and compensation.n != model.n:
            raise DimensionError("compensation offset does not match the model")
        self.model = model
        self.arith = arith or RealArithmetic()
        self.compensation = compensation
        self.variant = variant

    @property
    def is_real(self) -> bool:
        return isinstance(self.arith, RealArithmetic)

    def fork(self, counter: Optional[OpCounter] = None) -> "RbdBinding":
        """Independent binding for a worker thread; stats stay shared."""
        return RbdBinding(self.model, self.arith.fork(counter), self.compensation, self.variant)

    def _prepare(self, q, *vectors):
        validate_state(self.model, q, *vectors)
        lifted = _Lifted(self.arith, self.model, np.asarray(q, dtype=float))
        return lifted, [self.arith.lift(v) for v in vectors]

    def _minv(self, lifted):
        Minv, ws = _MINV_IMPL[self.variant](self.arith, self.model, lifted)
        if self.compensation is not None:
            Minv = self.arith.add(Minv, self.arith.lift(self.compensation.offset))
        return Minv, ws

    def inverse_dynamics(self, q, qd, qdd, fext=None, gravity: bool = True) -> np.ndarray:
        fext = _check_fext(self.model, fext)
        lifted, (qd_l, qdd_l) = self._prepare(q, qd, qdd)
        return self.arith.lower(_rnea(self.arith, self.model, lifted, qd_l, qdd_l, fext, gravity))

    def gravity_torque(self, q) -> np.ndarray:
        zero = np.zeros(self.model.n)
        return self.inverse_dynamics(q, zero, zero)

    def link_velocities(self, q, qd) -> np.ndarray:
        """Spatial velocity of every link (N_B x 6) from the RNEA forward pass."""
        lifted, (qd_l, qdd_l) = self._prepare(q, qd, np.zeros(self.model.n))
        trace = KernelTrace()
        _rnea_forward(self.arith, self.model, lifted, qd_l, qdd_l, None, True, trace)
        return np.array([self.arith.lower(v) for v in trace.v])

    def mass_matrix(self, q) -> np.ndarray:
        lifted, _ = self._prepare(q)
        return self.arith.lower(_mass_matrix(self.arith, self.model, lifted))

    def minv(self, q) -> Tuple[np.ndarray, MinvWorkspace]:
        lifted, _ = self._prepare(q)
        Minv, ws = self._minv(lifted)
        return self.arith.lower(Minv), ws

    def forward_dynamics(self, q, qd, tau, fext=None) -> np.ndarray:
        fext = _check_fext(self.model, fext)
        lifted, (qd_l, tau_l) = self._prepare(q, qd, tau)
        Minv, _ = self._minv(lifted)
        qdd = _forward_dynamics(self.arith, self.model, lifted, Minv, qd_l, tau_l, fext)
        return self.arith.lower(qdd)

    def id_derivatives(self, q, qd, qdd, fext=None) -> DynDerivatives:
        fext = _check_fext(self.model, fext)
        lifted, (qd_l, qdd_l) = self._prepare(q, qd, qdd)
        dq, dqd = _id_derivatives(self.arith, self.model, lifted, qd_l, qdd_l, fext)
        return DynDerivatives(ID, self.arith.lower(dq), self.arith.lower(dqd))

    def fd_derivatives(self, q, qd, tau, fext=None) -> DynDerivatives:
        derivs, _, _ = self.fd_derivatives_with_minv(q, qd, tau, fext)
        return derivs

    def fd_derivatives_with_minv(self, q, qd, tau, fext=None):
        """ΔFD together with the q̈ and M⁻¹ it was built from (one M⁻¹ evaluation)."""
        arith, model = self.arith, self.model
        fext = _check_fext(model, fext)
        lifted, (qd_l, tau_l) = self._prepare(q, qd, tau)
        Minv, _ = self._minv(lifted)
        qdd = _forward_dynamics(arith, model, lifted, Minv, qd_l, tau_l, fext)
        dq, dqd = _id_derivatives(arith, model, lifted, qd_l, qdd, fext)
        neg_minv = arith.neg(Minv)
        d_dq = _row_product(arith, model, neg_minv, dq)
        d_dqd = _row_product(arith, model, neg_minv, dqd)
        arith.track("dfd", d_dq)
        arith.track("dfd", d_dqd)
        return (
            DynDerivatives(FD, arith.lower(d_dq), arith.lower(d_dqd)),
            arith.lower(qdd),
            arith.lower(Minv),
        )

    def __repr__(self) -> str:
        return f"RbdBinding({self.model.name}, {self.arith!r}, variant={self.variant!r})"


FUNCTIONS = ("ID", "Minv", "FD", "dID", "dFD")


def evaluate(binding: RbdBinding, function: str, state: JointState, tau=None):
    """Run one named RBD function on ``state``; τ defaults to gravity compensation."""
    if function == "ID":
        return binding.inverse_dynamics(state.q, state.qd, state.qdd)
    if function == "Minv":
        return binding.minv(state.q)[0]
    if tau is None:
        tau = binding.gravity_torque(state.q)
    if function == "FD":
        return binding.forward_dynamics(state.q, state.qd, tau)
    if function == "dID":
        return binding.id_derivatives(state.q, state.qd, state.qdd).stacked()
    if function == "dFD":
        return binding.fd_derivatives(state.q, state.qd, tau).stacked()
    raise ValueError(f"unknown RBD function {function!r}; choose one of {FUNCTIONS}")


def batch_evaluate(
    binding: RbdBinding,
    function: str,
    states: Sequence[JointState],
    workers: Optional[int] = None,
    taus: Optional[Sequence[np.ndarray]] = None,
) -> List[np.ndarray]:
    """Evaluate ``function`` over a batch of states on a thread pool.

    Results come back in input order regardless of completion order.
    """
    if function not in FUNCTIONS:
        raise ValueError(f"unknown RBD function {function!r}; choose one of {FUNCTIONS}")
    taus = [None] * len(states) if taus is None else list(taus)
    if len(taus) != len(states):
        raise DimensionError("taus and states must have equal length")

    def run(args) -> np.ndarray:
        state, tau = args
        return evaluate(binding.fork(), function, state, tau)

    workers = workers or WORKERS
    logger.debug(f"Evaluating {function} on {len(states)} states with {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run, zip(states, taus)))


def profile_counts(
    model: RobotModel, function: str, arith: Optional[Arithmetic] = None, variant: str = DEFERRED, seed: int = 0
) -> OpCounter:
    """Instrumented run of ``function`` at a generic state (all entries non-zero)."""
    counter = OpCounter()
    base = arith or RealArithmetic()
    binding = RbdBinding(model, base.fork(counter), variant=variant)
    rng = np.random.default_rng(seed)
    n = model.n
    state = JointState(
        rng.uniform(0.1, 1.0, n) * rng.choice([-1.0, 1.0], n),
        rng.uniform(0.1, 1.0, n),
        rng.uniform(0.1, 1.0, n),
    )
    tau = rng.uniform(0.1, 1.0, n)
    evaluate(binding, function, state, tau)
    return counter


def bind(
    model: RobotModel,
    fmt: Optional[FxpFormat] = None,
    rounding: str = NEAREST,
    accumulate: str = "wide",
    variant: str = DEFERRED,
    compensation: Optional[CompensationParams] = None,
    stats: Optional[FxpStats] = None,
) -> RbdBinding:
    """Real binding when ``fmt`` is None, fixed point at ``fmt`` otherwise."""
    if fmt is None:
        arith = RealArithmetic(stats=stats)
    else:
        arith = FixedPointArithmetic(fmt, rounding, accumulate, stats=stats)
    return RbdBinding(model, arith, compensation, variant)
