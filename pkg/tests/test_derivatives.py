import numpy as np
import pytest

from app.models.dynamics import FD, ID, DynDerivatives
from app.models.fixed_point import FxpFormat
from app.models.robot import JointState
from app.services.icms import sample_states
from app.services.rbd_kernels import (
    ORIGINAL,
    RbdBinding,
    bind,
    fd_derivatives,
    id_derivatives,
)
from app.services.verification import central_difference


def _close(analytic, numeric, tol=1e-5):
    scale = max(1.0, np.abs(numeric).max())
    assert np.abs(analytic - numeric).max() / scale < tol


@pytest.mark.parametrize("robot", ["pendulum", "iiwa", "hyq"])
def test_id_derivatives_match_central_differences(robot, request, rng):
    model = request.getfixturevalue(robot)
    binding = RbdBinding(model)
    for state in sample_states(model, 3, seed=21):
        qdd = rng.normal(size=model.n)
        derivs = id_derivatives(model, JointState(state.q, state.qd, qdd))
        _close(derivs.d_dq, central_difference(lambda q: binding.inverse_dynamics(q, state.qd, qdd), state.q))
        _close(derivs.d_dqd, central_difference(lambda qd: binding.inverse_dynamics(state.q, qd, qdd), state.qd))


@pytest.mark.parametrize("robot", ["iiwa", "hyq"])
def test_fd_derivatives_match_central_differences(robot, request, rng):
    model = request.getfixturevalue(robot)
    binding = RbdBinding(model)
    for state in sample_states(model, 2, seed=22):
        tau = rng.normal(size=model.n)
        derivs = fd_derivatives(model, state, tau)
        _close(derivs.d_dq, central_difference(lambda q: binding.forward_dynamics(q, state.qd, tau), state.q))
        _close(derivs.d_dqd, central_difference(lambda qd: binding.forward_dynamics(state.q, qd, tau), state.qd))


def test_pendulum_derivatives_in_closed_form(pendulum):
    q, qd = 0.6, 1.5
    derivs = id_derivatives(pendulum, JointState([q], [qd], [0.0]))
    assert derivs.function == ID
    assert derivs.d_dq[0, 0] == pytest.approx(9.81 * np.cos(q))
    assert derivs.d_dqd[0, 0] == pytest.approx(0.0, abs=1e-12)

    fd = fd_derivatives(pendulum, JointState([q], [qd]), np.array([0.0]))
    assert fd.function == FD
    assert fd.d_dq[0, 0] == pytest.approx(-9.81 * np.cos(q))


def test_fd_derivatives_variant_independent(iiwa, rng):
    state = sample_states(iiwa, 1, seed=23)[0]
    tau = rng.normal(size=7)
    a = fd_derivatives(iiwa, state, tau).stacked()
    b = fd_derivatives(iiwa, state, tau, variant=ORIGINAL).stacked()
    np.testing.assert_allclose(a, b, atol=1e-9 * max(1.0, np.abs(a).max()))


def test_fd_derivatives_with_minv_returns_consistent_parts(iiwa, rng):
    state = sample_states(iiwa, 1, seed=24)[0]
    tau = rng.normal(size=7)
    binding = RbdBinding(iiwa)
    derivs, qdd, Minv = binding.fd_derivatives_with_minv(state.q, state.qd, tau)
    np.testing.assert_allclose(qdd, binding.forward_dynamics(state.q, state.qd, tau), atol=1e-12)
    np.testing.assert_allclose(Minv, binding.minv(state.q)[0], atol=1e-12)
    assert derivs.stacked().shape == (7, 14)


def test_quantized_derivatives_stay_close(iiwa):
    state = sample_states(iiwa, 1, seed=25)[0]
    real = bind(iiwa).id_derivatives(state.q, state.qd, state.qdd)
    fixed = bind(iiwa, FxpFormat(12, 20)).id_derivatives(state.q, state.qd, state.qdd)
    np.testing.assert_allclose(fixed.d_dq, real.d_dq, atol=1e-2)
    np.testing.assert_allclose(fixed.d_dqd, real.d_dqd, atol=1e-2)


def test_derivative_container_validation():
    with pytest.raises(ValueError):
        DynDerivatives("dID", np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        DynDerivatives(ID, np.zeros((2, 2)), np.zeros((2, 3)))
