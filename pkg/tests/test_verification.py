import numpy as np
import pytest

from app.schemas.reports import CheckResult, VerifyReport
from app.services.verification import KernelVerifier, failed_checks, verify_model


@pytest.mark.parametrize("robot", ["pendulum", "iiwa"])
def test_kernels_pass_every_check(robot, request):
    model = request.getfixturevalue(robot)
    report = verify_model(model, samples=5, seed=2)
    assert report.robot == model.name
    assert [c.name for c in report.checks] == [name for name, _, _ in KernelVerifier.CHECKS]
    assert failed_checks(report) == []
    assert report.passed


def test_deferred_minv_has_no_backward_divisions(hyq):
    assert KernelVerifier(hyq, samples=1).deferred_divisions() == 0.0


def test_failed_checks_lists_names():
    report = VerifyReport(robot="r", samples=1, seed=0)
    report.checks.append(CheckResult(name="a", passed=True, residual=0.0, threshold=1.0))
    report.checks.append(CheckResult(name="b", passed=False, residual=2.0, threshold=1.0))
    assert failed_checks(report) == ["b"]
    assert not report.passed


@pytest.mark.parametrize("robot", ["iiwa", "hyq"])
def test_minv_variants_agree_elementwise(robot, request):
    verifier = KernelVerifier(request.getfixturevalue(robot), samples=20, seed=4)
    gaps = [
        np.max(np.abs(verifier.original.minv(s.q)[0] - verifier.deferred.minv(s.q)[0]))
        for s in verifier.states
    ]
    assert verifier.minv_equivalence() == max(gaps)
    assert max(gaps) <= 1e-10
