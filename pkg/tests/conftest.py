import numpy as np
import pytest

from quasineutral.adjoint import TrackingTargets
from quasineutral.experiments import canonical_profile
from quasineutral.fem import Mesh1D, assemble
from quasineutral.state import DopingProfile


@pytest.fixture(scope="session")
def canonical200():
    mesh = Mesh1D(0.0, 1.0, 200)
    forms = assemble(mesh)
    C, n_d, p_d = canonical_profile(mesh)
    return forms, C, TrackingTargets(n_d, p_d)


@pytest.fixture(scope="session")
def canonical50():
    mesh = Mesh1D(0.0, 1.0, 50)
    forms = assemble(mesh)
    C, n_d, p_d = canonical_profile(mesh)
    return forms, C, TrackingTargets(n_d, p_d)


@pytest.fixture
def profile200(canonical200):
    forms, C, _ = canonical200
    return DopingProfile.build(forms, C, 1e-6)


def smooth_zero_mean(forms, k=3, amp=0.05):
    u = amp * np.sin(k * np.pi * forms.x) + 0.3 * amp * np.cos(2 * np.pi * forms.x)
    return u - (forms.weights @ u) / forms.measure


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
