import numpy as np
import pytest

from carleman_lab.params import ProblemParams, make_affine_field, make_smooth_field

# Small affine perturbations of the identity: mu = 1 stays admissible.
AFFINE_G2 = [[[1e-3, 2e-4], [2e-4, -5e-4]], [[3e-4, 0.0], [0.0, 6e-4]]]


def admissible_params(field, rho=1.0):
    """``mu`` half again above the admissibility threshold (and at least 1)."""
    th1, th2 = field.certified_theta1, field.certified_theta2
    mu = 1.0 + 1.5 * 33 * field.d * th1**5.5 * th2 * rho
    return ProblemParams(field.d, rho, th1, th2, mu)


def philox(seed=0):
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture
def rng():
    return philox(12345)


def field_set(d):
    """Identity plus three affine fields, the set the pointwise checks use."""
    I = np.eye(d)
    A0 = np.diag(np.linspace(1.0, 1.5, d))
    if d == 2:
        A0[0, 1] = A0[1, 0] = 0.2
    elif d == 3:
        A0[0, 2] = A0[2, 0] = 0.1
    G1 = [np.diag(np.full(d, 0.002 * (k + 1))) for k in range(d)]
    G2 = []
    for k in range(d):
        M = np.zeros((d, d))
        M[k, (k + 1) % d] = M[(k + 1) % d, k] = 0.003
        M[k, k] += 0.001
        G2.append(M)
    G3 = [np.full((d, d), 0.001 * (k + 1)) + np.diag(np.full(d, 0.0005)) for k in range(d)]
    return {
        "identity": make_affine_field(I),
        "affine_diag": make_affine_field(A0, np.array(G1)),
        "affine_offdiag": make_affine_field(I, np.array(G2)),
        "affine_full": make_affine_field(A0, np.array(G3)),
    }


def smooth_field(d):
    G = [np.eye(d) * 0.05 * (k + 1) for k in range(d)]
    return make_smooth_field(np.eye(d), np.array(G))


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
