import numpy as np
import pytest

from pgd_lab.models import QuadraticModel, toy_model

SQRT5 = np.sqrt(5.0)
TOY_LAMBDA = (3 - SQRT5) / 2
TOY_L = (3 + SQRT5) / 2


def quadratic3d():
    H = np.array([[-2.0, -0.5, 0.3], [-0.5, -1.5, -0.4], [0.3, -0.4, -1.0]])
    return QuadraticModel(H, np.array([0.5, -1.0, 0.8]), 0.0, 1)


def random_concave_quadratic(rng, d_theta, d_x, floor=0.3):
    d = d_theta + d_x
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    ev = floor + rng.uniform(0, 2, d)
    H = -(Q * ev) @ Q.T
    return QuadraticModel(0.5 * (H + H.T), rng.standard_normal(d), float(rng.standard_normal()), d_theta)


@pytest.fixture
def toy():
    return toy_model(1.0)


@pytest.fixture
def toy_raw():
    return toy_model(1.0, normalized=False)


@pytest.fixture
def model3d():
    return quadratic3d()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
