import numpy as np
import pytest

from hjbsafe.dynamics import hovercraft_model, spacecraft_model
from hjbsafe.polyalgebra import generate_even_basis
from hjbsafe.sga import PolynomialPolicy, policy_iteration

SIGMA0 = np.array([0.312, -0.666, 0.606])

_acceptance_lines: list[str] = []


def record_acceptance(criterion: int, title: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    _acceptance_lines.append(f"[{status}] criterion {criterion}: {title} -- {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_acceptance_lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def hovercraft():
    return hovercraft_model()


@pytest.fixture(scope="session")
def hovercraft_fit(hovercraft):
    basis = generate_even_basis(2, [2])
    return policy_iteration(hovercraft, basis, PolynomialPolicy.linear([[-1.0, -1.0]]))


@pytest.fixture(scope="session")
def hovercraft_V(hovercraft_fit):
    return hovercraft_fit[0]


@pytest.fixture(scope="session")
def spacecraft():
    return spacecraft_model()


@pytest.fixture(scope="session")
def spacecraft_u0():
    K = np.hstack([-np.eye(3), -3.0 * np.eye(3)])
    return PolynomialPolicy.linear(K)


@pytest.fixture(scope="session")
def spacecraft_fit(spacecraft, spacecraft_u0):
    basis = generate_even_basis(6, [2, 4])
    return policy_iteration(spacecraft, basis, spacecraft_u0, method="hybrid")


@pytest.fixture(scope="session")
def spacecraft_V(spacecraft_fit):
    return spacecraft_fit[0]


@pytest.fixture(scope="session")
def spacecraft_x0():
    x0 = np.zeros(9)
    x0[:3] = SIGMA0
    return x0


@pytest.fixture
def acceptance():
    return record_acceptance
