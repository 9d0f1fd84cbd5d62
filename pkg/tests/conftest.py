import numpy as np
import pytest

from nullgrad.model import LinearSystem


def random_controllable(seed, d=None, square_b=True):
    """Stable system with well-conditioned square B (so every control kind applies)."""
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(1, 6))
    A = rng.normal(size=(d, d))
    A -= (np.max(np.linalg.eigvals(A).real) + 0.3) * np.eye(d)
    if square_b:
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        B = Q @ np.diag(rng.uniform(0.5, 1.5, size=d))
    else:
        B = rng.normal(size=(d, 1))
    return LinearSystem(A, B, label=f"random-{seed}")


@pytest.fixture
def kolmogorov():
    return LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], label="kolmogorov")


@pytest.fixture
def ou():
    return LinearSystem([[-1.0]], [[1.0]], label="ou1d")


@pytest.fixture
def laplace():
    return LinearSystem(np.zeros((3, 3)), 0.5 * np.eye(3), label="laplace")


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
