import numpy as np
import pytest

from latentode import LatentDagSystem

SEC5 = dict(
    x0=[-1.0, 1.0, 1.0],
    z0=[1.0, -2.0, -1.0],
    A=[[2.0, -2.0, 1.0], [1.0, 1.0, -1.0], [1.0, 0.0, 2.0]],
    B=[[-2.0, -2.0, 2.0], [0.0, -1.0, -2.0], [-1.0, -1.0, -2.0]],
    G=[[0.0, 2.0, 1.0], [0.0, 0.0, -2.0], [0.0, 0.0, 0.0]],
)

SEC2 = dict(
    x0=[1.0, 1.0],
    z0=[1.0, 1.0],
    A=[[1.0, 0.0], [0.0, 1.0]],
    B=[[1.0, 1.0], [1.0, 1.0]],
    G=[[0.0, 1.0], [0.0, 0.0]],
)
SEC2_APRIME = [[0.0, 1.0], [1.0, 0.0]]


def random_dag_system(rng, d, p, low=-2.0, high=2.0):
    """Random system with a strictly upper triangular latent generator."""
    G = np.triu(rng.uniform(low, high, (p, p)), 1)
    return LatentDagSystem(
        x0=rng.uniform(low, high, d),
        z0=rng.uniform(low, high, p),
        A=rng.uniform(low, high, (d, d)),
        B=rng.uniform(low, high, (d, p)),
        G=G,
    )


@pytest.fixture
def sec5():
    return LatentDagSystem(**SEC5)


@pytest.fixture
def sec5_unident(sec5):
    return sec5.replace(A=np.eye(3))


@pytest.fixture
def sec2():
    return LatentDagSystem(**SEC2)


@pytest.fixture
def sec2_prime(sec2):
    return sec2.replace(A=SEC2_APRIME)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
