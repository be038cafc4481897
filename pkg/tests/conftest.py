import numpy as np
import pytest

from rieszreg import AppendixDgp, DiscreteDgp, simulate


@pytest.fixture(scope="session")
def appendix_dgp():
    return AppendixDgp()


@pytest.fixture(scope="session")
def discrete_dgp():
    return DiscreteDgp()


@pytest.fixture(scope="session")
def appendix_data(appendix_dgp):
    return simulate(appendix_dgp, 2000, 42)


@pytest.fixture(scope="session")
def discrete_data(discrete_dgp):
    return simulate(discrete_dgp, 4000, 42)


@pytest.fixture(scope="session")
def big_appendix_data(appendix_dgp):
    return simulate(appendix_dgp, 1_000_000, 7)


@pytest.fixture(scope="session")
def big_discrete_data(discrete_dgp):
    return simulate(discrete_dgp, 1_000_000, 7)


def mc_se(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))
