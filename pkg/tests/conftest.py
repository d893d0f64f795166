import pytest

from tests.corpus import desk_identity, desk_n1, two_stage_scenario


@pytest.fixture(scope="session")
def identity_scenario():
    return desk_identity()


@pytest.fixture(scope="session")
def n1_scenario():
    return desk_n1()


@pytest.fixture(scope="session")
def two_stage():
    return two_stage_scenario(seed=1)
