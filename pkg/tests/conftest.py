import pytest
from hypothesis import HealthCheck, settings

from voltfill.bench import FeederContext
from voltfill.cases import load_case

settings.register_profile(
    "suite", deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


@pytest.fixture(scope="session")
def net():
    """The calibrated 33-bus feeder."""
    return load_case("case33")


@pytest.fixture(scope="session")
def raw_net():
    """The unmodified 33-bus feeder."""
    return load_case("case33-raw")


@pytest.fixture(scope="session")
def ctx(net):
    """Solved feeder context shared by estimation tests."""
    return FeederContext.build(net)


@pytest.fixture(scope="session")
def sol(ctx):
    return ctx.sol
