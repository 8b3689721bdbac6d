import pytest
from hypothesis import HealthCheck, settings

from pacbayes.datasets import dataset_from_dict, toy_dataset_dict

settings.register_profile(
    "default", deadline=None, max_examples=200,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy():
    """The separable 2-class toy problem shared by the training tests."""
    return dataset_from_dict(toy_dataset_dict(n=200, seed=0, beta=8.0))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
