import pytest
from hypothesis import HealthCheck, settings

from graph_decipher.graph import SbmSpec, generate_sbm, make_split

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_sbm():
    ds = generate_sbm(SbmSpec(n_per_class=12, n_classes=3, n_features=12, signal_dims_per_class=3,
                              seed=3))
    split = make_split(ds.labels, 4, 6, 10, seed=3)
    return ds, split


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
