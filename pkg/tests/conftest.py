import pytest
from hypothesis import HealthCheck, settings

from dspscale import Runtime

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rt():
    runtime = Runtime()
    runtime.node_archetype("item")
    runtime.walker_archetype("w", {})
    return runtime


def chain(rt, length, archetype="item"):
    """Nodes n_0 -> n_1 -> ... created in order; returns their ids."""
    ids = [rt.create_node(archetype, {"i": i}) for i in range(length)]
    for a, b in zip(ids, ids[1:]):
        rt.connect(a, b)
    return ids


# criterion lines from test_acceptance, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
