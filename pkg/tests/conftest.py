import copy

import pytest

from etgsim.config import build_config, load_config, preset_dict
from etgsim.scenario import run


def toy_dict(n=3, load_kw=0.0, minutes=0.5, mode="event", **extra):
    """Small star network with no PV; ``extra`` overrides top-level keys."""
    data = {
        "duration_min": minutes,
        "dt": 0.001,
        "mode": mode,
        "rng_seed": 1,
        "decimation": 100,
        "buses": [{"id": k + 1, "battery_capacity": 25.0, "load_power": load_kw, "initial_energy": 0.5}
                  for k in range(n)],
        "lines": [{"from": 1, "to": k} for k in range(2, n + 1)],
        "comm": {"topology": "ring"},
        "gains": {"p_vbar_ii": 0.0},
        "sensor_noise": {"voltage": 0.0, "energy": 0.0},
        "pv": {"irradiance": [[0, 0.0]]},
        "phases": [{"start_min": 0, "rectifier_mode": "islanded", "load_fraction": 1.0}],
    }
    data.update(copy.deepcopy(extra))
    return data


@pytest.fixture
def toy_config():
    def make(**kw):
        return build_config(toy_dict(**kw))

    return make


_CACHE = {}


def _cached(key, make):
    if key not in _CACHE:
        _CACHE[key] = make()
    return _CACHE[key]


@pytest.fixture(scope="session")
def case10():
    return load_config(preset="case10")


@pytest.fixture(scope="session")
def event_run(case10):
    return _cached("event", lambda: run(case10))


@pytest.fixture(scope="session")
def periodic_run(case10):
    return _cached("periodic", lambda: run(case10.with_overrides(mode="periodic")))


@pytest.fixture(scope="session")
def delayed_run(case10):
    return _cached("delay", lambda: run(case10.with_overrides(delay=0.1)))


@pytest.fixture(scope="session")
def event_rerun(case10):
    return _cached("event2", lambda: run(load_config(preset="case10")))


__all__ = ["toy_dict", "preset_dict"]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
