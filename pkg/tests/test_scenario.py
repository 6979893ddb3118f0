import numpy as np
import pytest

from etgsim.config import ConfigError, build_config, load_config
from etgsim.plant import ProtectionTrip
from etgsim.scenario import _schedule, error_series, run, run_pair, worker_count

from conftest import toy_dict


def test_zero_load_equilibrium(toy_config):
    res = run(toy_config(minutes=0.5))
    np.testing.assert_allclose(res.voltages, 380.0, atol=1e-9)
    np.testing.assert_allclose(res.energies, 0.5, atol=1e-12)
    # Only the initial publish of each sampler.
    assert list(res.publish_counts) == [1, 1, 1]
    assert res.held_mismatches == 0


def test_series_shapes(toy_config):
    res = run(toy_config(minutes=0.5))
    assert res.voltages.shape == (300, 3)
    assert res.times[0] == 0.0 and res.times[-1] == pytest.approx(29.9)
    assert res.events.shape == res.voltages.shape


def test_loaded_toy_holds_average_voltage(toy_config):
    res = run(toy_config(load_kw=10.0, minutes=2.0))
    tail = res.voltages[res.times > 60.0].mean(axis=1)
    assert np.all(np.abs(tail - 380.0) < 0.1)
    assert res.sod_max_excess <= 1e-12
    assert res.held_mismatches == 0
    # Loaded buses sit below the supplying bus.
    assert res.voltages[-1, 0] >= res.voltages[-1, 1:].max() - 1e-9


def test_periodic_publish_count(toy_config):
    res = run(toy_config(minutes=0.5, mode="periodic"))
    assert list(res.publish_counts) == [300, 300, 300]
    assert res.events[-1, 0] == 300


def test_run_is_deterministic(toy_config):
    cfg = toy_config(load_kw=8.0, minutes=0.5, sensor_noise={"voltage": 0.05, "energy": 0.0})
    a = run(cfg)
    b = run(cfg)
    for name in ("voltages", "energies", "powers", "events"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_seed_changes_noise(toy_config):
    kw = dict(load_kw=8.0, minutes=0.2, sensor_noise={"voltage": 0.05, "energy": 0.0})
    a = run(toy_config(**kw))
    b = run(toy_config(rng_seed=2, **kw))
    assert not np.array_equal(a.voltages, b.voltages)


def test_phase_schedule_is_step_exact():
    cfg = load_config(preset="case10")
    starts = cfg.phase_start_steps()
    assert starts == [0, 300_000, 600_000, 2_400_000, 4_800_000]
    for s, phase in zip(starts[1:], cfg.phases[1:]):
        modes, fracs = _schedule(cfg, np.array([s - 1, s]))
        assert fracs[1] == phase.load_fraction
        prev = cfg.phases[cfg.phases.index(phase) - 1]
        assert fracs[0] == prev.load_fraction
    modes, _ = _schedule(cfg, np.array([599_999, 600_000, 2_399_999, 2_400_000, 4_799_999, 4_800_000]))
    assert list(modes) == [0, 1, 1, 2, 2, 0]


def test_delayed_messages_arrive_late(toy_config):
    kw = dict(load_kw=10.0, minutes=0.5, sensor_noise={"voltage": 0.05, "energy": 0.0})
    res0 = run(toy_config(**kw))
    res1 = run(toy_config(delay=0.1, **kw))
    assert res1.extra["in_flight_at_end"] >= 0
    assert not np.array_equal(res0.voltages, res1.voltages)
    assert res1.extra["delivered"] < res0.extra["delivered"] or res1.extra["in_flight_at_end"] > 0
    assert np.all(np.abs(res1.voltages - 380.0) < 19.0)


def test_protection_trip_reports_bus(toy_config):
    with pytest.raises(ProtectionTrip, match="bus"):
        run(toy_config(load_kw=20_000.0, minutes=0.2))


def test_run_pair_self_comparison_is_zero(toy_config):
    cfg = toy_config(load_kw=5.0, minutes=0.3)
    a, b, err = run_pair(cfg, baseline=cfg)
    assert err.max_voltage_error == 0.0 and err.max_energy_error == 0.0


def test_run_pair_defaults_to_periodic_baseline(toy_config):
    a, b, err = run_pair(toy_config(load_kw=5.0, minutes=0.3))
    assert a.config.mode == "event" and b.config.mode == "periodic"
    assert a.total_published < b.total_published
    assert err.voltage.shape == a.voltages.shape


def test_parallel_pair_matches_sequential(toy_config, monkeypatch):
    cfg = toy_config(load_kw=5.0, minutes=0.2)
    seq = run_pair(cfg)
    monkeypatch.setenv("ETGSIM_THREADS", "2")
    par = run_pair(cfg)
    assert np.array_equal(seq[0].voltages, par[0].voltages)
    assert np.array_equal(seq[1].voltages, par[1].voltages)


def test_worker_count_validation(monkeypatch):
    monkeypatch.setenv("ETGSIM_THREADS", "abc")
    with pytest.raises(ConfigError):
        worker_count()
    monkeypatch.setenv("ETGSIM_THREADS", "0")
    assert worker_count() == 0


def test_error_series_requires_same_grid(toy_config):
    a = run(toy_config(minutes=0.2))
    b = run(toy_config(minutes=0.3))
    with pytest.raises(ValueError):
        error_series(a, b)


@pytest.mark.slow
def test_case10_phase2_common_energy_level(event_run):
    # End of the load-balancing section (10-40 min).
    i = np.searchsorted(event_run.times, 2400.0) - 1
    assert np.mean(event_run.energies[i]) == pytest.approx(0.45, abs=0.05)


@pytest.mark.slow
def test_case10_event_uses_fewer_messages(event_run, periodic_run):
    assert event_run.total_published < periodic_run.total_published
