import numpy as np
import pytest
import yaml

from etgsim.config import ConfigError, build_config, load_config, preset_dict


def _write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(data if isinstance(data, str) else yaml.safe_dump(data))
    return p


def test_empty_file_with_preset_gives_case_study(tmp_path):
    cfg = load_config(_write(tmp_path, ""), preset="case10")
    assert cfg.n == 10
    assert cfg.duration == 7200.0 and cfg.dt == 1e-3
    assert [b.battery_capacity for b in cfg.buses] == [25.0] * 7 + [12.5] * 3
    assert [p.start_min for p in cfg.phases] == [0, 5, 10, 40, 80]
    assert [p.rectifier_mode for p in cfg.phases] == [
        "islanded", "islanded", "load_balancing", "es_charging", "islanded"
    ]
    assert cfg.kalman.delta_voltage == 0.1 and cfg.kalman.delta_energy == 0.01
    assert cfg.kalman.period == 1.0 and cfg.kalman.r == 1.0
    assert cfg.gains[0].r_i == 0.2533 and cfg.gains[0].p_ep == 5000.0
    assert cfg.periodic_interval == 0.1
    assert cfg.rectifier_max_kw == 150.0
    assert cfg.comm.n == 10


def test_preset_by_name_matches_file(tmp_path):
    assert load_config(preset="case10").digest() == load_config(_write(tmp_path, ""), preset="case10").digest()


def test_preset_key_inside_file(tmp_path):
    cfg = load_config(_write(tmp_path, {"preset": "case10", "rng_seed": 7}))
    assert cfg.rng_seed == 7 and cfg.n == 10


def test_initial_energies_seeded_and_in_range():
    a = load_config(preset="case10")
    b = load_config(preset="case10")
    c = a.with_overrides(rng_seed=43)
    ea = [x.initial_energy for x in a.buses]
    assert ea == [x.initial_energy for x in b.buses]
    assert ea != [x.initial_energy for x in c.buses]
    assert all(0.33 <= e <= 0.53 for e in ea)


def test_balancing_limit_converted_to_amps():
    g = load_config(preset="case10").gains[0]
    assert g.u_e_limit == pytest.approx(30_000 / 380.0)


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"kalman": {"delta_voltage": -1}}, "kalman.delta_voltage"),
        ({"kalman": {"delta_energy": "x"}}, "kalman.delta_energy"),
        ({"kalman": {"bogus": 1}}, "kalman.bogus"),
        ({"typo_key": 1}, "typo_key"),
        ({"mode": "sometimes"}, "mode"),
        ({"dt": 0}, "dt"),
        ({"duration_min": 0.00001}, "duration_min"),
        ({"gains": {"r_i": 0}}, "gains.r_i"),
        ({"rng_seed": -3}, "rng_seed"),
        ({"comm": {"topology": "star"}}, "comm.topology"),
        ({"pv": {"irradiance": [[0, 1], [0, 2]]}}, "pv.irradiance"),
    ],
)
def test_invalid_fields_named(tmp_path, patch, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        load_config(_write(tmp_path, patch), preset="case10")


def test_missing_phases():
    data = preset_dict("case10")
    del data["phases"]
    with pytest.raises(ConfigError, match="phases"):
        build_config(data)


@pytest.mark.parametrize(
    "phases, msg",
    [
        ([{"start_min": 1, "rectifier_mode": "islanded"}], "start at 0"),
        (
            [{"start_min": 0, "rectifier_mode": "islanded"}, {"start_min": 0, "rectifier_mode": "islanded"}],
            "sorted",
        ),
        ([{"start_min": 0, "rectifier_mode": "offline"}], "rectifier_mode"),
    ],
)
def test_phase_validation(phases, msg):
    data = preset_dict("case10")
    data["phases"] = phases
    with pytest.raises(ConfigError, match=msg):
        build_config(data)


def test_unknown_bus_key():
    data = preset_dict("case10")
    data["buses"][0]["colour"] = "red"
    with pytest.raises(ConfigError, match=r"buses\[0\]\.colour"):
        build_config(data)


def test_line_to_missing_bus():
    data = preset_dict("case10")
    data["lines"].append({"from": 1, "to": 11})
    with pytest.raises(ConfigError, match="lines"):
        build_config(data)


def test_bad_yaml_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="YAML"):
        load_config(_write(tmp_path, "a: [1, 2"))
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")
    with pytest.raises(ConfigError, match="preset"):
        load_config(preset="case99")


def test_comm_edges_and_matrix():
    data = preset_dict("case10")
    data["comm"] = {"edges": [[k, k + 1] for k in range(1, 10)]}
    cfg = build_config(data)
    assert cfg.comm.neighbors(0) == [1]
    data["comm"] = {"matrix": np.ones((10, 10)) - np.eye(10)}
    data["comm"]["matrix"] = data["comm"]["matrix"].tolist()
    assert len(build_config(data).comm.neighbors(3)) == 9


def test_overrides_rebuild_and_change_digest():
    base = load_config(preset="case10")
    short = base.with_overrides(duration_min=2, mode="periodic", delay=0.1)
    assert short.n_steps == 120_000
    assert short.mode == "periodic" and short.delay == 0.1
    assert short.digest() != base.digest()
    assert base.with_overrides().digest() == base.digest()
