"""Scenario configuration: YAML schema, presets and validation.

A config file is a YAML mapping.  ``preset: case10`` (or the ``preset``
argument of :func:`load_config`) loads a builtin base; keys in the file
override it, mapping sections merge key by key and lists replace whole.
Unknown keys are rejected so a typo never silently falls back to a default.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .controller import ControllerGains
from .graph import CommGraph
from .plant import RECTIFIER_MODES, BusSpec, ConverterModel, LineSpec, PvModel
from .pubsub import EnergyModel

PRESETS = ("case10",)


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending field."""


@dataclass(frozen=True)
class Phase:
    start_min: float
    rectifier_mode: str
    load_fraction: float = 1.0


@dataclass(frozen=True)
class KalmanConfig:
    delta_voltage: float = 0.1
    delta_energy: float = 0.01
    q: float = 0.1
    r: float = 1.0
    p0: float = 100.0
    period: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    buses: tuple[BusSpec, ...]
    lines: tuple[LineSpec, ...]
    comm: CommGraph
    gains: tuple[ControllerGains, ...]
    phases: tuple[Phase, ...]
    kalman: KalmanConfig = KalmanConfig()
    converter: ConverterModel = ConverterModel()
    pv: PvModel = PvModel()
    irradiance: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    rectifier_max_kw: float = 150.0
    mode: str = "event"
    periodic_interval: float = 0.1
    delay: float = 0.0
    dt: float = 1e-3
    duration: float = 7200.0
    rng_seed: int = 42
    decimation: int = 100
    sensor_noise_voltage: float = 0.0
    sensor_noise_energy: float = 0.0
    energy_model: EnergyModel = EnergyModel()
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def steps(self, seconds: float) -> int:
        return int(round(seconds / self.dt))

    def phase_start_steps(self) -> list[int]:
        return [self.steps(p.start_min * 60.0) for p in self.phases]

    def digest(self) -> str:
        """Stable hash of the effective configuration."""
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **overrides: Any) -> "ScenarioConfig":
        """Re-validate with top-level overrides (``mode``, ``delay``, ``rng_seed``, ``duration_min``...)."""
        raw = copy.deepcopy(dict(self.raw))
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return build_config(raw)


_TOP_KEYS = {
    "preset", "duration_min", "dt", "mode", "periodic_interval", "delay", "rng_seed", "decimation",
    "buses", "initial_energy", "lines", "line_defaults", "comm", "gains", "converter", "kalman",
    "sensor_noise", "pv", "rectifier", "phases", "energy_model",
}
_SECTION_KEYS = {
    "initial_energy": {"low", "high"},
    "line_defaults": {"resistance", "inductance"},
    "comm": {"topology", "edges", "matrix"},
    "gains": {
        "r_i", "omega_c", "p_vp", "p_vi", "p_ep", "p_ei", "p_vbar_p", "p_vbar_i", "p_vbar_ii", "v_mg",
        "balancing_power_kw",
    },
    "converter": {"c_out", "t_s"},
    "kalman": {"delta_voltage", "delta_energy", "q", "r", "p0", "period"},
    "sensor_noise": {"voltage", "energy"},
    "pv": {"area", "efficiency", "rated_kw", "irradiance"},
    "rectifier": {"max_kw"},
    "energy_model": {"voltage", "current", "tx_duration"},
}
_BUS_KEYS = {"id", "battery_capacity", "load_power", "has_pv", "has_rectifier", "initial_energy"}
_LINE_KEYS = {"from", "to", "resistance", "inductance"}
_PHASE_KEYS = {"start_min", "rectifier_mode", "load_fraction"}


def preset_dict(name: str) -> dict[str, Any]:
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r} (available: {', '.join(PRESETS)})")
    text = resources.files("etgsim").joinpath("presets", f"{name}.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict[str, Any], over: Mapping[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(dict(out[k]), v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path | None = None, preset: str | None = None) -> ScenarioConfig:
    """Read, merge and validate a scenario.

    ``path`` may be omitted when ``preset`` is given.  A file's own
    ``preset`` key takes effect when the argument is ``None``.
    """
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: not valid YAML: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"{p}: top level must be a mapping")
        data = dict(loaded)
    name = preset or data.get("preset")
    if name is not None:
        data = _merge(preset_dict(name), {k: v for k, v in data.items() if k != "preset"})
    return build_config(data)


def _num(d: Mapping[str, Any], key: str, where: str, default: Any = None, positive: bool = False,
         nonneg: bool = False) -> float:
    if key not in d or d[key] is None:
        if default is None:
            raise ConfigError(f"{where}{key}: required field missing")
        return float(default)
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}{key}: expected a number, got {v!r}")
    v = float(v)
    if not np.isfinite(v):
        raise ConfigError(f"{where}{key}: must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{where}{key}: must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(f"{where}{key}: must be non-negative, got {v}")
    return v


def _section(data: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    sec = data.get(name) or {}
    if not isinstance(sec, Mapping):
        raise ConfigError(f"{name}: expected a mapping")
    unknown = set(sec) - _SECTION_KEYS[name]
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}: unknown key")
    return sec


def build_config(data: Mapping[str, Any]) -> ScenarioConfig:
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    raw = {k: v for k, v in data.items() if k != "preset"}

    dt = _num(data, "dt", "", 1e-3, positive=True)
    duration = _num(data, "duration_min", "", None, positive=True) * 60.0
    n_steps = duration / dt
    if abs(n_steps - round(n_steps)) > 1e-6:
        raise ConfigError("duration_min: duration must be a whole number of dt steps")
    mode = data.get("mode", "event")
    if mode not in ("event", "periodic"):
        raise ConfigError(f"mode: expected 'event' or 'periodic', got {mode!r}")
    periodic_interval = _num(data, "periodic_interval", "", 0.1, positive=True)
    delay = _num(data, "delay", "", 0.0, nonneg=True)
    for key, val in (("periodic_interval", periodic_interval), ("delay", delay)):
        if abs(val / dt - round(val / dt)) > 1e-6:
            raise ConfigError(f"{key}: must be a whole number of dt steps")
    seed = data.get("rng_seed", 42)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"rng_seed: expected a non-negative integer, got {seed!r}")
    decimation = data.get("decimation", 100)
    if isinstance(decimation, bool) or not isinstance(decimation, int) or decimation < 1:
        raise ConfigError(f"decimation: expected a positive integer, got {decimation!r}")

    # buses
    bus_list = data.get("buses")
    if not bus_list:
        raise ConfigError("buses: required field missing")
    ie = _section(data, "initial_energy")
    lo = _num(ie, "low", "initial_energy.", 0.4)
    hi = _num(ie, "high", "initial_energy.", 0.6)
    if not 0.0 <= lo <= hi <= 1.0:
        raise ConfigError("initial_energy: need 0 <= low <= high <= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    draws = rng.uniform(lo, hi, size=len(bus_list))
    buses = []
    for k, b in enumerate(bus_list):
        where = f"buses[{k}]."
        if not isinstance(b, Mapping):
            raise ConfigError(f"buses[{k}]: expected a mapping")
        bad = set(b) - _BUS_KEYS
        if bad:
            raise ConfigError(f"{where}{sorted(bad)[0]}: unknown key")
        bid = b.get("id", k + 1)
        if bid != k + 1:
            raise ConfigError(f"{where}id: buses must be numbered 1..n in order, got {bid!r}")
        e0 = _num(b, "initial_energy", where, float(draws[k]))
        try:
            buses.append(
                BusSpec(
                    id=bid,
                    battery_capacity=_num(b, "battery_capacity", where),
                    load_power=_num(b, "load_power", where),
                    has_pv=bool(b.get("has_pv", False)),
                    has_rectifier=bool(b.get("has_rectifier", False)),
                    initial_energy=e0,
                )
            )
        except ValueError as exc:
            raise ConfigError(f"{where[:-1]}: {exc}") from exc
    n = len(buses)

    # lines
    ld = _section(data, "line_defaults")
    r_def = _num(ld, "resistance", "line_defaults.", 0.036, positive=True)
    l_def = _num(ld, "inductance", "line_defaults.", 7e-6, nonneg=True)
    lines = []
    for k, ln in enumerate(data.get("lines") or []):
        where = f"lines[{k}]."
        if not isinstance(ln, Mapping):
            raise ConfigError(f"lines[{k}]: expected a mapping")
        bad = set(ln) - _LINE_KEYS
        if bad:
            raise ConfigError(f"{where}{sorted(bad)[0]}: unknown key")
        a, b = ln.get("from"), ln.get("to")
        for key, val in (("from", a), ("to", b)):
            if not isinstance(val, int) or not 1 <= val <= n:
                raise ConfigError(f"{where}{key}: expected a bus number in 1..{n}, got {val!r}")
        try:
            lines.append(LineSpec(a, b, _num(ln, "resistance", where, r_def, positive=True),
                                  _num(ln, "inductance", where, l_def, nonneg=True)))
        except ValueError as exc:
            raise ConfigError(f"{where[:-1]}: {exc}") from exc

    comm = _build_comm(_section(data, "comm"), n)

    g = _section(data, "gains")
    defaults = ControllerGains()
    gk = {}
    for key in ("r_i", "omega_c", "p_vp", "p_vi", "p_ep", "p_ei", "p_vbar_p", "p_vbar_i", "p_vbar_ii", "v_mg"):
        gk[key] = _num(g, key, "gains.", getattr(defaults, key))
    for key in ("r_i", "omega_c", "v_mg"):
        if gk[key] <= 0:
            raise ConfigError(f"gains.{key}: must be positive, got {gk[key]}")
    bal = g.get("balancing_power_kw")
    if bal is not None:
        bal = _num(g, "balancing_power_kw", "gains.", positive=True)
        gk["u_e_limit"] = bal * 1000.0 / gk["v_mg"]
    gains = tuple(ControllerGains(**gk) for _ in range(n))

    cv = _section(data, "converter")
    converter = ConverterModel(_num(cv, "c_out", "converter.", 2e-3, positive=True),
                               _num(cv, "t_s", "converter.", 50e-6, positive=True))

    kd = _section(data, "kalman")
    kalman = KalmanConfig(
        delta_voltage=_num(kd, "delta_voltage", "kalman.", 0.1, nonneg=True),
        delta_energy=_num(kd, "delta_energy", "kalman.", 0.01, nonneg=True),
        q=_num(kd, "q", "kalman.", 0.1, nonneg=True),
        r=_num(kd, "r", "kalman.", 1.0, positive=True),
        p0=_num(kd, "p0", "kalman.", 100.0, positive=True),
        period=_num(kd, "period", "kalman.", 1.0, positive=True),
    )
    if abs(kalman.period / dt - round(kalman.period / dt)) > 1e-6:
        raise ConfigError("kalman.period: must be a whole number of dt steps")

    sn = _section(data, "sensor_noise")
    noise_v = _num(sn, "voltage", "sensor_noise.", 0.0, nonneg=True)
    noise_e = _num(sn, "energy", "sensor_noise.", 0.0, nonneg=True)

    pvd = _section(data, "pv")
    pv = PvModel(_num(pvd, "area", "pv.", 500.0, nonneg=True), _num(pvd, "efficiency", "pv.", 0.16, nonneg=True),
                 _num(pvd, "rated_kw", "pv.", 80.0, nonneg=True))
    irr = pvd.get("irradiance", [[0, 0]])
    try:
        irradiance = tuple((float(t), float(w)) for t, w in irr)
    except (TypeError, ValueError) as exc:
        raise ConfigError("pv.irradiance: expected a list of [minute, W/m^2] pairs") from exc
    if not irradiance or any(b[0] <= a[0] for a, b in zip(irradiance, irradiance[1:])):
        raise ConfigError("pv.irradiance: minutes must be strictly increasing")

    rect = _section(data, "rectifier")
    rect_max = _num(rect, "max_kw", "rectifier.", 150.0, nonneg=True)

    phase_list = data.get("phases")
    if not phase_list:
        raise ConfigError("phases: required field missing")
    phases = []
    for k, ph in enumerate(phase_list):
        where = f"phases[{k}]."
        if not isinstance(ph, Mapping):
            raise ConfigError(f"phases[{k}]: expected a mapping")
        bad = set(ph) - _PHASE_KEYS
        if bad:
            raise ConfigError(f"{where}{sorted(bad)[0]}: unknown key")
        mode_k = ph.get("rectifier_mode")
        if mode_k not in RECTIFIER_MODES:
            raise ConfigError(f"{where}rectifier_mode: expected one of {RECTIFIER_MODES}, got {mode_k!r}")
        phases.append(Phase(_num(ph, "start_min", where, nonneg=True), mode_k,
                            _num(ph, "load_fraction", where, 1.0, nonneg=True)))
    if phases[0].start_min != 0:
        raise ConfigError("phases[0].start_min: first phase must start at 0")
    for k in range(1, len(phases)):
        if phases[k].start_min <= phases[k - 1].start_min:
            raise ConfigError(f"phases[{k}].start_min: phases must be sorted by start time")
        if abs(phases[k].start_min * 60.0 / dt - round(phases[k].start_min * 60.0 / dt)) > 1e-6:
            raise ConfigError(f"phases[{k}].start_min: must fall on a dt step")

    em = _section(data, "energy_model")
    energy_model = EnergyModel(_num(em, "voltage", "energy_model.", 3.3, nonneg=True),
                               _num(em, "current", "energy_model.", 0.05, nonneg=True),
                               _num(em, "tx_duration", "energy_model.", 0.01, nonneg=True))

    return ScenarioConfig(
        buses=tuple(buses), lines=tuple(lines), comm=comm, gains=gains, phases=tuple(phases), kalman=kalman,
        converter=converter, pv=pv, irradiance=irradiance, rectifier_max_kw=rect_max, mode=mode,
        periodic_interval=periodic_interval, delay=delay, dt=dt, duration=duration, rng_seed=seed,
        decimation=decimation, sensor_noise_voltage=noise_v, sensor_noise_energy=noise_e,
        energy_model=energy_model, raw=raw,
    )


def _build_comm(sec: Mapping[str, Any], n: int) -> CommGraph:
    given = [k for k in ("topology", "edges", "matrix") if k in sec]
    if len(given) > 1:
        raise ConfigError(f"comm: give only one of topology/edges/matrix, got {given}")
    if not given or given[0] == "topology":
        topo = sec.get("topology", "ring")
        if topo != "ring":
            raise ConfigError(f"comm.topology: only 'ring' is builtin, got {topo!r}")
        return CommGraph.ring(n)
    try:
        if given[0] == "edges":
            edges = []
            for e in sec["edges"]:
                a, b = e
                edges.append((int(a) - 1, int(b) - 1))
            return CommGraph.from_edges(n, edges, bidirectional=True)
        m = np.asarray(sec["matrix"], dtype=float)
        if m.shape != (n, n):
            raise ConfigError(f"comm.matrix: expected {n}x{n}, got {m.shape}")
        return CommGraph(m)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"comm.{given[0]}: {exc}") from exc
