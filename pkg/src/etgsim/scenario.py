"""Simulation orchestrator for the case-study timeline.

Step ordering, fixed for every mode::

    sense -> send-on-delta / periodic publish -> drain -> estimator tick
          -> control -> plant

The per-step numerics run in a compiled kernel (``_kernel.advance``) that
pauses whenever a step needs the broker or the estimators.  Broker clocks
are integer step counts so that delays land on exact steps.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernel as K
from .config import ConfigError, ScenarioConfig, load_config, preset_dict
from .plant import ES_CHARGING, ISLANDED, LOAD_BALANCING, CoupledStepper, ProtectionTrip, build_admittance
from .pubsub import Broker, comms_energy, energy_topic, voltage_topic
from .sod_kalman import SodKalmanFilter

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "SimResult",
    "load_config",
    "preset_dict",
    "run",
    "run_pair",
]

_MODE_CODES = {ISLANDED: 0, LOAD_BALANCING: 1, ES_CHARGING: 2}
TRIP_FRACTION = 0.5


@dataclass
class SimResult:
    """Decimated series and accounting of one run.

    Series have shape ``(rows, n)`` with ``rows = ceil(n_steps / decimation)``;
    row ``r`` is the state at the start of step ``r * decimation``.  ``events`` holds the
    cumulative transmissions per bus up to and including that step.
    """

    config: ScenarioConfig
    times: np.ndarray
    voltages: np.ndarray
    energies: np.ndarray
    powers: np.ndarray
    u_e: np.ndarray
    u_vbar: np.ndarray
    events: np.ndarray
    publish_counts: np.ndarray
    topic_counts: dict[str, int]
    comms_energy_wh: float
    sod_max_excess: float
    held_mismatches: int
    wall_time: float = 0.0
    pauses: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.voltages.shape[1]

    @property
    def total_published(self) -> int:
        return int(self.publish_counts.sum())

    @property
    def mean_voltage(self) -> np.ndarray:
        return self.voltages.mean(axis=1)


def _irradiance(config: ScenarioConfig, t_s: np.ndarray) -> np.ndarray:
    knots = np.asarray(config.irradiance, dtype=float)
    return np.interp(t_s / 60.0, knots[:, 0], knots[:, 1])


def _schedule(config: ScenarioConfig, steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    starts = np.asarray(config.phase_start_steps())
    idx = np.searchsorted(starts, steps, side="right") - 1
    modes = np.array([_MODE_CODES[p.rectifier_mode] for p in config.phases], dtype=np.int64)
    fracs = np.array([p.load_fraction for p in config.phases])
    return modes[idx], fracs[idx]


def _bus_constants(config: ScenarioConfig) -> np.ndarray:
    c = np.zeros((config.n, K.N_BUS_CONST))
    for i, (b, g) in enumerate(zip(config.buses, config.gains)):
        c[i, K.C_R] = g.r_i
        c[i, K.C_PEP] = g.p_ep
        c[i, K.C_PEI] = g.p_ei
        c[i, K.C_PVP] = g.p_vbar_p
        c[i, K.C_PVI] = g.p_vbar_i
        c[i, K.C_PVII] = g.p_vbar_ii
        c[i, K.C_ULIM] = 0.0 if g.u_e_limit is None else g.u_e_limit
        c[i, K.C_CAP] = b.battery_capacity * 3.6e6
        c[i, K.C_LOAD] = b.load_power * 1000.0
        c[i, K.C_PV] = float(b.has_pv)
        c[i, K.C_RECT] = float(b.has_rectifier)
    return c


class _Controller:
    """Estimator side of one ES controller: subscriptions, held values, filter."""

    def __init__(self, config: ScenarioConfig, i: int) -> None:
        g = config.comm
        self.bus = i
        self.nodes = [i] + g.neighbors(i)
        self.weights = np.array([g.adjacency[i, j] for j in self.nodes[1:]])
        m = len(self.nodes)
        self.m = m
        self.channel = {}
        for idx, j in enumerate(self.nodes):
            self.channel[voltage_topic(j + 1)] = idx
            self.channel[energy_topic(j + 1)] = m + idx
        kc = config.kalman
        v_mg = config.gains[i].v_mg
        self.held = np.concatenate([np.full(m, np.nan), np.full(m, np.nan)])
        self.fresh: dict[int, float] = {}
        self.filter = SodKalmanFilter(
            a_mat=np.zeros((2 * m, 2 * m)),
            c_mat=np.eye(2 * m),
            q_cov=kc.q * np.eye(2 * m),
            r_cov=kc.r * np.eye(2 * m),
            period=kc.period,
            deltas=[kc.delta_voltage] * m + [kc.delta_energy] * m,
            x0=np.concatenate([np.full(m, v_mg), np.full(m, 0.5)]),
            p0=kc.p0 * np.eye(2 * m),
        )
        self.x_hat = self.filter.x_hat.copy()

    def deliver(self, topic: str, payload: float) -> None:
        ch = self.channel[topic]
        self.held[ch] = payload
        self.fresh[ch] = payload

    def drives(self) -> tuple[float, float]:
        """Consensus drives (v, e) from the held values.

        The own term uses the held copy of this bus's own publication, the
        same number its neighbours hold, so the network sum of integrators
        is conserved.
        """
        m = self.m
        hv, he = self.held[:m], self.held[m:]
        return float(self.weights @ (hv[1:] - hv[0])), float(self.weights @ (he[1:] - he[0]))

    def tick(self) -> None:
        """Run one estimator period on the values delivered since the last tick."""
        self.x_hat = self.filter.step(sorted(self.fresh.items()))
        self.fresh.clear()

    @property
    def own_voltage_estimate(self) -> float:
        return float(self.x_hat[0])


def _deliver(broker: Broker, now: int, controllers: list[_Controller], drive_v: np.ndarray,
             drive_e: np.ndarray) -> None:
    touched = set()
    for client, topic, value in broker.drain(now):
        controllers[client - 1].deliver(topic, value)
        touched.add(client - 1)
    for i in sorted(touched):
        c = controllers[i]
        if not np.isnan(c.held).any():
            drive_v[i], drive_e[i] = c.drives()


def run(config: ScenarioConfig, progress=None) -> SimResult:
    """Simulate ``config`` and return its decimated series and accounting.

    Raises
    ------
    ProtectionTrip
        When a bus voltage drops below half the reference.
    """
    t_wall = time.perf_counter()
    n = config.n
    dt = config.dt
    n_steps = config.n_steps
    dec = config.decimation
    tick_every = config.steps(config.kalman.period)
    pub_every = config.steps(config.periodic_interval)
    delay_steps = config.steps(config.delay)
    v_mg = config.gains[0].v_mg
    if any(g.v_mg != v_mg for g in config.gains):
        raise ConfigError("gains.v_mg: all buses must share one reference")

    y = build_admittance(config.lines, n)
    core = CoupledStepper(y, config.gains, config.converter, dt)
    z = core.initial_state(np.full(n, v_mg))
    phi = np.ascontiguousarray(core.phi)
    gamma = np.ascontiguousarray(core.gamma)

    bus = np.zeros((n, K.N_BUS_FIELDS))
    bus[:, K.ENERGY] = [b.initial_energy for b in config.buses]
    bus[:, K.V_HAT] = v_mg
    bus[:, K.LAST_V] = np.nan
    bus[:, K.LAST_E] = np.nan
    consts = _bus_constants(config)
    params = np.zeros(K.N_PARAMS)
    params[K.P_DT] = dt
    params[K.P_VMG] = v_mg
    params[K.P_DELTA_V] = config.kalman.delta_voltage
    params[K.P_DELTA_E] = config.kalman.delta_energy
    params[K.P_EVENT_MODE] = 1.0 if config.mode == "event" else 0.0
    params[K.P_PUBLISH_EVERY] = pub_every
    params[K.P_TICK_EVERY] = tick_every
    params[K.P_DECIMATION] = dec
    params[K.P_PV_EFF_AREA] = config.pv.area * config.pv.efficiency
    params[K.P_PV_RATED] = config.pv.rated_kw * 1000.0
    params[K.P_RECT_MAX] = config.rectifier_max_kw * 1000.0
    params[K.P_TRIP] = TRIP_FRACTION * v_mg

    rows = (n_steps + dec - 1) // dec
    rec = np.zeros((rows, 5, n))
    fired = np.zeros((n, 2), dtype=np.int64)
    diag = np.zeros(1)
    drive_v = np.zeros(n)
    drive_e = np.zeros(n)

    broker = Broker(config.energy_model)
    controllers = [_Controller(config, i) for i in range(n)]
    for c in controllers:
        for j in c.nodes:
            broker.subscribe(c.bus + 1, voltage_topic(j + 1))
            broker.subscribe(c.bus + 1, energy_topic(j + 1))
    subscribers = {j: [c for c in controllers if j in c.nodes] for j in range(n)}

    noise_rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed).spawn(2)[1])
    frame_steps: list[list[int]] = [[] for _ in range(n)]
    held_mismatches = 0
    pauses = 0
    chunk = tick_every

    k = 0
    while k < n_steps:
        c0 = k
        c1 = min(k + chunk, n_steps)
        steps = np.arange(c0, c1)
        irr = _irradiance(config, steps * dt)
        mode, frac = _schedule(config, steps)
        noise_v = noise_rng.normal(0.0, 1.0, (c1 - c0, n)) * config.sensor_noise_voltage
        noise_e = noise_rng.normal(0.0, 1.0, (c1 - c0, n)) * config.sensor_noise_energy
        resume = False
        while k < c1:
            nd = broker.next_delivery
            stop = c1 if nd is None or resume or nd <= k else min(c1, int(nd))
            k, code = K.advance(
                k, stop, resume, z, bus, consts, phi, gamma, y, drive_v, drive_e, irr, mode, frac,
                noise_v, noise_e, c0, params, fired, rec, 0, diag,
            )
            if code == K.PAUSE_NONE:
                if k < c1:
                    # A delayed delivery falls due before this step is sensed.
                    _deliver(broker, k, controllers, drive_v, drive_e)
                    continue
                break
            if code == K.PAUSE_TRIP:
                v = z[3::4]
                worst = int(np.argmin(v))
                raise ProtectionTrip(
                    f"protection trip at t={k * dt:.3f} s: bus{worst + 1} voltage {v[worst]:.2f} V "
                    f"below {params[K.P_TRIP]:.1f} V"
                )
            pauses += 1
            published = []
            for i in range(n):
                if not (fired[i, 0] or fired[i, 1]):
                    continue
                payload = {}
                if fired[i, 0]:
                    payload[voltage_topic(i + 1)] = float(bus[i, K.SENS_V])
                if fired[i, 1]:
                    payload[energy_topic(i + 1)] = float(bus[i, K.SENS_E])
                broker.publish_frame(i + 1, payload, k, delay_steps)
                frame_steps[i].append(k)
                published.append(i)
            _deliver(broker, k, controllers, drive_v, drive_e)
            if delay_steps == 0:
                # Every subscriber must now hold exactly what the sampler sent.
                for i in published:
                    for c in subscribers[i]:
                        idx = c.nodes.index(i)
                        if fired[i, 0] and c.held[idx] != bus[i, K.LAST_V]:
                            held_mismatches += 1
                        if fired[i, 1] and c.held[c.m + idx] != bus[i, K.LAST_E]:
                            held_mismatches += 1
            if k % tick_every == 0:
                for c in controllers:
                    c.tick()
                    bus[c.bus, K.V_HAT] = c.own_voltage_estimate
            resume = True
        if progress is not None:
            progress(k, n_steps)
    _deliver(broker, n_steps, controllers, drive_v, drive_e)

    sample_steps = np.arange(rows) * dec
    events = np.column_stack(
        [np.searchsorted(np.asarray(fs, dtype=np.int64), sample_steps, side="right") for fs in frame_steps]
    ) if n else np.zeros((rows, 0))
    publish_counts = np.array([len(fs) for fs in frame_steps], dtype=np.int64)

    return SimResult(
        config=config,
        times=sample_steps * dt,
        voltages=rec[:, 0, :].copy(),
        energies=rec[:, 1, :].copy(),
        powers=rec[:, 2, :].copy(),
        u_e=rec[:, 3, :].copy(),
        u_vbar=rec[:, 4, :].copy(),
        events=events.astype(np.int64),
        publish_counts=publish_counts,
        topic_counts=dict(sorted(broker.published_by_topic.items())),
        comms_energy_wh=comms_energy(broker),
        sod_max_excess=float(diag[0]) if config.mode == "event" else float("nan"),
        held_mismatches=held_mismatches,
        wall_time=time.perf_counter() - t_wall,
        pauses=pauses,
        extra={"delivered": broker.total_delivered, "in_flight_at_end": broker.in_flight},
    )


def worker_count() -> int:
    """Worker cap from ``ETGSIM_THREADS``; 0 (the default) means sequential."""
    raw = os.environ.get("ETGSIM_THREADS", "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"ETGSIM_THREADS: expected an integer, got {raw!r}") from exc
    if value < 0:
        raise ConfigError("ETGSIM_THREADS: must be non-negative")
    return value


@dataclass
class ErrorSeries:
    """Per-bus absolute differences between two runs on the shared sample grid."""

    times: np.ndarray
    voltage: np.ndarray
    energy: np.ndarray

    @property
    def max_voltage_error(self) -> float:
        return float(self.voltage.max()) if self.voltage.size else 0.0

    @property
    def max_energy_error(self) -> float:
        return float(self.energy.max()) if self.energy.size else 0.0


def error_series(a: SimResult, b: SimResult) -> ErrorSeries:
    if a.voltages.shape != b.voltages.shape or not np.array_equal(a.times, b.times):
        raise ValueError("runs are not on the same sample grid")
    return ErrorSeries(a.times.copy(), np.abs(a.voltages - b.voltages), np.abs(a.energies - b.energies))


def run_pair(config: ScenarioConfig, baseline: ScenarioConfig | None = None) -> tuple[SimResult, SimResult, ErrorSeries]:
    """Run ``config`` and a baseline with the same seed; return both and their differences.

    The baseline defaults to ``config`` in periodic mode.  With
    ``ETGSIM_THREADS`` >= 2 the two runs execute in separate processes;
    results are identical to sequential execution.
    """
    if baseline is None:
        baseline = config.with_overrides(mode="periodic")
    if worker_count() >= 2:
        with ProcessPoolExecutor(max_workers=2) as pool:
            fa = pool.submit(run, config)
            fb = pool.submit(run, baseline)
            ra, rb = fa.result(), fb.result()
    else:
        ra = run(config)
        rb = run(baseline)
    return ra, rb, error_series(ra, rb)
