"""Averaged electrical model of the DC microgrid.

Each energy-storage converter is an outer voltage PI loop around a current
loop with one switching-period lag and an output capacitor, so the bus
voltage follows its reference through a third-order closed loop.  Lines
are resistive; PV, rectifier and constant-power loads are current sources
``p / v`` evaluated at the present bus voltage.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .controller import ControllerGains

log = logging.getLogger(__name__)

J_PER_KWH = 3.6e6
ISLANDED = "islanded"
LOAD_BALANCING = "load_balancing"
ES_CHARGING = "es_charging"
RECTIFIER_MODES = (ISLANDED, LOAD_BALANCING, ES_CHARGING)


class ProtectionTrip(RuntimeError):
    """A bus voltage collapsed below the protection threshold."""


@dataclass(frozen=True)
class BusSpec:
    id: int
    battery_capacity: float  # kWh
    load_power: float  # kW at 100 % load
    has_pv: bool = False
    has_rectifier: bool = False
    initial_energy: float = 0.5

    def __post_init__(self) -> None:
        if self.battery_capacity <= 0:
            raise ValueError(f"bus {self.id}: battery_capacity must be positive")
        if self.load_power < 0:
            raise ValueError(f"bus {self.id}: load_power must be non-negative")
        if not 0.0 <= self.initial_energy <= 1.0:
            raise ValueError(f"bus {self.id}: initial_energy must lie in [0, 1]")


@dataclass(frozen=True)
class LineSpec:
    from_bus: int  # 1-based
    to_bus: int
    resistance: float = 0.036
    inductance: float = 7e-6

    def __post_init__(self) -> None:
        if self.resistance <= 0:
            raise ValueError(f"line {self.from_bus}-{self.to_bus}: resistance must be positive")
        if self.from_bus == self.to_bus:
            raise ValueError(f"line {self.from_bus}-{self.to_bus} connects a bus to itself")


@dataclass(frozen=True)
class ConverterModel:
    c_out: float = 2e-3
    t_s: float = 50e-6

    def __post_init__(self) -> None:
        if self.c_out <= 0 or self.t_s <= 0:
            raise ValueError("c_out and t_s must be positive")


@dataclass(frozen=True)
class PvModel:
    area: float = 500.0  # m^2
    efficiency: float = 0.16
    rated_kw: float = 80.0

    def power_kw(self, irradiance: float) -> float:
        return min(self.efficiency * self.area * max(irradiance, 0.0) / 1000.0, self.rated_kw)


@dataclass
class PlantState:
    bus_voltages: np.ndarray
    converter_inner_states: np.ndarray  # (n, 2): voltage-PI integrator, inductor current
    bus_currents: np.ndarray
    battery_energies: np.ndarray
    time: float = 0.0

    @classmethod
    def initial(cls, specs: Sequence[BusSpec], v0: float = 380.0) -> "PlantState":
        n = len(specs)
        return cls(
            bus_voltages=np.full(n, v0),
            converter_inner_states=np.zeros((n, 2)),
            bus_currents=np.zeros(n),
            battery_energies=np.array([b.initial_energy for b in specs], dtype=float),
        )


def build_admittance(lines: Sequence[LineSpec], n: int) -> np.ndarray:
    """Nodal conductance matrix (S) for 1-based bus numbers; parallel lines add."""
    y = np.zeros((n, n))
    for ln in lines:
        i, j = ln.from_bus - 1, ln.to_bus - 1
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"line {ln.from_bus}-{ln.to_bus} references a bus outside 1..{n}")
        g = 1.0 / ln.resistance
        y[i, i] += g
        y[j, j] += g
        y[i, j] -= g
        y[j, i] -= g
    return y


def converter_matrices(conv: ConverterModel, gains: ControllerGains) -> tuple[np.ndarray, np.ndarray]:
    """State-space ``(A, B)`` of the closed voltage loop.

    State ``[integrator, inductor current, bus voltage]``, input ``v_ref``.
    """
    kp, ki, c, ts = gains.p_vp, gains.p_vi, conv.c_out, conv.t_s
    a = np.array(
        [
            [0.0, 0.0, -1.0],
            [ki / ts, -1.0 / ts, -kp / ts],
            [0.0, 1.0 / c, 0.0],
        ]
    )
    b = np.array([1.0, kp / ts, 0.0])
    return a, b


@lru_cache(maxsize=64)
def _converter_zoh(conv: ConverterModel, gains: ControllerGains, dt: float) -> tuple[np.ndarray, np.ndarray]:
    a, b = converter_matrices(conv, gains)
    phi, gam = zoh(a, b[:, None], dt)
    return phi, gam[:, 0]


def zoh(a: np.ndarray, b: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via one augmented exponential."""
    n, m = b.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a
    aug[:n, n:] = b
    e = expm(aug * dt)
    return e[:n, :n], e[:n, n:]


def converter_step(
    conv: ConverterModel,
    gains: ControllerGains,
    inner_state: np.ndarray,
    v_ref: float,
    v_i: float,
    dt: float,
) -> tuple[float, np.ndarray]:
    """Advance one converter by ``dt`` with ``v_ref`` held; exact for the linear loop."""
    phi, gam = _converter_zoh(conv, gains, float(dt))
    x = np.array([inner_state[0], inner_state[1], v_i])
    x = phi @ x + gam * v_ref
    return float(x[2]), x[:2].copy()


def rectifier_power(mode: str, total_load_kw: float = 0.0, total_pv_kw: float = 0.0, p_max_kw: float = 150.0) -> float:
    """Rectifier output (kW) for the given operating mode."""
    if mode == ISLANDED:
        return 0.0
    if mode == LOAD_BALANCING:
        return min(max(total_load_kw - total_pv_kw, 0.0), p_max_kw)
    if mode == ES_CHARGING:
        return p_max_kw
    raise ValueError(f"unknown rectifier mode {mode!r}")


def injections(
    v: np.ndarray,
    specs: Sequence[BusSpec],
    irradiance: float,
    rectifier_mode: str,
    load_fraction: float = 1.0,
    pv: PvModel = PvModel(),
    rectifier_max_kw: float = 150.0,
    v_trip: float = 190.0,
) -> np.ndarray:
    """Net current (A) injected at each bus by PV, rectifier and loads."""
    v = np.asarray(v, dtype=float)
    if np.any(v < v_trip):
        bad = int(np.argmin(v))
        raise ProtectionTrip(f"bus {specs[bad].id} voltage {v[bad]:.2f} V below trip level {v_trip:.1f} V")
    loads = np.array([b.load_power for b in specs]) * load_fraction
    p_pv_total = pv.power_kw(irradiance) * sum(1 for b in specs if b.has_pv)
    p_rect = rectifier_power(rectifier_mode, loads.sum(), p_pv_total, rectifier_max_kw)
    n_rect = max(1, sum(1 for b in specs if b.has_rectifier))
    p = -loads
    for k, b in enumerate(specs):
        if b.has_pv:
            p[k] += pv.power_kw(irradiance)
        if b.has_rectifier:
            p[k] += p_rect / n_rect
    return p * 1000.0 / v


def battery_step(e: float, v_i: float, i_i: float, e_max: float, dt: float) -> float:
    """Per-unit energy after ``dt`` of output current ``i_i``; clamped to [0, 1]."""
    e_new = e - dt * v_i * i_i / (e_max * J_PER_KWH)
    if e_new < 0.0 or e_new > 1.0:
        log.info("battery clamp at %.3f p.u. (capacity %.1f kWh)", e_new, e_max)
    return min(max(e_new, 0.0), 1.0)


def es_currents(y: np.ndarray, v: np.ndarray, inj: np.ndarray) -> np.ndarray:
    """Storage output currents that close the nodal balance ``Y v = i_es + inj``."""
    return y @ v - inj


def plant_step(
    state: PlantState,
    specs: Sequence[BusSpec],
    y: np.ndarray,
    v_refs: np.ndarray,
    irradiance: float,
    rectifier_mode: str,
    dt: float,
    gains: Sequence[ControllerGains] | ControllerGains = ControllerGains(),
    conv: ConverterModel = ConverterModel(),
    load_fraction: float = 1.0,
    pv: PvModel = PvModel(),
) -> PlantState:
    """Advance converters with held references, then solve currents and energies."""
    n = len(specs)
    if isinstance(gains, ControllerGains):
        gains = [gains] * n
    v = state.bus_voltages.copy()
    inner = state.converter_inner_states.copy()
    for k in range(n):
        v[k], inner[k] = converter_step(conv, gains[k], inner[k], v_refs[k], state.bus_voltages[k], dt)
    inj = injections(v, specs, irradiance, rectifier_mode, load_fraction, pv)
    i_es = es_currents(y, v, inj)
    e = np.array(
        [battery_step(state.battery_energies[k], v[k], i_es[k], specs[k].battery_capacity, dt) for k in range(n)]
    )
    return PlantState(v, inner, i_es, e, state.time + dt)


def power_audit(y: np.ndarray, v: np.ndarray, i_es: np.ndarray, inj: np.ndarray) -> float:
    """Relative residual of ``storage + sources = loads + line losses``.

    ``inj`` is the net injected current; sources and loads are split by sign.
    """
    p_es = float(v @ i_es)
    p_inj = v * inj
    gen = p_inj[p_inj > 0].sum() + max(p_es, 0.0)
    use = -p_inj[p_inj < 0].sum() + max(-p_es, 0.0)
    losses = float(v @ y @ v)
    scale = max(gen, use + losses, 1e-9)
    return abs(gen - use - losses) / scale


@dataclass
class CoupledStepper:
    """Exact one-step map of the fast droop/converter/network subsystem.

    Per bus the state is ``[s, integrator, inductor current, v]`` where ``s``
    is the droop low-pass output (``v* = v_mg - s``).  The local part of the
    average-voltage proportional term sees the live bus voltage, so it sits
    inside this map; everything slower enters through the held input ``b``::

        s' = w_c (r (Y v)_i + r p_vbar_p v_i - s + b_i)
        b_i = -r (inj_i + u_e + p_vbar_p (v_mg - xi_v) + p_vbar_i I1 + p_vbar_ii I2)

    Forward Euler on ``s`` at 1 ms is unstable for the case-study network
    (loop gain ``r * Y`` reaches ~70), hence the exact discretization.
    """

    y: np.ndarray
    gains: Sequence[ControllerGains]
    conv: ConverterModel
    dt: float
    phi: np.ndarray = field(init=False)
    gamma: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        a, b = self.continuous()
        self.phi, self.gamma = zoh(a, b, self.dt)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def continuous(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        a = np.zeros((4 * n, 4 * n))
        b = np.zeros((4 * n, n + 1))
        for i, g in enumerate(self.gains):
            s, x, il, v = 4 * i, 4 * i + 1, 4 * i + 2, 4 * i + 3
            w, r = g.omega_c, g.r_i
            a[s, s] = -w
            for j in range(n):
                a[s, 4 * j + 3] += w * r * self.y[i, j]
            a[s, v] += w * r * g.p_vbar_p
            b[s, i] = w
            # v* - v = v_mg - s - v
            a[x, s] = -1.0
            a[x, v] = -1.0
            b[x, n] = 1.0
            ts = self.conv.t_s
            a[il, s] = -g.p_vp / ts
            a[il, v] = -g.p_vp / ts
            a[il, x] = g.p_vi / ts
            a[il, il] = -1.0 / ts
            b[il, n] = g.p_vp / ts
            a[v, il] = 1.0 / self.conv.c_out
        return a, b

    def held_input(self, inj, u_e, xi_v, i1, i2) -> np.ndarray:
        out = np.empty(self.n + 1)
        for i, g in enumerate(self.gains):
            out[i] = -g.r_i * (
                inj[i] + u_e[i] + g.p_vbar_p * (g.v_mg - xi_v[i]) + g.p_vbar_i * i1[i] + g.p_vbar_ii * i2[i]
            )
        out[self.n] = self.gains[0].v_mg
        return out

    def initial_state(self, v0: np.ndarray) -> np.ndarray:
        z = np.zeros(4 * self.n)
        z[3::4] = v0
        return z

    def step(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.phi @ z + self.gamma @ w
