"""Distributed secondary controller of one energy-storage bus.

The droop law is shifted by two correction currents: ``u_vbar`` regulates
the locally estimated average bus voltage, ``u_e`` balances the per-unit
energy against the estimated average.  All blocks here are advanced by
forward Euler; the simulator integrates the stiff droop filter jointly with
the converter and the network (see ``plant.CoupledStepper``).
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ControllerGains:
    r_i: float = 0.2533
    omega_c: float = 100.0
    p_vp: float = 10.0
    p_vi: float = 10.0
    p_ep: float = 5000.0
    p_ei: float = 50.0
    p_vbar_p: float = 500.0
    p_vbar_i: float = 10.0
    p_vbar_ii: float = 0.1
    v_mg: float = 380.0
    # Energy-balancing current limit (A); None disables it.
    u_e_limit: float | None = None

    def __post_init__(self) -> None:
        if self.r_i <= 0:
            raise ValueError("r_i must be positive")
        if self.omega_c <= 0:
            raise ValueError("omega_c must be positive")
        if self.v_mg <= 0:
            raise ValueError("v_mg must be positive")
        if self.u_e_limit is not None and self.u_e_limit <= 0:
            raise ValueError("u_e_limit must be positive")

    def euler_lowpass_stable(self, dt: float) -> bool:
        return abs(1.0 - dt * self.omega_c) < 1.0


@dataclass
class ControllerState:
    lowpass_state: float = 0.0
    e_integrator: float = 0.0
    vbar_integrator: float = 0.0
    vbar_double_integrator: float = 0.0
    v_integrator: float = 0.0
    last_v_ref: float = field(default=380.0)


def energy_balance_signal(state: ControllerState, gains: ControllerGains, e_i: float, e_bar_i: float, dt: float) -> float:
    """PI on ``e_i - e_bar_i``; a positive output pushes the bus to export.

    With ``gains.u_e_limit`` set, the output is clipped and the integrator
    holds while clipping is active.
    """
    err = e_i - e_bar_i
    u = gains.p_ep * err + gains.p_ei * state.e_integrator
    lim = gains.u_e_limit
    if lim is not None and abs(u) > lim:
        u = lim if u > 0 else -lim
        if u * err > 0:
            return u
    state.e_integrator += dt * err
    return u


def voltage_regulation_signal(state: ControllerState, gains: ControllerGains, v_bar_i: float, dt: float) -> float:
    err = gains.v_mg - v_bar_i
    u = gains.p_vbar_p * err + gains.p_vbar_i * state.vbar_integrator + gains.p_vbar_ii * state.vbar_double_integrator
    state.vbar_double_integrator += dt * state.vbar_integrator
    state.vbar_integrator += dt * err
    return u


def droop_reference(
    state: ControllerState, gains: ControllerGains, i_i: float, u_vbar: float, u_e: float, dt: float
) -> float:
    """``v* = v_mg - F(r (i - u_vbar - u_e))`` with F a first-order low-pass."""
    v_ref = gains.v_mg - state.lowpass_state
    drive = gains.r_i * (i_i - u_vbar - u_e)
    state.lowpass_state += dt * gains.omega_c * (drive - state.lowpass_state)
    state.last_v_ref = v_ref
    return v_ref


def current_reference(state: ControllerState, gains: ControllerGains, v_ref: float, v_i: float, dt: float) -> float:
    err = v_ref - v_i
    i_ref = gains.p_vp * err + gains.p_vi * state.v_integrator
    state.v_integrator += dt * err
    return i_ref


@dataclass(frozen=True)
class ControlOutput:
    v_ref: float
    i_ref: float
    u_vbar: float
    u_e: float


def controller_step(
    state: ControllerState,
    gains: ControllerGains,
    v_i: float,
    i_i: float,
    e_i: float,
    v_bar_i: float,
    e_bar_i: float,
    dt: float,
) -> ControlOutput:
    """One control period: energy PI, average-voltage PID, droop, voltage PI.

    ``state`` is advanced in place.
    """
    u_e = energy_balance_signal(state, gains, e_i, e_bar_i, dt)
    u_vbar = voltage_regulation_signal(state, gains, v_bar_i, dt)
    v_ref = droop_reference(state, gains, i_i, u_vbar, u_e, dt)
    i_ref = current_reference(state, gains, v_ref, v_i, dt)
    return ControlOutput(v_ref, i_ref, u_vbar, u_e)
