"""Compiled inner loop of the simulator.

``advance`` runs sense -> control -> plant steps until a step needs the
orchestrator (a send-on-delta event, a periodic publish, an estimator tick)
or the chunk ends.  It pauses *after* sensing; the orchestrator publishes,
drains and updates estimators, then resumes the same step with
``resume=True``.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# Columns of the per-bus state array.
# V_HAT is the bus's own shared (filtered) average-voltage estimate, refreshed at ticks.
XI_V, XI_E, I1, I2, IE, ENERGY, LAST_V, LAST_E, I_ES, U_E, U_VBAR, SENS_V, SENS_E, V_HAT = range(14)
N_BUS_FIELDS = 14

# Entries of the scalar parameter vector.
(
    P_DT,
    P_VMG,
    P_DELTA_V,
    P_DELTA_E,
    P_EVENT_MODE,
    P_PUBLISH_EVERY,
    P_TICK_EVERY,
    P_DECIMATION,
    P_PV_EFF_AREA,
    P_PV_RATED,
    P_RECT_MAX,
    P_TRIP,
) = range(12)
N_PARAMS = 12

# Per-bus constants: r, p_ep, p_ei, p_vbar_p, p_vbar_i, p_vbar_ii, u_e_limit, capacity_j, load_w, has_pv, has_rect
(C_R, C_PEP, C_PEI, C_PVP, C_PVI, C_PVII, C_ULIM, C_CAP, C_LOAD, C_PV, C_RECT) = range(11)
N_BUS_CONST = 11

PAUSE_NONE = 0
PAUSE_EVENT = 1
PAUSE_TRIP = 2


@njit(cache=True)
def _net_injection(v, consts, irr, mode, frac, params, out):
    n = v.shape[0]
    pv_w = min(params[P_PV_EFF_AREA] * max(irr, 0.0), params[P_PV_RATED])
    total_load = 0.0
    n_pv = 0
    n_rect = 0
    for i in range(n):
        total_load += consts[i, C_LOAD] * frac
        if consts[i, C_PV] > 0.5:
            n_pv += 1
        if consts[i, C_RECT] > 0.5:
            n_rect += 1
    if mode == 0:
        rect = 0.0
    elif mode == 1:
        rect = min(max(total_load - pv_w * n_pv, 0.0), params[P_RECT_MAX])
    else:
        rect = params[P_RECT_MAX]
    if n_rect == 0:
        n_rect = 1
    for i in range(n):
        p = -consts[i, C_LOAD] * frac
        if consts[i, C_PV] > 0.5:
            p += pv_w
        if consts[i, C_RECT] > 0.5:
            p += rect / n_rect
        out[i] = p / v[i]


@njit(cache=True)
def advance(
    k,
    k_stop,
    resume,
    z,
    bus,
    consts,
    phi,
    gamma,
    y,
    drive_v,
    drive_e,
    irr,
    mode,
    frac,
    noise_v,
    noise_e,
    chunk_start,
    params,
    fired,
    rec,
    rec_start,
    diag,
):
    """Advance from step ``k`` toward ``k_stop``; return ``(k, pause_code)``.

    ``rec`` has shape (rows, 5, n) for voltage, energy, power (kW), u_e,
    u_vbar; row ``r`` holds step ``(rec_start + r) * decimation``.
    ``diag[0]`` tracks the worst excess of ``|sensor - last_sent|`` over delta.
    """
    n = bus.shape[0]
    dt = params[P_DT]
    vmg = params[P_VMG]
    event_mode = params[P_EVENT_MODE] > 0.5
    pub_every = int(params[P_PUBLISH_EVERY])
    tick_every = int(params[P_TICK_EVERY])
    dec = int(params[P_DECIMATION])
    v = np.empty(n)
    inj = np.empty(n)
    w = np.empty(n + 1)
    znew = np.empty(z.shape[0])
    while k < k_stop:
        c = k - chunk_start
        for i in range(n):
            v[i] = z[4 * i + 3]
        if not resume:
            for i in range(n):
                if v[i] < params[P_TRIP]:
                    return k, PAUSE_TRIP
            _net_injection(v, consts, irr[c], mode[c], frac[c], params, inj)
            any_fired = False
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += y[i, j] * v[j]
                bus[i, I_ES] = acc - inj[i]
                sv = v[i] + bus[i, XI_V] + noise_v[c, i]
                se = bus[i, ENERGY] + bus[i, XI_E] + noise_e[c, i]
                bus[i, SENS_V] = sv
                bus[i, SENS_E] = se
                fired[i, 0] = 0
                fired[i, 1] = 0
                if event_mode:
                    if np.isnan(bus[i, LAST_V]) or abs(sv - bus[i, LAST_V]) > params[P_DELTA_V]:
                        fired[i, 0] = 1
                        bus[i, LAST_V] = sv
                        any_fired = True
                    if np.isnan(bus[i, LAST_E]) or abs(se - bus[i, LAST_E]) > params[P_DELTA_E]:
                        fired[i, 1] = 1
                        bus[i, LAST_E] = se
                        any_fired = True
                    ex = max(abs(sv - bus[i, LAST_V]) - params[P_DELTA_V], abs(se - bus[i, LAST_E]) - params[P_DELTA_E])
                    if ex > diag[0]:
                        diag[0] = ex
                elif k % pub_every == 0:
                    fired[i, 0] = 1
                    fired[i, 1] = 1
                    bus[i, LAST_V] = sv
                    bus[i, LAST_E] = se
                    any_fired = True
            if any_fired or k % tick_every == 0:
                return k, PAUSE_EVENT
        resume = False
        _net_injection(v, consts, irr[c], mode[c], frac[c], params, inj)
        for i in range(n):
            xi_v = bus[i, XI_V]
            xi_e = bus[i, XI_E]
            err_e = -xi_e
            u_e = consts[i, C_PEP] * err_e + consts[i, C_PEI] * bus[i, IE]
            lim = consts[i, C_ULIM]
            integrate_e = True
            if lim > 0.0 and abs(u_e) > lim:
                u_e = lim if u_e > 0 else -lim
                if u_e * err_e > 0:
                    integrate_e = False
            err_v = vmg - v[i] - xi_v
            i1 = bus[i, I1]
            i2 = bus[i, I2]
            u_vbar = consts[i, C_PVP] * err_v + consts[i, C_PVI] * i1 + consts[i, C_PVII] * i2
            w[i] = -consts[i, C_R] * (
                inj[i] + u_e + consts[i, C_PVP] * (vmg - xi_v) + consts[i, C_PVI] * i1 + consts[i, C_PVII] * i2
            )
            bus[i, U_E] = u_e
            bus[i, U_VBAR] = u_vbar
            if k % dec == 0:
                r = k // dec - rec_start
                rec[r, 0, i] = v[i]
                rec[r, 1, i] = bus[i, ENERGY]
                rec[r, 2, i] = v[i] * bus[i, I_ES] / 1000.0
                rec[r, 3, i] = u_e
                rec[r, 4, i] = u_vbar
            # integrators
            bus[i, I2] = i2 + dt * i1
            # Integrate against the shared estimate: every controller sees the
            # same numbers, so integrator differences cannot drift apart.
            bus[i, I1] = i1 + dt * (vmg - bus[i, V_HAT])
            if integrate_e:
                bus[i, IE] += dt * err_e
            bus[i, XI_V] = xi_v + dt * drive_v[i]
            bus[i, XI_E] = xi_e + dt * drive_e[i]
            e_new = bus[i, ENERGY] - dt * v[i] * bus[i, I_ES] / consts[i, C_CAP]
            bus[i, ENERGY] = min(max(e_new, 0.0), 1.0)
        w[n] = vmg
        m = z.shape[0]
        for a in range(m):
            acc = 0.0
            for b in range(m):
                acc += phi[a, b] * z[b]
            for b in range(n + 1):
                acc += gamma[a, b] * w[b]
            znew[a] = acc
        for a in range(m):
            z[a] = znew[a]
        k += 1
    return k, PAUSE_NONE
