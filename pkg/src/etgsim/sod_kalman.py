"""Send-on-delta sampling and the Kalman filter adapted to it.

A sensor transmits only when its reading leaves the band ``last_sent +/- delta``.
The estimator runs on a fixed period and, for every channel that stayed
silent, reuses the held value as a measurement whose noise variance is
inflated by ``delta**2 / 3`` (a uniform error on ``[-delta, delta]``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

_PADE_ORDER = 6
_PADE_COEFFS = [
    math.factorial(2 * _PADE_ORDER - k)
    * math.factorial(_PADE_ORDER)
    / (math.factorial(2 * _PADE_ORDER) * math.factorial(k) * math.factorial(_PADE_ORDER - k))
    for k in range(_PADE_ORDER + 1)
]


def matrix_exponential(m: np.ndarray) -> np.ndarray:
    """exp(m) by scaling and squaring with a diagonal [6/6] Pade kernel."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix_exponential needs a square matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix_exponential needs finite entries")
    n = m.shape[0]
    norm = np.linalg.norm(m, ord=np.inf)
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    x = m / (2.0**squarings)
    eye = np.eye(n)
    num = _PADE_COEFFS[0] * eye
    den = _PADE_COEFFS[0] * eye
    power = eye
    for k in range(1, _PADE_ORDER + 1):
        power = power @ x
        term = _PADE_COEFFS[k] * power
        num = num + term
        den = den + term if k % 2 == 0 else den - term
    result = np.linalg.solve(den, num)
    for _ in range(squarings):
        result = result @ result
    return result


def discretize_process_noise(a_mat: np.ndarray, q_cov: np.ndarray, period: float) -> np.ndarray:
    """Van Loan: ``Q_d = int_0^T e^{As} Q e^{A's} ds``."""
    a_mat = np.asarray(a_mat, dtype=float)
    q_cov = np.asarray(q_cov, dtype=float)
    n = a_mat.shape[0]
    if not np.any(q_cov):
        return np.zeros((n, n))
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -a_mat
    block[:n, n:] = q_cov
    block[n:, n:] = a_mat.T
    e = matrix_exponential(block * period)
    phi_t = e[n:, n:]
    q_d = phi_t.T @ e[:n, n:]
    return 0.5 * (q_d + q_d.T)


@dataclass
class SodSampler:
    """Send-on-delta trigger for one scalar sensor."""

    delta: float
    last_sent: float | None = None
    last_sent_time: float | None = None

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise ValueError("delta must be non-negative")

    def record(self, value: float, now: float) -> None:
        self.last_sent = value
        self.last_sent_time = now


def should_send(s: SodSampler, current: float) -> bool:
    """Strictly outside the band fires; a sampler that never sent always fires."""
    if s.last_sent is None:
        return True
    return abs(current - s.last_sent) > s.delta


def inflate_noise(r_cov: np.ndarray, received_mask: Sequence[bool], deltas: Sequence[float]) -> np.ndarray:
    r_cov = np.asarray(r_cov, dtype=float)
    if np.any(np.diag(r_cov) <= 0):
        raise ValueError("measurement noise variances must be positive")
    r_bar = r_cov.copy()
    for i, (got, d) in enumerate(zip(received_mask, deltas)):
        if not got:
            r_bar[i, i] += d * d / 3.0
    return r_bar


class SodKalmanFilter:
    """Periodic Kalman filter fed by send-on-delta channels.

    Parameters
    ----------
    a_mat : ndarray, shape (n, n)
        Continuous-time system matrix.
    c_mat : ndarray, shape (p, n)
        Output matrix.
    q_cov : ndarray, shape (n, n)
        Continuous process noise intensity.
    r_cov : ndarray, shape (p, p)
        Measurement noise covariance (positive diagonal).
    period : float
        Estimator period ``T`` in seconds.
    deltas : sequence of float, length p
        Send-on-delta thresholds of the channels.
    x0, p0 : initial prior mean and covariance ``x^-(0)``, ``P^-_0``.
    """

    def __init__(self, a_mat, c_mat, q_cov, r_cov, period, deltas, x0, p0) -> None:
        self.a_mat = np.atleast_2d(np.asarray(a_mat, dtype=float))
        self.c_mat = np.atleast_2d(np.asarray(c_mat, dtype=float))
        self.q_cov = np.atleast_2d(np.asarray(q_cov, dtype=float))
        self.r_cov = np.atleast_2d(np.asarray(r_cov, dtype=float))
        n = self.a_mat.shape[0]
        p = self.c_mat.shape[0]
        if self.a_mat.shape != (n, n) or self.c_mat.shape != (p, n):
            raise ValueError("inconsistent A/C dimensions")
        if self.q_cov.shape != (n, n) or self.r_cov.shape != (p, p):
            raise ValueError("inconsistent Q/R dimensions")
        if np.any(np.diag(self.r_cov) <= 0):
            raise ValueError("R diagonal entries must be positive")
        if period <= 0:
            raise ValueError("period must be positive")
        self.period = float(period)
        self.deltas = np.asarray(deltas, dtype=float).reshape(p)
        self.phi = matrix_exponential(self.a_mat * self.period)
        self.q_d = discretize_process_noise(self.a_mat, self.q_cov, self.period)
        # Prior for the current step; measurement_update turns it into the posterior.
        self.x_prior = np.asarray(x0, dtype=float).reshape(n).copy()
        self.p_prior = np.atleast_2d(np.asarray(p0, dtype=float)).copy()
        self.x_hat = self.x_prior.copy()
        self.p_cov = self.p_prior.copy()
        self.y_last = self.c_mat @ self.x_prior
        self.gain = np.zeros((n, p))

    @property
    def n(self) -> int:
        return self.a_mat.shape[0]

    @property
    def p(self) -> int:
        return self.c_mat.shape[0]

    def measurement_update(self, received: Iterable[tuple[int, float]]) -> "SodKalmanFilter":
        mask = np.zeros(self.p, dtype=bool)
        for channel, value in received:
            if not 0 <= channel < self.p:
                raise IndexError(f"channel {channel} out of range")
            self.y_last[channel] = value
            mask[channel] = True
        r_bar = inflate_noise(self.r_cov, mask, self.deltas)
        c = self.c_mat
        pc = self.p_prior @ c.T
        s = c @ pc + r_bar
        try:
            k = np.linalg.solve(s.T, pc.T).T
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular innovation covariance") from exc
        self.gain = k
        self.x_hat = self.x_prior + k @ (self.y_last - c @ self.x_prior)
        self.p_cov = _symmetric_psd((np.eye(self.n) - k @ c) @ self.p_prior)
        return self

    def project_ahead(self) -> "SodKalmanFilter":
        self.x_prior = self.phi @ self.x_hat
        self.p_prior = _symmetric_psd(self.phi @ self.p_cov @ self.phi.T + self.q_d)
        return self

    def step(self, received: Iterable[tuple[int, float]]) -> np.ndarray:
        """One estimator period: update with ``received``, then project ahead.

        Returns the posterior estimate for this period.
        """
        self.measurement_update(received)
        x = self.x_hat.copy()
        self.project_ahead()
        return x


def _symmetric_psd(p: np.ndarray) -> np.ndarray:
    p = 0.5 * (p + p.T)
    w, v = np.linalg.eigh(p)
    if w[0] < -1e-9 * max(1.0, abs(w[-1])):
        raise FloatingPointError(f"covariance lost positive semidefiniteness (min eigenvalue {w[0]:.3e})")
    if w[0] < 0:
        p = (v * np.clip(w, 0.0, None)) @ v.T
        p = 0.5 * (p + p.T)
    return p
