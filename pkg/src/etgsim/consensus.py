"""Dynamic average consensus.

Each node keeps ``estimate = local_input + integrator`` and integrates the
weighted disagreement with its neighbours.  ``global_step`` is the stacked
form of the same dynamics and serves as an independent check on
``node_step``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .graph import CommGraph, GraphMatrices, has_spanning_tree, is_balanced, laplacian


@dataclass(frozen=True)
class ConsensusNodeState:
    local_input: float
    integrator: float = 0.0

    @property
    def estimate(self) -> float:
        return self.local_input + self.integrator


def node_step(
    state: ConsensusNodeState,
    neighbor_estimates: Sequence[tuple[float, float]],
    dt: float,
    own_view: float | None = None,
) -> ConsensusNodeState:
    """Advance one node by explicit Euler.

    ``neighbor_estimates`` holds ``(a_ij, xbar_j)`` pairs.  ``own_view`` is the
    value of this node's estimate to difference against; by default the
    node's current estimate.  The simulator passes the copy of its own
    published value so that every node differences against the same numbers
    its neighbours see, which keeps the network sum of integrators constant.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    xi = state.estimate if own_view is None else own_view
    drive = sum(w * (xj - xi) for w, xj in neighbor_estimates)
    return replace(state, integrator=state.integrator + dt * drive)


def with_input(state: ConsensusNodeState, local_input: float) -> ConsensusNodeState:
    return replace(state, local_input=local_input)


@dataclass(frozen=True)
class ConsensusSystem:
    matrices: GraphMatrices
    estimates: np.ndarray

    def __post_init__(self) -> None:
        n = self.matrices.laplacian.shape[0]
        if np.shape(self.estimates) != (n,):
            raise ValueError(f"estimates must have shape ({n},), got {np.shape(self.estimates)}")

    @property
    def n(self) -> int:
        return self.matrices.laplacian.shape[0]

    @classmethod
    def from_graph(cls, g: CommGraph, initial: np.ndarray) -> "ConsensusSystem":
        return cls(laplacian(g), np.asarray(initial, dtype=float).copy())


def global_step(sys: ConsensusSystem, inputs: np.ndarray, input_rates: np.ndarray, dt: float) -> ConsensusSystem:
    """``xbar <- xbar + dt * (xdot - L xbar)``.

    ``inputs`` is accepted for interface symmetry with the node form; the
    stacked dynamics only see the input rates.
    """
    inputs = np.asarray(inputs, dtype=float)
    rates = np.asarray(input_rates, dtype=float)
    if inputs.shape != (sys.n,) or rates.shape != (sys.n,):
        raise ValueError(f"inputs and rates must have shape ({sys.n},)")
    xbar = sys.estimates + dt * (rates - sys.matrices.laplacian @ sys.estimates)
    return ConsensusSystem(sys.matrices, xbar)


def transfer_matrix(sys: ConsensusSystem, s: float) -> np.ndarray:
    """Evaluate ``s (sI + L)^-1``."""
    n = sys.n
    return s * np.linalg.solve(s * np.eye(n) + sys.matrices.laplacian, np.eye(n))


def steady_state_gain(sys: ConsensusSystem, g: CommGraph, s: float = 1e-6, tol: float = 1e-6) -> np.ndarray:
    """Return the averaging matrix after checking it equals the DC gain.

    Raises
    ------
    ValueError
        If the graph is not balanced or lacks a spanning tree, or the
        transfer matrix at small ``s`` disagrees with the averaging matrix.
    """
    if not (is_balanced(g) and has_spanning_tree(g)):
        raise ValueError("graph not balanced/connected")
    q = sys.matrices.averaging
    gain = transfer_matrix(sys, s)
    err = np.max(np.abs(gain - q))
    if err > tol:
        raise ValueError(f"DC gain deviates from averaging matrix by {err:.3e}")
    return q.copy()


def disagreement(estimates: np.ndarray, target: float) -> float:
    return float(np.linalg.norm(np.asarray(estimates) - target))
