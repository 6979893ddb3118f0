"""Communication graph among energy-storage controllers.

Node ``i`` listens to node ``j`` when ``adjacency[i, j] > 0``.  The
spectral objects derived here (degree, Laplacian, averaging matrix)
parameterize the consensus estimator.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class CommGraph:
    """Weighted directed communication graph.

    Parameters
    ----------
    adjacency : ndarray, shape (n, n)
        Non-negative weights; ``adjacency[i, j] > 0`` iff information flows
        from ``j`` to ``i``.  The diagonal must be zero.
    """

    adjacency: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("adjacency entries must be finite")
        if np.any(a < 0):
            raise ValueError("adjacency entries must be non-negative")
        if np.any(np.diag(a) != 0):
            raise ValueError("self-loops are not allowed (diagonal must be zero)")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> list[int]:
        """Nodes whose data node ``i`` receives, in ascending order."""
        _check_index(self, i)
        return [int(j) for j in np.flatnonzero(self.adjacency[i] > 0)]

    @classmethod
    def from_edges(
        cls, n: int, edges: Iterable[tuple[int, int]], bidirectional: bool = True, weight: float = 1.0
    ) -> "CommGraph":
        """Build from 0-based ``(i, j)`` pairs (``j`` feeds ``i``)."""
        a = np.zeros((n, n))
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            a[i, j] = weight
            if bidirectional:
                a[j, i] = weight
        return cls(a)

    @classmethod
    def ring(cls, n: int) -> "CommGraph":
        """Bidirectional ring 0-1-...-(n-1)-0 with unit weights."""
        if n == 1:
            return cls(np.zeros((1, 1)))
        if n == 2:
            return cls.from_edges(2, [(0, 1)])
        return cls.from_edges(n, [(k, (k + 1) % n) for k in range(n)])


@dataclass(frozen=True)
class GraphMatrices:
    degree: np.ndarray
    laplacian: np.ndarray
    averaging: np.ndarray


def _check_index(g: CommGraph, i: int) -> None:
    if not 0 <= i < g.n:
        raise IndexError(f"node index {i} out of range for graph with {g.n} nodes")


def in_degree(g: CommGraph, i: int) -> float:
    _check_index(g, i)
    return float(g.adjacency[i].sum())


def out_degree(g: CommGraph, i: int) -> float:
    _check_index(g, i)
    return float(g.adjacency[:, i].sum())


def laplacian(g: CommGraph) -> GraphMatrices:
    """Degree matrix, Laplacian ``L = D - A`` and the all-``1/n`` averaging matrix."""
    a = g.adjacency
    d = np.diag(a.sum(axis=1))
    return GraphMatrices(degree=d, laplacian=d - a, averaging=np.full((g.n, g.n), 1.0 / g.n))


def is_balanced(g: CommGraph, tol: float = 1e-12) -> bool:
    a = g.adjacency
    return bool(np.all(np.abs(a.sum(axis=1) - a.sum(axis=0)) <= tol))


def _reachable_from(g: CommGraph, root: int) -> set[int]:
    # Edge j -> i exists when adjacency[i, j] > 0.
    out = g.adjacency.T > 0
    seen = {root}
    queue = deque([root])
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(out[j]):
            if int(i) not in seen:
                seen.add(int(i))
                queue.append(int(i))
    return seen


def has_spanning_tree(g: CommGraph) -> bool:
    """True if some root reaches every node along directed edges."""
    return any(len(_reachable_from(g, r)) == g.n for r in range(g.n))
