"""Plant, sensor nodes, and the communication graph.

A scenario is an LTI plant ``dx/dt = A x + B xi`` observed by ``N`` sensor
nodes ``y_k = C_k x + D_k xi + Dbar_k eta_k`` that exchange estimates over a
directed graph.  This module holds those descriptions, computes the derived
per-node matrices used by the synthesis conditions, and validates the two
structural assumptions (balanced strongly connected graph, controllable
derived pairs).

Node indices are 1-based everywhere, matching the usual sensor-network
numbering used in scenario files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrices import symmetrize

__all__ = [
    "ModelError",
    "Plant",
    "SensorNode",
    "CommGraph",
    "DerivedNode",
    "AssumptionReport",
    "neighborhoods",
    "derive",
    "check_assumptions",
    "pad_disturbances",
]


class ModelError(ValueError):
    """Raised for inconsistent or degenerate scenario data."""


@dataclass(frozen=True)
class Plant:
    """LTI plant ``dx/dt = A x + B xi``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ModelError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ModelError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class SensorNode:
    """One sensor/estimator node: measurement matrices and its rate weight."""

    index: int
    C: np.ndarray
    D: np.ndarray
    Dbar: np.ndarray
    alpha: float

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        Dbar = np.atleast_2d(np.asarray(self.Dbar, dtype=float))
        if D.shape[0] != C.shape[0] or Dbar.shape[0] != C.shape[0]:
            raise ModelError(
                f"node {self.index}: D/Dbar row counts must match C ({C.shape[0]} rows)"
            )
        if self.alpha <= 0:
            raise ModelError(f"node {self.index}: alpha must be positive")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "Dbar", Dbar)

    @property
    def r(self):
        return self.C.shape[0]

    @property
    def s(self):
        return self.Dbar.shape[1]


@dataclass(frozen=True)
class CommGraph:
    """Directed, unweighted communication graph on nodes ``1..N``.

    An edge ``(j, k)`` means node ``k`` receives information from node ``j``.
    """

    n_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        edges = frozenset((int(j), int(k)) for j, k in self.edges)
        for j, k in edges:
            if j == k:
                raise ModelError(f"self-loop {j}->{k} not allowed")
            if not (1 <= j <= self.n_nodes and 1 <= k <= self.n_nodes):
                raise ModelError(f"edge {j}->{k} outside node range 1..{self.n_nodes}")
        object.__setattr__(self, "edges", edges)

    def _check_index(self, k):
        if not 1 <= k <= self.n_nodes:
            raise ModelError(f"node index {k} outside 1..{self.n_nodes}")

    def in_neighbors(self, k):
        """Nodes j with an edge j->k (sources node k listens to)."""
        self._check_index(k)
        return frozenset(j for j, i in self.edges if i == k)

    def out_neighbors(self, k):
        """Nodes j with an edge k->j (sinks node k talks to)."""
        self._check_index(k)
        return frozenset(i for j, i in self.edges if j == k)

    def in_degree(self, k):
        return len(self.in_neighbors(k))

    def out_degree(self, k):
        return len(self.out_neighbors(k))

    def is_balanced(self):
        return all(
            self.in_degree(k) == self.out_degree(k) for k in range(1, self.n_nodes + 1)
        )

    def is_strongly_connected(self):
        if self.n_nodes == 1:
            return True
        fwd = {k: set() for k in range(1, self.n_nodes + 1)}
        rev = {k: set() for k in range(1, self.n_nodes + 1)}
        for j, k in self.edges:
            fwd[j].add(k)
            rev[k].add(j)

        def reaches_all(adj):
            seen = {1}
            stack = [1]
            while stack:
                for nxt in adj[stack.pop()]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            return len(seen) == self.n_nodes

        return reaches_all(fwd) and reaches_all(rev)


def neighborhoods(graph, k):
    """In- and out-neighborhood of node ``k`` as a ``(sources, sinks)`` pair."""
    return graph.in_neighbors(k), graph.out_neighbors(k)


@dataclass(frozen=True)
class DerivedNode:
    """Per-node matrices derived from the plant and sensor data.

    ``E`` combines the measurement noise channels and must be positive
    definite; ``Atilde``/``Btilde`` are the shifted dynamics and stacked
    disturbance input used by the synthesis conditions; ``obs_gram`` is
    ``C.T @ inv(E) @ C``.  ``p``/``q`` are the node's in/out degrees.
    """

    index: int
    E: np.ndarray
    E_inv: np.ndarray
    Atilde: np.ndarray
    Btilde: np.ndarray
    obs_gram: np.ndarray
    p: int
    q: int
    alpha: float

    @property
    def n(self):
        return self.Atilde.shape[0]


def derive(plant, node, graph):
    """Compute a node's :class:`DerivedNode` matrices.

    Raises :class:`ModelError` when the combined measurement-noise matrix
    ``E = D D.T + Dbar Dbar.T`` is not positive definite (degenerate noise).
    """
    n, m = plant.n, plant.m
    if node.C.shape[1] != n:
        raise ModelError(f"node {node.index}: C has {node.C.shape[1]} cols, expected {n}")
    if node.D.shape[1] != m:
        raise ModelError(f"node {node.index}: D has {node.D.shape[1]} cols, expected {m}")

    E = symmetrize(node.D @ node.D.T + node.Dbar @ node.Dbar.T)
    eigs = np.linalg.eigvalsh(E)
    if eigs[0] <= 0.0:
        raise ModelError(
            f"node {node.index}: measurement noise degenerate "
            f"(E has min eigenvalue {eigs[0]:.3e}, must be positive definite)"
        )
    E_inv = symmetrize(np.linalg.inv(E))

    DtEi = node.D.T @ E_inv
    Atilde = plant.A + node.alpha * np.eye(n) - plant.B @ DtEi @ node.C
    Btilde = np.hstack(
        [plant.B @ (np.eye(m) - DtEi @ node.D), -plant.B @ DtEi @ node.Dbar]
    )
    obs_gram = symmetrize(node.C.T @ E_inv @ node.C)
    return DerivedNode(
        index=node.index,
        E=E,
        E_inv=E_inv,
        Atilde=Atilde,
        Btilde=Btilde,
        obs_gram=obs_gram,
        p=graph.in_degree(node.index),
        q=graph.out_degree(node.index),
        alpha=node.alpha,
    )


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the structural checks on a scenario."""

    connected: bool
    balanced: bool
    controllable: tuple

    @property
    def ok(self):
        return self.connected and self.balanced and all(self.controllable)

    def lines(self):
        out = [
            f"graph strongly connected: {'yes' if self.connected else 'NO'}",
            f"graph balanced (in-degree == out-degree): {'yes' if self.balanced else 'NO'}",
        ]
        for k, flag in enumerate(self.controllable, start=1):
            out.append(f"node {k} derived pair controllable: {'yes' if flag else 'NO'}")
        return out


def _controllable(Atilde, Btilde, rel_tol=1e-8):
    n = Atilde.shape[0]
    blocks = [Btilde]
    for _ in range(n - 1):
        blocks.append(Atilde @ blocks[-1])
    ctrb = np.hstack(blocks)
    sv = np.linalg.svd(ctrb, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return False
    return int(np.sum(sv > rel_tol * sv[0])) == n


def check_assumptions(plant, nodes, graph, rel_tol=1e-8):
    """Validate graph connectivity/balance and per-node controllability.

    Controllability is decided by the rank of the controllability matrix
    ``[Btilde, Atilde Btilde, ..., Atilde^(n-1) Btilde]`` with singular
    values above ``rel_tol * sigma_max`` counted as nonzero.
    """
    controllable = tuple(
        _controllable(d.Atilde, d.Btilde, rel_tol)
        for d in (derive(plant, node, graph) for node in nodes)
    )
    return AssumptionReport(
        connected=graph.is_strongly_connected(),
        balanced=graph.is_balanced(),
        controllable=controllable,
    )


def pad_disturbances(plant, nodes, eps=1e-6):
    """Append small hypothetical disturbance channels.

    Adds ``eps * I`` columns to ``B`` and each ``Dbar_k`` (with matching zero
    columns in ``D_k``), which restores controllability of the derived pairs
    when the nominal disturbance description is too thin.
    """
    n = plant.n
    plant2 = Plant(A=plant.A, B=np.hstack([plant.B, eps * np.eye(n)]))
    nodes2 = []
    for node in nodes:
        nodes2.append(
            SensorNode(
                index=node.index,
                C=node.C,
                D=np.hstack([node.D, np.zeros((node.r, n))]),
                Dbar=np.hstack([node.Dbar, eps * np.eye(node.r)]),
                alpha=node.alpha,
            )
        )
    return plant2, nodes2
