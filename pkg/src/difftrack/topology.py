"""Random geometric sensor networks and cluster bookkeeping.

Nodes live in the unit square and communicate within a fixed radius.
Neighborhoods are self-inclusive: N_m always contains m, so a node's own
measurement flows through the same code path as a neighbor's. Networks are
immutable; pruning produces a new Network rather than mutating one, which
keeps concurrent trials safe and makes pruning trivially monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError

MAX_ATTEMPTS = 10_000


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Network:
    """Undirected geometric graph with self-inclusive neighborhoods."""

    positions: np.ndarray
    adjacency: np.ndarray
    neighborhoods: tuple = field(init=False, repr=False)

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64)
        adj = np.asarray(self.adjacency, dtype=bool)
        n = pos.shape[0]
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ConfigError(f"positions must be (n, 2), got {pos.shape}")
        if adj.shape != (n, n):
            raise ConfigError(f"adjacency must be ({n}, {n}), got {adj.shape}")
        if adj.diagonal().any():
            raise ConfigError("adjacency must not contain self-loops")
        if not np.array_equal(adj, adj.T):
            raise ConfigError("adjacency must be symmetric")
        object.__setattr__(self, "positions", _freeze(pos.copy()))
        object.__setattr__(self, "adjacency", _freeze(adj.copy()))
        with_self = adj | np.eye(n, dtype=bool)
        hoods = tuple(_freeze(np.flatnonzero(with_self[:, m])) for m in range(n))
        object.__setattr__(self, "neighborhoods", hoods)

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        """Degree excluding self: |N_m| - 1."""
        return self.adjacency.sum(axis=0)

    def is_connected(self) -> bool:
        n_comp, _ = connected_components(csr_matrix(self.adjacency), directed=False)
        return n_comp == 1

    def edges(self) -> np.ndarray:
        """Undirected edge list as (n_edges, 2) with node_a < node_b."""
        a, b = np.nonzero(np.triu(self.adjacency, k=1))
        return np.column_stack([a, b])


@dataclass(frozen=True)
class ClusterAssignment:
    """Partition of nodes into clusters labeled 1..s."""

    cluster_of: np.ndarray
    s: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.cluster_of, dtype=np.int64)
        if labels.ndim != 1:
            raise ConfigError("cluster_of must be a 1-d label vector")
        if self.s < 1:
            raise ConfigError(f"cluster count must be >= 1, got {self.s}")
        if labels.size and (labels.min() < 1 or labels.max() > self.s):
            raise ConfigError(f"cluster labels must lie in 1..{self.s}")
        counts = np.bincount(labels, minlength=self.s + 1)[1:]
        if (counts == 0).any():
            empty = int(np.flatnonzero(counts == 0)[0]) + 1
            raise ConfigError(f"cluster {empty} is empty")
        object.__setattr__(self, "cluster_of", _freeze(labels.copy()))

    @property
    def n_nodes(self) -> int:
        return self.cluster_of.size

    @property
    def sizes(self) -> np.ndarray:
        """Node count per cluster, index 0 holding cluster 1."""
        return np.bincount(self.cluster_of, minlength=self.s + 1)[1:]

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of == cluster)


def generate_geometric(
    n: int,
    comm_radius: float,
    min_degree: int,
    rng: np.random.Generator,
    max_attempts: int = MAX_ATTEMPTS,
) -> Network:
    """Sample a connected random geometric graph in the unit square.

    Nodes are drawn uniformly; an edge joins every pair within
    ``comm_radius``. Draws are rejected until the graph is connected and
    every node has at least ``min_degree`` neighbors (excluding itself).
    """
    if n < 2:
        raise ConfigError(f"network needs at least 2 nodes, got {n}")
    if not 0.0 < comm_radius <= np.sqrt(2.0):
        raise ConfigError(
            f"comm_radius must lie in (0, sqrt(2)], got {comm_radius}"
        )
    if min_degree > n - 1:
        raise ConfigError(
            f"min_degree {min_degree} impossible with {n} nodes"
        )
    for _ in range(max_attempts):
        pos = rng.random((n, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        adj = (dist <= comm_radius) & ~np.eye(n, dtype=bool)
        if adj.sum(axis=0).min() < min_degree:
            continue
        net = Network(positions=pos, adjacency=adj)
        if net.is_connected():
            return net
    raise ConfigError(
        f"could not draw a connected network with min degree {min_degree} "
        f"in {max_attempts} attempts; increase comm_radius ({comm_radius})"
    )


def initial_partition(
    net: Network,
    head_radius: float,
    rng: np.random.Generator,
    max_attempts: int = MAX_ATTEMPTS,
) -> ClusterAssignment:
    """Split nodes into two clusters around a random cluster head.

    A head node is drawn uniformly; nodes within ``head_radius`` of it form
    cluster 1 and the rest form cluster 2. Redraws the head until both
    clusters are non-empty.
    """
    if net.n_nodes < 2:
        raise ConfigError("partition needs at least 2 nodes")
    for _ in range(max_attempts):
        head = int(rng.integers(net.n_nodes))
        dist = np.linalg.norm(net.positions - net.positions[head], axis=1)
        labels = np.where(dist <= head_radius, 1, 2)
        if (labels == 1).any() and (labels == 2).any():
            return ClusterAssignment(cluster_of=labels, s=2)
    raise ConfigError(
        f"head ball of radius {head_radius} never split the network in "
        f"{max_attempts} attempts"
    )


def infer_clusters(c: np.ndarray, threshold: float) -> ClusterAssignment:
    """Read cluster structure out of a combination matrix.

    Two nodes belong together when either direction of their mutual weight
    reaches ``threshold``; clusters are the connected components of that
    relation. Labels are assigned in order of each component's lowest node
    index so the result is deterministic.
    """
    c = np.asarray(c, dtype=np.float64)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ConfigError(f"combination matrix must be square, got {c.shape}")
    linked = (np.maximum(c, c.T) >= threshold) & ~np.eye(n, dtype=bool)
    n_comp, raw = connected_components(csr_matrix(linked), directed=False)
    relabel = {}
    labels = np.empty(n, dtype=np.int64)
    for m in range(n):
        comp = raw[m]
        if comp not in relabel:
            relabel[comp] = len(relabel) + 1
        labels[m] = relabel[comp]
    return ClusterAssignment(cluster_of=labels, s=n_comp)


def prune_cross_links(
    net: Network,
    c_history: Sequence[np.ndarray],
    tau: float,
    window: int,
) -> Network:
    """Drop edges whose weights stayed below tau in both directions.

    An edge (n, m) is removed only when c_nm < tau AND c_mn < tau held for
    the last ``window`` consecutive weight matrices. Returns ``net``
    unchanged (same object) when nothing qualifies, including when the
    history is still shorter than the window.
    """
    if window < 1:
        raise ConfigError(f"prune window must be >= 1, got {window}")
    if len(c_history) < window:
        return net
    stack = np.stack([np.asarray(c) for c in c_history[-window:]])
    below = (stack < tau).all(axis=0)
    kill = below & below.swapaxes(0, 1) & net.adjacency
    if not kill.any():
        return net
    return Network(positions=net.positions, adjacency=net.adjacency & ~kill)
