"""Communication topologies for federated rounds.

Four shapes are supported:

  star       every client talks to the server directly
  tree       clients report to edge relays, relays report to the root
  gossip     no server; peers average over a fixed mixing matrix
  clustered  clusters with a hub each; either the hubs gossip with each
             other (hub-gossip) or clients gossip within their cluster
             and a server joins the clusters (client-gossip)

Mixing matrices use Metropolis weights, which are symmetric and doubly
stochastic, so one gossip step preserves the network average and
contracts disagreement by the matrix's second-largest eigenvalue
magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, TopologyError

Array = np.ndarray

TOPOLOGY_KINDS = ("star", "tree", "gossip", "clustered")
HUB_PATTERNS = ("hub-gossip", "client-gossip")


@dataclass(frozen=True)
class Topology:
    kind: str
    n_clients: int
    # tree
    edge_of: tuple[int, ...] = ()
    n_edges: int = 0
    # gossip
    mixing: Array | None = field(default=None, repr=False)
    # clustered
    clusters: tuple[int, ...] = ()
    hub_pattern: str = ""

    def edge_members(self, edge: int) -> list[int]:
        """1-based client ids attached to a tree edge relay."""
        return [cid for cid in range(1, self.n_clients + 1) if self.edge_of[cid - 1] == edge]

    def cluster_members(self, cluster: int) -> list[int]:
        return [cid for cid in range(1, self.n_clients + 1) if self.clusters[cid - 1] == cluster]

    @property
    def n_clusters(self) -> int:
        return 1 + max(self.clusters) if self.clusters else 0


def _check_n(n_clients) -> int:
    n = int(n_clients)
    if n < 1:
        raise ParameterError(f"n_clients must be >= 1, got {n_clients!r}")
    return n


def star_topology(n_clients: int) -> Topology:
    return Topology(kind="star", n_clients=_check_n(n_clients))


def tree_topology(n_clients: int, fanout: int, assignment=None) -> Topology:
    """Two-tier tree: root, edge relays, clients.

    With no explicit assignment, clients fill relays in id order with at
    most ``fanout`` clients each. An assignment must give every client
    exactly one relay and leave no relay empty.
    """
    n = _check_n(n_clients)
    if assignment is None:
        f = int(fanout)
        if f < 1:
            raise ParameterError(f"fanout must be >= 1, got {fanout!r}")
        edge_of = tuple(i // f for i in range(n))
    else:
        edge_of = tuple(int(e) for e in assignment)
        if len(edge_of) != n:
            raise TopologyError(
                f"assignment covers {len(edge_of)} clients, expected {n}; orphan clients"
            )
    n_edges = (max(edge_of) + 1) if edge_of else 0
    if min(edge_of) < 0:
        raise TopologyError("edge indices must be nonnegative")
    present = set(edge_of)
    missing = [e for e in range(n_edges) if e not in present]
    if missing:
        raise TopologyError(f"edge relays {missing} have no clients")
    return Topology(kind="tree", n_clients=n, edge_of=edge_of, n_edges=n_edges)


def metropolis_matrix(adjacency) -> Array:
    """Metropolis mixing weights for an undirected graph.

    W[i, j] = 1 / (1 + max(deg_i, deg_j)) on edges, diagonal absorbs the
    remainder. The result is symmetric, nonnegative, and doubly
    stochastic.
    """
    adj = np.asarray(adjacency, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise TopologyError(f"adjacency must be square, got shape {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise TopologyError("adjacency must be symmetric")
    if np.any((adj != 0) & (adj != 1)):
        raise TopologyError("adjacency entries must be 0 or 1")
    if np.any(np.diag(adj) != 0):
        raise TopologyError("adjacency must have a zero diagonal")
    deg = adj.sum(axis=1)
    n = adj.shape[0]
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if adj[i, j]:
                w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def _check_connected(adj: Array) -> None:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    if not seen.all():
        raise TopologyError("gossip graph must be connected")


def gossip_topology(n_clients: int, edges) -> Topology:
    """Gossip over an explicit undirected edge list of 1-based client ids."""
    n = _check_n(n_clients)
    adj = np.zeros((n, n))
    for a, b in edges:
        if not (1 <= a <= n and 1 <= b <= n) or a == b:
            raise TopologyError(f"edge ({a}, {b}) invalid for {n} clients")
        adj[a - 1, b - 1] = adj[b - 1, a - 1] = 1.0
    if n > 1:
        _check_connected(adj)
    return Topology(kind="gossip", n_clients=n, mixing=metropolis_matrix(adj))


def ring_topology(n_clients: int) -> Topology:
    n = _check_n(n_clients)
    if n < 3:
        raise ParameterError(f"a ring needs at least 3 clients, got {n}")
    edges = [(i, i % n + 1) for i in range(1, n + 1)]
    return gossip_topology(n, edges)


def clustered_topology(assignments, hub_pattern: str) -> Topology:
    """Clusters given as a cluster index per client (0-based, contiguous)."""
    clusters = tuple(int(c) for c in assignments)
    if not clusters:
        raise ParameterError("assignments must be nonempty")
    if min(clusters) < 0:
        raise TopologyError("cluster indices must be nonnegative")
    n_clusters = max(clusters) + 1
    present = set(clusters)
    missing = [c for c in range(n_clusters) if c not in present]
    if missing:
        raise TopologyError(f"clusters {missing} are empty")
    if hub_pattern not in HUB_PATTERNS:
        raise ParameterError(f"hub_pattern must be one of {HUB_PATTERNS}, got {hub_pattern!r}")
    return Topology(
        kind="clustered",
        n_clients=len(clusters),
        clusters=clusters,
        hub_pattern=hub_pattern,
    )


def complete_mixing(n: int) -> Array:
    """Metropolis matrix of the complete graph on n nodes."""
    if n == 1:
        return np.ones((1, 1))
    adj = np.ones((n, n)) - np.eye(n)
    return metropolis_matrix(adj)


def consensus_rate(mixing: Array) -> float:
    """Second-largest eigenvalue magnitude; the per-step contraction of spread."""
    eigs = np.linalg.eigvalsh(np.asarray(mixing, dtype=np.float64))
    mags = np.sort(np.abs(eigs))
    return float(mags[-2]) if mags.size > 1 else 0.0
