"""Aggregation primitives shared by every topology.

All folds iterate clients in ascending id order so results never depend
on dict insertion order or any notion of arrival time.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError, TopologyError
from .topology import Topology

Array = np.ndarray


def weighted_average(values: dict[int, Array], weights: dict[int, float]) -> Array:
    """Weighted mean of per-client arrays keyed by 1-based client id."""
    if not values:
        raise ParameterError("values must be nonempty")
    missing = sorted(set(values) - set(weights))
    if missing:
        raise ParameterError(f"missing weights for clients {missing}")
    total = 0.0
    acc = None
    for cid in sorted(values):
        w = float(weights[cid])
        if w < 0:
            raise ParameterError(f"weight for client {cid} is negative")
        term = w * np.asarray(values[cid], dtype=np.float64)
        acc = term if acc is None else acc + term
        total += w
    if total <= 0:
        raise ParameterError("weights must sum to a positive value")
    return acc / total


def sample_clients(n_clients: int, fraction: float, rng, round_index: int) -> list[int]:
    """Deterministic without-replacement client sample for one round.

    Returns sorted 1-based ids; always at least one client.
    """
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction!r}")
    count = max(1, int(round(fraction * n_clients)))
    if count >= n_clients:
        return list(range(1, n_clients + 1))
    gen = rng.stream("client-sample", round_index)
    picked = gen.choice(n_clients, size=count, replace=False)
    return sorted(int(c) + 1 for c in picked)


def _check_mixing(w: Array) -> Array:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise TopologyError(f"mixing matrix must be square, got {w.shape}")
    if np.any(w < -1e-12):
        raise TopologyError("mixing matrix must be nonnegative")
    if not np.allclose(w, w.T, atol=1e-10):
        raise TopologyError("mixing matrix must be symmetric")
    ones = np.ones(w.shape[0])
    if not np.allclose(w @ ones, ones, atol=1e-10):
        raise TopologyError("mixing matrix rows must sum to 1")
    return w


def gossip_mix(states: Array, mixing: Array) -> Array:
    """One synchronous gossip step: row i becomes sum_j W[i,j] * state_j.

    ``states`` stacks one row per client. The network average is exactly
    preserved up to floating point because the matrix is doubly
    stochastic.
    """
    w = _check_mixing(mixing)
    arr = np.asarray(states, dtype=np.float64)
    if arr.shape[0] != w.shape[0]:
        raise ParameterError(
            f"states has {arr.shape[0]} rows but mixing matrix is {w.shape[0]}x{w.shape[0]}"
        )
    flat = arr.reshape(arr.shape[0], -1)
    return (w @ flat).reshape(arr.shape)


def tree_aggregate(
    values: dict[int, Array], weights: dict[int, float], topology: Topology
) -> tuple[Array, dict[int, Array]]:
    """Hierarchical weighted mean over a two-tier tree.

    Each relay averages its present children; the root averages relay
    results weighted by their subtree weight sums. Algebraically equal to
    the flat weighted mean over the same clients.

    Returns the root value and the per-relay partial means.
    """
    if topology.kind != "tree":
        raise TopologyError(f"tree_aggregate needs a tree topology, got {topology.kind!r}")
    if not values:
        raise ParameterError("values must be nonempty")
    per_edge: dict[int, Array] = {}
    edge_weight: dict[int, float] = {}
    for edge in range(topology.n_edges):
        members = [cid for cid in topology.edge_members(edge) if cid in values]
        if not members:
            continue
        local = {cid: values[cid] for cid in members}
        per_edge[edge] = weighted_average(local, weights)
        edge_weight[edge] = float(sum(weights[cid] for cid in members))
    root = weighted_average(per_edge, edge_weight)
    return root, per_edge
