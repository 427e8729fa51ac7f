"""The round engine: drives any algorithm over any topology.

One round on a server topology (star or tree):

  1. the algorithm's server step (begin_round),
  2. client sampling,
  3. broadcast of the server state,
  4. local work on every sampled client, in ascending id order,
  5. shield stages on each upload (fault injection, privacy noise,
     compression),
  6. aggregation, then objective/residual bookkeeping.

Gossip and clustered topologies instead run every client locally and
exchange models peer to peer. Byte counters follow the shield's payload
sizes and the topology's hop structure; see the README for the exact
accounting rules.

The divergence guard aborts a run whose objective becomes non-finite or
crosses the configured ceiling, naming the offending round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DivergenceError
from ..shield import ShieldSpec, compress, dense_payload, dp_perturb
from .aggregate import gossip_mix, sample_clients, weighted_average
from .metrics import RoundMetrics
from .rng import Rng
from .topology import Topology, complete_mixing

Array = np.ndarray


@dataclass(frozen=True)
class UploadEntry:
    """One named array a client sends up. When ref is set, only the
    difference value - ref crosses the wire and the receiver adds ref
    back, so shields act on deltas rather than raw states."""

    value: Array
    ref: Array | None = None


@dataclass
class RunResult:
    metrics: list[RoundMetrics]
    algorithm: object
    model_trace: list | None = None

    @property
    def final_metrics(self) -> RoundMetrics:
        return self.metrics[-1]


def _entry_wire(entry) -> tuple[Array, Array | None, tuple[int, ...]]:
    value = np.asarray(entry.value, dtype=np.float64)
    ref = None if entry.ref is None else np.asarray(entry.ref, dtype=np.float64)
    flat = value.ravel() if ref is None else (value - ref).ravel()
    return flat, ref, value.shape


def _validate(instance, algorithm, topology: Topology, sample_fraction, shield_spec: ShieldSpec):
    if topology.n_clients != instance.num_clients:
        raise ConfigurationError(
            f"topology has {topology.n_clients} clients, instance has {instance.num_clients}"
        )
    if algorithm.family == "admm" and topology.kind not in ("star", "tree"):
        raise ConfigurationError("admm solvers need a coordinating server (star or tree)")
    if topology.kind in ("gossip", "clustered"):
        if algorithm.family != "first-order":
            raise ConfigurationError(f"{topology.kind} topologies run first-order solvers only")
        if sample_fraction != 1.0:
            raise ConfigurationError(f"{topology.kind} topologies need sample_fraction = 1.0")
        if not shield_spec.is_plain:
            raise ConfigurationError("shields apply to server topologies (star or tree) only")
    if not shield_spec.is_plain and algorithm.family != "first-order":
        raise ConfigurationError("shields apply to the first-order family only")
    if shield_spec.robust.rule != "none" and topology.kind != "star":
        raise ConfigurationError("robust aggregation needs a star topology")


def run_experiment(
    instance,
    algorithm,
    topology: Topology,
    rounds: int,
    rng: Rng,
    *,
    sample_fraction: float = 1.0,
    shield_spec: ShieldSpec | None = None,
    record_models: bool = False,
    divergence_limit: float = 1e12,
) -> RunResult:
    """Run a federated experiment and return its round ledger.

    Same instance, algorithm parameters, topology, rounds, and rng seed
    always produce bit-identical metrics.
    """
    shield_spec = shield_spec or ShieldSpec()
    if rounds < 0:
        raise ConfigurationError(f"rounds must be >= 0, got {rounds!r}")
    _validate(instance, algorithm, topology, sample_fraction, shield_spec)
    algorithm.setup(topology, rng)

    metrics: list[RoundMetrics] = []
    trace: list | None = [] if record_models else None
    for round_index in range(1, rounds + 1):
        if topology.kind in ("star", "tree"):
            row = _server_round(
                instance, algorithm, topology, round_index, rng, sample_fraction, shield_spec
            )
        else:
            row = _peer_round(instance, algorithm, topology, round_index, rng)
        obj = row.objective
        if not np.isfinite(obj) or abs(obj) > divergence_limit:
            raise DivergenceError(
                f"objective {obj!r} crossed the divergence guard at round {round_index}",
                round_index,
            )
        metrics.append(row)
        if trace is not None:
            trace.append(algorithm.global_model())
    return RunResult(metrics=metrics, algorithm=algorithm, model_trace=trace)


def _server_round(instance, algorithm, topology, round_index, rng, fraction, shield_spec):
    algorithm.begin_round(round_index, rng)
    sampled = sample_clients(instance.num_clients, fraction, rng, round_index)
    down = algorithm.broadcast()
    per_client_down = algorithm.broadcast_bytes_per_client

    bytes_down = len(sampled) * per_client_down
    if topology.kind == "tree":
        active_edges = {topology.edge_of[cid - 1] for cid in sampled}
        bytes_down += len(active_edges) * per_client_down

    bytes_up = 0
    received: dict[int, dict[str, Array]] = {}
    dense_up_shapes: dict[str, tuple[int, ...]] = {}
    for cid in sampled:
        entries = algorithm.client_update(cid, down, round_index, rng)
        decoded: dict[str, Array] = {}
        for name, entry in entries.items():
            flat, ref, shape = _entry_wire(entry)
            dense_up_shapes[name] = shape
            if shield_spec.byzantine.applies_to(cid):
                payload = dense_payload(flat * shield_spec.byzantine.factor)
            else:
                if shield_spec.dp.mechanism != "none" and name == "model":
                    flat = dp_perturb(flat, shield_spec.dp, rng.stream("dp-noise", round_index, cid))
                payload = compress(
                    flat,
                    shield_spec.compression,
                    rng.stream("compress", round_index, cid),
                )
            bytes_up += payload.nbytes
            recovered = payload.decompress()
            if ref is not None:
                recovered = recovered + ref.ravel()
            decoded[name] = recovered.reshape(shape)
        received[cid] = decoded

    if topology.kind == "tree":
        active_edges = {topology.edge_of[cid - 1] for cid in sampled}
        relay_bytes = sum(8 * int(np.prod(shape)) for shape in dense_up_shapes.values())
        bytes_up += len(active_edges) * relay_bytes

    algorithm.aggregate(round_index, received, sampled)
    return RoundMetrics(
        round_index=round_index,
        objective=algorithm.objective(),
        residual=algorithm.residual(),
        bytes_up=bytes_up,
        bytes_down=bytes_down,
        sampled=tuple(sampled),
    )


def _peer_round(instance, algorithm, topology, round_index, rng):
    algorithm.begin_round(round_index, rng)
    n = instance.num_clients
    model_bytes = 8 * algorithm.peer_models.shape[1]
    algorithm.decentralized_round(round_index, rng)

    if topology.kind == "gossip":
        algorithm.peer_models = gossip_mix(algorithm.peer_models, topology.mixing)
        degrees = (np.asarray(topology.mixing) > 0).sum(axis=1) - 1
        bytes_up = int(degrees.sum()) * model_bytes
        bytes_down = 0
    elif topology.hub_pattern == "hub-gossip":
        bytes_up, bytes_down = _hub_gossip_mix(algorithm, topology, model_bytes)
    else:
        bytes_up, bytes_down = _client_gossip_mix(algorithm, topology, model_bytes)

    return RoundMetrics(
        round_index=round_index,
        objective=algorithm.objective(),
        residual=algorithm.residual(),
        bytes_up=bytes_up,
        bytes_down=bytes_down,
        sampled=tuple(range(1, n + 1)),
    )


def _hub_gossip_mix(algorithm, topology, model_bytes):
    """Clients average into their hub; hubs gossip once; hubs broadcast."""
    weights = algorithm.weights
    clusters = range(topology.n_clusters)
    hub_values = []
    hub_weights = []
    for c in clusters:
        members = topology.cluster_members(c)
        local = {cid: algorithm.peer_models[cid - 1] for cid in members}
        hub_values.append(weighted_average(local, weights))
        hub_weights.append(sum(weights[cid] for cid in members))
    mixed = gossip_mix(np.stack(hub_values), complete_mixing(len(hub_values)))
    for c in clusters:
        for cid in topology.cluster_members(c):
            algorithm.peer_models[cid - 1] = mixed[c]
    n = topology.n_clients
    n_hubs = topology.n_clusters
    bytes_up = n * model_bytes + n_hubs * (n_hubs - 1) * model_bytes
    bytes_down = n * model_bytes
    return bytes_up, bytes_down


def _client_gossip_mix(algorithm, topology, model_bytes):
    """Clients gossip within their cluster; cluster representatives (the
    lowest ids) exchange through a central server."""
    weights = algorithm.weights
    gossip_transmissions = 0
    reps = []
    for c in range(topology.n_clusters):
        members = topology.cluster_members(c)
        reps.append(members[0])
        if len(members) > 1:
            idx = [cid - 1 for cid in members]
            stacked = algorithm.peer_models[idx]
            algorithm.peer_models[idx] = gossip_mix(stacked, complete_mixing(len(members)))
            gossip_transmissions += len(members) * (len(members) - 1)
    rep_models = {cid: algorithm.peer_models[cid - 1] for cid in reps}
    cluster_weights = {
        reps[c]: sum(weights[cid] for cid in topology.cluster_members(c))
        for c in range(topology.n_clusters)
    }
    center = weighted_average(rep_models, cluster_weights)
    for cid in reps:
        algorithm.peer_models[cid - 1] = center
    n_hubs = topology.n_clusters
    bytes_up = gossip_transmissions * model_bytes + n_hubs * model_bytes
    bytes_down = n_hubs * model_bytes
    return bytes_up, bytes_down
