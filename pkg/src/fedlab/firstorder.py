"""Federated first-order solvers with pluggable acceleration.

One code path covers plain federated averaging, client momentum, and
control-variate drift correction, on smooth or composite objectives:
every local step moves against a search direction and then applies the
regularizer's proximal map (a plain gradient step when there is no
regularizer).

Acceleration state can be scoped locally (it lives on the client and is
never transmitted) or globally (it rides along with the model, is
aggregated by the server, and is re-broadcast). Control variates are
inherently global: each client tracks how its own gradients differ from
the network average and the server maintains the running mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core.aggregate import tree_aggregate, weighted_average
from .core.engine import UploadEntry
from .errors import ConfigurationError, ParameterError
from .problems import (
    ProblemInstance,
    RegSpec,
    global_objective,
    local_gradient,
    minibatch_gradient,
)
from .numkit import soft_threshold_l1
from .shield import RobustSpec, robust_aggregate

Array = np.ndarray

ACCEL_KINDS = ("none", "momentum", "control-variate")
SCOPES = ("local", "global")


@dataclass(frozen=True)
class LocalPlan:
    """Client-side schedule: steps per round, step size, minibatch size."""

    steps: int = 1
    eta: float = 0.1
    batch: int | None = None

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps!r}")
        if not np.isfinite(self.eta) or self.eta <= 0.0:
            raise ParameterError(f"eta must be > 0, got {self.eta!r}")
        if self.batch is not None and int(self.batch) < 1:
            raise ParameterError(f"batch must be >= 1 or None, got {self.batch!r}")


@dataclass(frozen=True)
class AccelState:
    """Per-client acceleration state for one round of local work."""

    kind: str = "none"
    beta: float = 0.9
    momentum: Array | None = None
    control_local: Array | None = None
    control_global: Array | None = None

    def __post_init__(self):
        if self.kind not in ACCEL_KINDS:
            raise ParameterError(f"unknown acceleration kind {self.kind!r}")
        if not 0.0 <= self.beta < 1.0:
            raise ParameterError(f"beta must lie in [0, 1), got {self.beta!r}")


def mirror_step(w, grad, eta, reg: RegSpec) -> Array:
    """One proximal descent step: move against grad, then apply the prox.

    Supports no regularizer (plain step) and l1 (soft threshold). Other
    regularizers have no vector-model solver here.
    """
    if eta <= 0.0 or not np.isfinite(eta):
        raise ParameterError(f"eta must be > 0, got {eta!r}")
    moved = np.asarray(w, dtype=np.float64) - eta * np.asarray(grad, dtype=np.float64)
    if reg.kind == "none" or reg.weight == 0.0:
        return moved
    if reg.kind == "l1":
        return soft_threshold_l1(moved, eta * reg.weight)
    raise ConfigurationError(
        f"first-order steps support 'none' and 'l1' regularizers, not {reg.kind!r}"
    )


def direction(grad, accel: AccelState) -> Array:
    """Search direction implied by the acceleration state."""
    g = np.asarray(grad, dtype=np.float64)
    if accel.kind == "none":
        return g
    if accel.kind == "momentum":
        if accel.momentum is None:
            return g
        return accel.beta * accel.momentum + g
    # control variate: remove the local drift estimate, add the global one
    out = g.copy()
    if accel.control_local is not None:
        out -= accel.control_local
    if accel.control_global is not None:
        out += accel.control_global
    return out


def accel_update(
    accel: AccelState,
    *,
    grad=None,
    local_model=None,
    broadcast_model=None,
    plan: LocalPlan | None = None,
) -> AccelState:
    """Advance acceleration state.

    momentum: buffer <- beta * buffer + grad, once per local step.
    control-variate: at the end of a round, re-estimate the local drift
    from how far the local model moved:
      c_local <- c_local - c_global + (broadcast - local) / (steps * eta).
    """
    if accel.kind == "none":
        return accel
    if accel.kind == "momentum":
        if grad is None:
            raise ParameterError("momentum update needs grad")
        g = np.asarray(grad, dtype=np.float64)
        buf = g if accel.momentum is None else accel.beta * accel.momentum + g
        return replace(accel, momentum=buf)
    if grad is not None or local_model is None or broadcast_model is None or plan is None:
        raise ParameterError(
            "control-variate update needs local_model, broadcast_model, and plan"
        )
    travel = (np.asarray(broadcast_model) - np.asarray(local_model)) / (plan.steps * plan.eta)
    c_old = 0.0 if accel.control_local is None else accel.control_local
    c_glob = 0.0 if accel.control_global is None else accel.control_global
    return replace(accel, control_local=c_old - c_glob + travel)


def local_epochs(
    instance: ProblemInstance,
    cid: int,
    start_model,
    plan: LocalPlan,
    accel: AccelState,
    reg: RegSpec,
    gen: np.random.Generator,
) -> tuple[Array, AccelState]:
    """Run one round of local proximal steps for a client.

    Minibatches walk a shuffled permutation of the local data and
    reshuffle when exhausted; batch None means full gradients. Returns
    the final local model and the advanced acceleration state (the
    control-variate refresh happens here, after the last step).
    """
    x = np.array(start_model, dtype=np.float64, copy=True)
    start = x.copy()
    size = instance.client(cid).size
    batch = None if plan.batch is None else min(int(plan.batch), size)
    order: Array | None = None
    pos = 0
    for _ in range(plan.steps):
        if batch is None:
            g = local_gradient(instance, cid, x)
        else:
            if order is None or pos + batch > size:
                order = gen.permutation(size)
                pos = 0
            g = minibatch_gradient(instance, cid, x, order[pos : pos + batch])
            pos += batch
        step_dir = direction(g, accel)
        if accel.kind == "momentum":
            accel = accel_update(accel, grad=g)
        x = mirror_step(x, step_dir, plan.eta, reg)
    if accel.kind == "control-variate":
        accel = accel_update(
            accel, local_model=x, broadcast_model=start, plan=plan
        )
    return x, accel


class FirstOrderAlgorithm:
    """Engine adapter for the first-order family."""

    family = "first-order"

    def __init__(
        self,
        instance: ProblemInstance,
        plan: LocalPlan,
        accel: str = "none",
        scope: str = "local",
        beta: float = 0.9,
        robust: RobustSpec | None = None,
    ):
        if instance.kind not in ("lasso", "quadratic"):
            raise ConfigurationError(
                f"first-order solvers handle vector problems (lasso, quadratic), "
                f"not {instance.kind!r}"
            )
        if accel not in ACCEL_KINDS:
            raise ConfigurationError(f"unknown acceleration {accel!r}")
        if scope not in SCOPES:
            raise ConfigurationError(f"unknown scope {scope!r}")
        if accel == "control-variate" and scope != "global":
            raise ConfigurationError(
                "control-variate acceleration needs scope=global (a server copy)"
            )
        self.instance = instance
        self.plan = plan
        self.accel = accel
        self.scope = scope
        self.beta = float(beta)
        self.robust = robust or RobustSpec()
        if self.robust.rule != "none" and accel != "none":
            raise ConfigurationError("robust aggregation requires accel=none")
        self.reg = instance.regularizer
        self.dim = instance.client(1).features.shape[1]
        self.weights = {cid: float(instance.client(cid).size) for cid in self._ids()}
        self.topology = None
        # server state
        self.model = np.zeros(self.dim)
        self.server_control = np.zeros(self.dim)
        self.server_momentum = np.zeros(self.dim)
        # persistent client state
        self.client_momentum: dict[int, Array] = {}
        self.client_control: dict[int, Array] = {cid: np.zeros(self.dim) for cid in self._ids()}
        # decentralized mode
        self.peer_models: Array | None = None

    def _ids(self):
        return range(1, self.instance.num_clients + 1)

    # -- lifecycle ----------------------------------------------------------

    def setup(self, topology, rng) -> None:
        self.topology = topology
        if topology.kind in ("gossip", "clustered"):
            if self.accel == "control-variate":
                raise ConfigurationError(
                    "control-variate acceleration needs a server; use star or tree"
                )
            if self.accel == "momentum" and self.scope == "global":
                raise ConfigurationError(
                    "global momentum needs a server; use scope=local on gossip topologies"
                )
            self.peer_models = np.zeros((self.instance.num_clients, self.dim))

    def begin_round(self, round_index: int, rng) -> None:
        pass

    # -- server-coordinated path ---------------------------------------------

    def broadcast(self) -> dict[str, Array]:
        down = {"model": self.model.copy()}
        if self.accel == "momentum" and self.scope == "global":
            down["momentum"] = self.server_momentum.copy()
        if self.accel == "control-variate":
            down["control"] = self.server_control.copy()
        return down

    @property
    def broadcast_bytes_per_client(self) -> int:
        return 8 * self.dim * len(self.broadcast())

    def _accel_state_for(self, cid: int, down: dict[str, Array]) -> AccelState:
        if self.accel == "none":
            return AccelState()
        if self.accel == "momentum":
            if self.scope == "global":
                buf = down["momentum"]
            else:
                buf = self.client_momentum.get(cid)
            return AccelState(kind="momentum", beta=self.beta, momentum=buf)
        return AccelState(
            kind="control-variate",
            control_local=self.client_control[cid],
            control_global=down["control"],
        )

    def client_update(self, cid: int, down: dict[str, Array], round_index: int, rng):
        gen = rng.stream("local-steps", round_index, cid)
        accel = self._accel_state_for(cid, down)
        model, accel_out = local_epochs(
            self.instance, cid, down["model"], self.plan, accel, self.reg, gen
        )
        entries = {"model": UploadEntry(value=model, ref=down["model"])}
        if self.accel == "momentum":
            if self.scope == "global":
                entries["momentum"] = UploadEntry(value=accel_out.momentum, ref=down["momentum"])
            else:
                self.client_momentum[cid] = accel_out.momentum
        elif self.accel == "control-variate":
            delta = accel_out.control_local - self.client_control[cid]
            self.client_control[cid] = accel_out.control_local
            entries["control_delta"] = UploadEntry(value=delta, ref=None)
        return entries

    def aggregate(self, round_index: int, received: dict[int, dict[str, Array]], sampled) -> None:
        models = {cid: received[cid]["model"] for cid in sampled}
        if self.robust.rule != "none":
            ordered = [models[cid] for cid in sorted(models)]
            self.model = robust_aggregate(ordered, self.robust)
        elif self.topology is not None and self.topology.kind == "tree":
            self.model, _ = tree_aggregate(models, self.weights, self.topology)
        else:
            self.model = weighted_average(models, self.weights)
        if self.accel == "momentum" and self.scope == "global":
            buffers = {cid: received[cid]["momentum"] for cid in sampled}
            if self.topology is not None and self.topology.kind == "tree":
                self.server_momentum, _ = tree_aggregate(buffers, self.weights, self.topology)
            else:
                self.server_momentum = weighted_average(buffers, self.weights)
        elif self.accel == "control-variate":
            deltas = np.stack([received[cid]["control_delta"] for cid in sorted(sampled)])
            self.server_control = self.server_control + (
                len(sampled) / self.instance.num_clients
            ) * deltas.mean(axis=0)

    # -- decentralized path ---------------------------------------------------

    def decentralized_round(self, round_index: int, rng) -> None:
        if self.peer_models is None:
            raise ConfigurationError("decentralized_round needs a gossip or clustered setup")
        for cid in self._ids():
            gen = rng.stream("local-steps", round_index, cid)
            accel = AccelState()
            if self.accel == "momentum":
                accel = AccelState(
                    kind="momentum", beta=self.beta, momentum=self.client_momentum.get(cid)
                )
            model, accel_out = local_epochs(
                self.instance, cid, self.peer_models[cid - 1], self.plan, accel, self.reg, gen
            )
            if self.accel == "momentum":
                self.client_momentum[cid] = accel_out.momentum
            self.peer_models[cid - 1] = model

    def consensus_model(self) -> Array:
        if self.peer_models is None:
            return self.model.copy()
        return self.peer_models.mean(axis=0)

    # -- metrics ---------------------------------------------------------------

    def global_model(self) -> Array:
        return self.consensus_model()

    def objective(self) -> float:
        return global_objective(self.instance, self.global_model())

    def residual(self) -> float:
        model = self.global_model()
        if self.peer_models is not None:
            spread = self.peer_models - model
            return float(np.mean(np.linalg.norm(spread, axis=1)))
        n = self.instance.num_clients
        grad = sum(local_gradient(self.instance, cid, model) for cid in self._ids()) / n
        if self.reg.kind == "none" or self.reg.weight == 0.0:
            return float(np.linalg.norm(grad))
        eta = self.plan.eta
        mapped = mirror_step(model, grad, eta, self.reg)
        return float(np.linalg.norm(model - mapped) / eta)
