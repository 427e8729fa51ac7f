"""Consensus ADMM solvers for the matrix problems.

Three algorithms share the same round skeleton: clients improve a local
variable against a server anchor, fold the disagreement into a running
dual variable, and upload a combined share; the server rebuilds its
anchor from the latest share of every client (clients missed by sampling
stay represented by their cached share).

  low-rank estimation   anchor is the d x d estimate; clients take
                        linearized augmented steps
  multi-task learning   anchor is the task matrix; clients solve their
                        ridge-augmented least squares exactly
  matrix factorization  anchor is the shared item factor; clients hold a
                        rating estimate, their own user factor, and the
                        dual for the factorization constraint

Server anchor updates come in closed form where the coupling penalty
allows it and as proximal descent iterations otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.engine import UploadEntry
from .errors import ConfigurationError, ParameterError
from .numkit import row_group_shrink, svd, svt
from .problems import ProblemInstance, global_objective, local_gradient

Array = np.ndarray

_CURVATURE_FLOOR = 1e-12


@dataclass(frozen=True)
class AdmmParams:
    """Shared ADMM knobs.

    rho          augmentation weight
    local_steps  client repetitions per round (T)
    prox_iters   server proximal-descent iterations per round (I)
    factor_steps user-factor proximal steps per round (J, factorization only)
    eta_local    client linearized step; None picks 1 / (2 max_i L_i)
    eta_global   server prox-descent step; None picks 1 / (N rho), or the
                 curvature-adaptive rule for the factorization server
    """

    rho: float = 1.0
    local_steps: int = 1
    prox_iters: int = 20
    factor_steps: int = 10
    eta_local: float | None = None
    eta_global: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.rho) or self.rho <= 0.0:
            raise ParameterError(f"rho must be > 0, got {self.rho!r}")
        for name in ("local_steps", "prox_iters", "factor_steps"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        for name in ("eta_local", "eta_global"):
            val = getattr(self, name)
            if val is not None and (not np.isfinite(val) or val <= 0.0):
                raise ParameterError(f"{name} must be > 0 or None, got {val!r}")


# ---------------------------------------------------------------------------
# primitive update rules


def linearized_share_step(x, dual, anchor, grad, rho: float, eta: float) -> Array:
    """One linearized augmented step pulling a local variable toward the
    anchor: minimize <grad, x'> + ||x' - x||^2/(2 eta) + <dual, x' - anchor>
    + (rho/2)||x' - anchor||^2 in closed form."""
    if eta <= 0.0 or rho <= 0.0:
        raise ParameterError("eta and rho must be > 0")
    x = np.asarray(x, dtype=np.float64)
    return (rho * eta * np.asarray(anchor) - eta * np.asarray(dual) + x - eta * np.asarray(grad)) / (
        1.0 + rho * eta
    )


def anchor_nuclear_prox_descent(
    anchor, share_sum, n_clients: int, rho: float, eta: float, weight: float, iters: int
) -> Array:
    """Proximal descent on the server anchor subproblem with a nuclear
    penalty: smooth part (N rho / 2)||Z||_F^2 - <share_sum, Z>."""
    z = np.array(anchor, dtype=np.float64, copy=True)
    s = np.asarray(share_sum, dtype=np.float64)
    for _ in range(int(iters)):
        grad = n_clients * rho * z - s
        z = svt(z - eta * grad, weight * eta)
    return z


def task_local_solve(features, labels, anchor_col, dual, rho: float) -> Array:
    """Exact minimizer of ||A x - b||^2 + <dual, x> + (rho/2)||x - anchor||^2."""
    a = np.asarray(features, dtype=np.float64)
    d = a.shape[1]
    lhs = 2.0 * (a.T @ a) + rho * np.eye(d)
    rhs = 2.0 * (a.T @ np.asarray(labels)) + rho * np.asarray(anchor_col) - np.asarray(dual)
    return np.linalg.solve(lhs, rhs)


def task_anchor_identity_svt(shares, rho: float, weight: float) -> Array:
    """Closed-form anchor when every client owns its own task and the
    coupling penalty is nuclear: singular-value threshold of the stacked
    shares, columns being (rho x_i + dual_i)."""
    mat = np.asarray(shares, dtype=np.float64)
    return svt(mat / rho, weight / rho)


def task_anchor_prox_descent(
    anchor, task_sums, task_counts, rho: float, weight: float, eta: float, iters: int
) -> Array:
    """Proximal descent anchor update for a general client-task map with
    a nuclear penalty. task_sums stacks per-task share sums as columns."""
    z = np.array(anchor, dtype=np.float64, copy=True)
    sums = np.asarray(task_sums, dtype=np.float64)
    counts = np.asarray(task_counts, dtype=np.float64)
    for _ in range(int(iters)):
        grad = rho * z * counts[None, :] - sums
        z = svt(z - eta * grad, weight * eta)
    return z


def task_anchor_ridge(task_sums, task_counts, rho: float, weight: float) -> Array:
    """Closed-form anchor when the coupling penalty is
    0.5 * weight * ||Z||_F^2: column j is share_sum_j / (weight + rho * count_j)."""
    if weight <= 0.0:
        raise ParameterError(f"ridge coupling weight must be > 0, got {weight!r}")
    sums = np.asarray(task_sums, dtype=np.float64)
    counts = np.asarray(task_counts, dtype=np.float64)
    return sums / (weight + rho * counts)[None, :]


def rating_estimate_update(rating_row, factor, item_matrix, dual, rho: float) -> Array:
    """Closed-form rating-estimate refresh:
    (2 R_i + rho * u_i V^T - dual_i) / (2 + rho)."""
    recon = np.asarray(item_matrix) @ np.asarray(factor)
    return (2.0 * np.asarray(rating_row) + rho * recon - np.asarray(dual)) / (2.0 + rho)


def factor_row_steps(
    factor, estimate, dual, item_matrix, lam: float, rho: float, steps: int, eta: float | None = None
) -> Array:
    """Proximal descent on one user's factor row.

    The smooth part is ||x - u V^T||^2 - <dual, u V^T>; each step follows
    with the group-norm shrink of weight lam. The default step is the
    conservative 1 / (2 rho sigma_max(V)^2).
    """
    v = np.asarray(item_matrix, dtype=np.float64)
    if eta is None:
        top = float(svd(v).sigma[0]) if v.size else 0.0
        eta = 1.0 / (2.0 * rho * max(top * top, _CURVATURE_FLOOR))
    u = np.array(factor, dtype=np.float64, copy=True)
    x = np.asarray(estimate, dtype=np.float64)
    pi = np.asarray(dual, dtype=np.float64)
    for _ in range(int(steps)):
        resid = x - v @ u
        grad = -(2.0 * resid + pi) @ v
        u = row_group_shrink((u - eta * grad)[None, :], lam * eta)[0]
    return u


def item_factor_gradient(item_matrix, corrections, factors) -> Array:
    """Gradient of the server's item-factor objective:
    sum_i [2 V u_i^T u_i - (2 x_i + dual_i)^T u_i] with corrections
    stacking the rows (2 x_i + dual_i)."""
    v = np.asarray(item_matrix, dtype=np.float64)
    u = np.asarray(factors, dtype=np.float64)
    c = np.asarray(corrections, dtype=np.float64)
    return 2.0 * v @ (u.T @ u) - c.T @ u


def item_factor_update(
    item_matrix, corrections, factors, mu: float, iters: int, eta: float | None = None
) -> Array:
    """Proximal descent on the shared item factor with a nuclear penalty.

    The step defaults to the inverse curvature 1 / (2 lambda_max(U^T U)),
    floored away from a division by zero while factors are still cold.
    """
    v = np.array(item_matrix, dtype=np.float64, copy=True)
    u = np.asarray(factors, dtype=np.float64)
    gram = u.T @ u
    if eta is None:
        top = float(np.linalg.eigvalsh(gram)[-1]) if gram.size else 0.0
        eta = 1.0 / (2.0 * max(top, _CURVATURE_FLOOR))
        eta = min(eta, 1.0)  # cold-start cap: keep the first rounds finite
    c = np.asarray(corrections, dtype=np.float64)
    for _ in range(int(iters)):
        grad = 2.0 * v @ gram - c.T @ u
        v = svt(v - eta * grad, mu * eta)
    return v


# ---------------------------------------------------------------------------
# engine adapters


class LowRankAdmm:
    """Low-rank matrix estimation by linearized consensus ADMM."""

    family = "admm"

    def __init__(self, instance: ProblemInstance, params: AdmmParams):
        if instance.kind != "lrme":
            raise ConfigurationError(f"LowRankAdmm needs an lrme instance, got {instance.kind!r}")
        if instance.regularizer.kind != "nuclear":
            raise ConfigurationError("LowRankAdmm needs a nuclear regularizer")
        self.instance = instance
        self.params = params
        self.weight = instance.regularizer.weight
        self.dim = instance.client(1).features.shape[1]
        n = instance.num_clients
        self.eta_global = params.eta_global or 1.0 / (n * params.rho)
        if params.eta_local is None:
            # inverse of the worst client curvature 2 sigma_max^2
            top = 0.0
            for cid in range(1, n + 1):
                design = instance.client(cid).features.reshape(instance.client(cid).size, -1)
                top = max(top, float(np.linalg.svd(design, compute_uv=False)[0]))
            self.eta_local = 1.0 / (2.0 * max(top * top, _CURVATURE_FLOOR))
        else:
            self.eta_local = params.eta_local
        self.anchor = np.zeros((self.dim, self.dim))
        self.local = {cid: np.zeros((self.dim, self.dim)) for cid in self._ids()}
        self.dual = {cid: np.zeros((self.dim, self.dim)) for cid in self._ids()}
        self.shares = {cid: np.zeros((self.dim, self.dim)) for cid in self._ids()}

    def _ids(self):
        return range(1, self.instance.num_clients + 1)

    def setup(self, topology, rng) -> None:
        self.topology = topology

    def begin_round(self, round_index: int, rng) -> None:
        share_sum = sum(self.shares[cid] for cid in self._ids())
        self.anchor = anchor_nuclear_prox_descent(
            self.anchor,
            share_sum,
            self.instance.num_clients,
            self.params.rho,
            self.eta_global,
            self.weight,
            self.params.prox_iters,
        )

    def broadcast(self) -> dict[str, Array]:
        return {"anchor": self.anchor.copy()}

    @property
    def broadcast_bytes_per_client(self) -> int:
        return 8 * self.dim * self.dim

    def client_update(self, cid: int, down: dict[str, Array], round_index: int, rng):
        anchor = down["anchor"]
        x = self.local[cid]
        dual = self.dual[cid]
        for _ in range(self.params.local_steps):
            grad = local_gradient(self.instance, cid, x)
            x = linearized_share_step(x, dual, anchor, grad, self.params.rho, self.eta_local)
            dual = dual + self.params.rho * (x - anchor)
        self.local[cid] = x
        self.dual[cid] = dual
        return {"share": UploadEntry(value=dual + self.params.rho * x)}

    def aggregate(self, round_index: int, received, sampled) -> None:
        for cid in sampled:
            self.shares[cid] = received[cid]["share"]

    def global_model(self) -> Array:
        return self.anchor.copy()

    def objective(self) -> float:
        return global_objective(self.instance, self.anchor)

    def residual(self) -> float:
        gaps = [np.linalg.norm(self.local[cid] - self.anchor) for cid in self._ids()]
        return float(np.mean(gaps))


SERVER_MODES = ("identity-svt", "prox-descent", "ridge")


class MultiTaskAdmm:
    """Multi-task least squares by consensus ADMM on the task matrix."""

    family = "admm"

    def __init__(self, instance: ProblemInstance, server_mode: str, params: AdmmParams):
        if instance.kind != "mtl":
            raise ConfigurationError(f"MultiTaskAdmm needs an mtl instance, got {instance.kind!r}")
        if server_mode not in SERVER_MODES:
            raise ConfigurationError(f"server_mode must be one of {SERVER_MODES}, got {server_mode!r}")
        reg = instance.regularizer
        if server_mode in ("identity-svt", "prox-descent") and reg.kind != "nuclear":
            raise ConfigurationError(f"{server_mode} needs a nuclear coupling penalty, got {reg.kind!r}")
        if server_mode == "ridge" and reg.kind != "trace-square":
            raise ConfigurationError(f"ridge mode needs a trace-square penalty, got {reg.kind!r}")
        self.instance = instance
        self.params = params
        self.server_mode = server_mode
        self.weight = reg.weight
        self.dim = instance.client(1).features.shape[1]
        self.n_tasks = int(instance.meta["dims"]["n_tasks"])
        self.tasks = {cid: instance.client(cid).task for cid in self._ids()}
        if server_mode == "identity-svt":
            ids = sorted(self._ids())
            if self.n_tasks != instance.num_clients or any(
                self.tasks[cid] != cid for cid in ids
            ):
                raise ConfigurationError(
                    "identity-svt needs the identity client-task map (task i owned by client i)"
                )
        n = instance.num_clients
        self.eta_global = params.eta_global or 1.0 / (n * params.rho)
        self.anchor = np.zeros((self.dim, self.n_tasks))
        self.local = {cid: np.zeros(self.dim) for cid in self._ids()}
        self.dual = {cid: np.zeros(self.dim) for cid in self._ids()}
        self.shares = {cid: np.zeros(self.dim) for cid in self._ids()}

    def _ids(self):
        return range(1, self.instance.num_clients + 1)

    def setup(self, topology, rng) -> None:
        self.topology = topology

    def _task_sums_and_counts(self):
        sums = np.zeros((self.dim, self.n_tasks))
        counts = np.zeros(self.n_tasks)
        for cid in self._ids():
            j = self.tasks[cid] - 1
            sums[:, j] += self.shares[cid]
            counts[j] += 1.0
        return sums, counts

    def begin_round(self, round_index: int, rng) -> None:
        if self.server_mode == "identity-svt":
            stacked = np.stack([self.shares[cid] for cid in sorted(self._ids())], axis=1)
            self.anchor = task_anchor_identity_svt(stacked, self.params.rho, self.weight)
            return
        sums, counts = self._task_sums_and_counts()
        if self.server_mode == "prox-descent":
            self.anchor = task_anchor_prox_descent(
                self.anchor,
                sums,
                counts,
                self.params.rho,
                self.weight,
                self.eta_global,
                self.params.prox_iters,
            )
        else:
            self.anchor = task_anchor_ridge(sums, counts, self.params.rho, self.weight)

    def broadcast(self) -> dict[str, Array]:
        return {"anchor": self.anchor.copy()}

    @property
    def broadcast_bytes_per_client(self) -> int:
        # each client needs only its own task's column
        return 8 * self.dim

    def client_update(self, cid: int, down: dict[str, Array], round_index: int, rng):
        col = down["anchor"][:, self.tasks[cid] - 1]
        data = self.instance.client(cid)
        x = self.local[cid]
        dual = self.dual[cid]
        for _ in range(self.params.local_steps):
            x = task_local_solve(data.features, data.labels, col, dual, self.params.rho)
            dual = dual + self.params.rho * (x - col)
        self.local[cid] = x
        self.dual[cid] = dual
        return {"share": UploadEntry(value=self.params.rho * x + dual)}

    def aggregate(self, round_index: int, received, sampled) -> None:
        for cid in sampled:
            self.shares[cid] = received[cid]["share"]

    def global_model(self) -> Array:
        return self.anchor.copy()

    def objective(self) -> float:
        return global_objective(self.instance, self.anchor)

    def residual(self) -> float:
        gaps = [
            np.linalg.norm(self.local[cid] - self.anchor[:, self.tasks[cid] - 1])
            for cid in self._ids()
        ]
        return float(np.mean(gaps))


class FactorizationAdmm:
    """Matrix factorization by three-block ADMM.

    Users keep a rating estimate, their factor row, and the dual for the
    estimate-equals-reconstruction constraint; the server owns the shared
    item factor.
    """

    family = "admm"

    def __init__(self, instance: ProblemInstance, params: AdmmParams):
        if instance.kind != "mf":
            raise ConfigurationError(f"FactorizationAdmm needs an mf instance, got {instance.kind!r}")
        if instance.regularizer.kind != "l21" or (
            instance.aux_regularizer is None or instance.aux_regularizer.kind != "nuclear"
        ):
            raise ConfigurationError(
                "FactorizationAdmm needs an l21 user penalty and a nuclear item penalty"
            )
        self.instance = instance
        self.params = params
        self.lam = instance.regularizer.weight
        self.mu = instance.aux_regularizer.weight
        self.n_items = int(instance.client(1).labels.shape[0])
        self.rank = int(instance.meta["dims"]["rank"])
        self.item_factor: Array | None = None
        self.estimate = {cid: np.zeros(self.n_items) for cid in self._ids()}
        self.factor = {cid: np.zeros(self.rank) for cid in self._ids()}
        self.dual = {cid: np.zeros(self.n_items) for cid in self._ids()}
        self.cached_corr = {cid: np.zeros(self.n_items) for cid in self._ids()}
        self.cached_factor = {cid: np.zeros(self.rank) for cid in self._ids()}

    def _ids(self):
        return range(1, self.instance.num_clients + 1)

    def setup(self, topology, rng) -> None:
        self.topology = topology
        gen = rng.stream("item-factor-init")
        self.item_factor = gen.standard_normal((self.n_items, self.rank))

    def begin_round(self, round_index: int, rng) -> None:
        corr = np.stack([self.cached_corr[cid] for cid in sorted(self._ids())])
        factors = np.stack([self.cached_factor[cid] for cid in sorted(self._ids())])
        self.item_factor = item_factor_update(
            self.item_factor,
            corr,
            factors,
            self.mu,
            self.params.prox_iters,
            self.params.eta_global,
        )

    def broadcast(self) -> dict[str, Array]:
        return {"item-factor": self.item_factor.copy()}

    @property
    def broadcast_bytes_per_client(self) -> int:
        return 8 * self.n_items * self.rank

    def client_update(self, cid: int, down: dict[str, Array], round_index: int, rng):
        v = down["item-factor"]
        rating = self.instance.client(cid).labels
        x = self.estimate[cid]
        u = self.factor[cid]
        dual = self.dual[cid]
        for _ in range(self.params.local_steps):
            x = rating_estimate_update(rating, u, v, dual, self.params.rho)
            u = factor_row_steps(
                u, x, dual, v, self.lam, self.params.rho, self.params.factor_steps,
                eta=self.params.eta_local,
            )
            dual = dual + self.params.rho * (x - v @ u)
        self.estimate[cid] = x
        self.factor[cid] = u
        self.dual[cid] = dual
        return {
            "correction": UploadEntry(value=2.0 * x + dual),
            "factor": UploadEntry(value=u),
        }

    def aggregate(self, round_index: int, received, sampled) -> None:
        for cid in sampled:
            self.cached_corr[cid] = received[cid]["correction"]
            self.cached_factor[cid] = received[cid]["factor"]

    def global_model(self):
        factors = np.stack([self.cached_factor[cid] for cid in sorted(self._ids())])
        return factors, self.item_factor.copy()

    def objective(self) -> float:
        return global_objective(self.instance, self.global_model())

    def residual(self) -> float:
        v = self.item_factor
        gaps = [
            np.linalg.norm(self.estimate[cid] - v @ self.factor[cid]) for cid in self._ids()
        ]
        return float(np.mean(gaps))
