"""Synthetic federated problem instances and their reference solutions.

Five problem kinds share one container:

  lasso      l1-regularized least squares, model is a d-vector
  quadratic  unregularized least squares with a heterogeneity knob
  lrme       low-rank matrix estimation from linear measurements (d x d model)
  mtl        multi-task least squares with a coupling penalty on the task
             matrix (d x m model, one column per task)
  mf         matrix factorization of an N x M rating table into row
             factors U (per user) and a shared item factor V

Each generator is a pure function of its arguments: the same seed always
yields a bit-identical instance. Generators also attach an OracleSolution
(a centralized reference solution with its objective) so runs can report
optimality gaps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core.rng import Rng, check_seed
from .errors import ParameterError
from .numkit import nuclear_norm, row_group_shrink, soft_threshold_l1, svd, svt

Array = np.ndarray

PROBLEM_KINDS = ("lasso", "quadratic", "lrme", "mtl", "mf")
REG_KINDS = ("none", "l1", "nuclear", "l21", "trace-square")


@dataclass(frozen=True)
class RegSpec:
    """A regularizer: its functional form and nonnegative weight."""

    kind: str = "none"
    weight: float = 0.0

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise ParameterError(f"unknown regularizer kind {self.kind!r}")
        if not np.isfinite(self.weight) or self.weight < 0.0:
            raise ParameterError(f"regularizer weight must be >= 0, got {self.weight!r}")
        if self.kind == "none" and self.weight != 0.0:
            raise ParameterError("kind 'none' requires weight 0")


@dataclass
class ClientDataset:
    """One client's local data.

    features: (n_i, d) design matrix; (n_i, d, d) measurement stack for
              lrme; None for mf (the rating row lives in labels).
    labels:   (n_i,) targets, or the user's full rating row (M,) for mf.
    task:     1-based task id (mtl only; 0 elsewhere).
    """

    features: Array | None
    labels: Array
    task: int = 0

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class OracleSolution:
    """Centralized reference solution used for gap reporting."""

    solution: Array
    objective: float
    method: str


@dataclass
class ProblemInstance:
    kind: str
    clients: list[ClientDataset]
    regularizer: RegSpec
    oracle: OracleSolution | None = None
    aux_regularizer: RegSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    def client(self, cid: int) -> ClientDataset:
        """Clients are addressed by 1-based id everywhere in fedlab."""
        if not 1 <= cid <= len(self.clients):
            raise ParameterError(f"client id {cid} outside 1..{len(self.clients)}")
        return self.clients[cid - 1]


def _check_positive_int(value, name: str, minimum: int = 1) -> int:
    v = int(value)
    if v < minimum:
        raise ParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return v


def _check_sigma(value) -> float:
    v = float(value)
    if not np.isfinite(v) or v < 0.0:
        raise ParameterError(f"noise_sigma must be >= 0, got {value!r}")
    return v


# ---------------------------------------------------------------------------
# non-IID partitioning


def partition_noniid(labels, n_clients: int, dirichlet_alpha: float, seed: int) -> list[Array]:
    """Split sample indices across clients with per-class Dirichlet shares.

    For every distinct label value, a Dirichlet(alpha * 1) draw decides
    what fraction of that class each client receives. Small alpha
    concentrates classes on few clients; large alpha approaches an even
    split. Returns one index array per client; the arrays are disjoint
    and cover every sample. Clients may come out empty for extreme draws.
    """
    lab = np.asarray(labels)
    if lab.ndim != 1 or lab.size == 0:
        raise ParameterError("labels must be a nonempty 1-d array")
    n = _check_positive_int(n_clients, "n_clients")
    alpha = float(dirichlet_alpha)
    if not np.isfinite(alpha) or alpha <= 0.0:
        raise ParameterError(f"dirichlet_alpha must be > 0, got {dirichlet_alpha!r}")
    gen = Rng(check_seed(seed)).stream("partition-noniid")
    buckets: list[list[int]] = [[] for _ in range(n)]
    for value in np.unique(lab):
        idx = np.flatnonzero(lab == value)
        idx = idx[gen.permutation(idx.size)]
        shares = gen.dirichlet(np.full(n, alpha))
        counts = gen.multinomial(idx.size, shares)
        start = 0
        for c, count in enumerate(counts):
            buckets[c].extend(idx[start : start + count].tolist())
            start += count
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def _dirichlet_repartition(features, labels, owner, n, alpha, seed):
    """Reassign pooled samples to clients, retrying until nobody is empty."""
    for attempt in range(64):
        parts = partition_noniid(owner, n, alpha, seed + attempt)
        if all(p.size > 0 for p in parts):
            return [
                ClientDataset(features=features[p], labels=labels[p]) for p in parts
            ]
    raise ParameterError(
        "dirichlet partition kept producing empty clients; raise dirichlet_alpha"
    )


# ---------------------------------------------------------------------------
# generators


def gen_lasso(
    n_clients: int,
    dim: int,
    n_per_client: int,
    sparsity: float,
    noise_sigma: float,
    seed: int,
    *,
    alpha: float = 0.05,
    partition: str = "iid",
    dirichlet_alpha: float = 1.0,
    with_oracle: bool = True,
) -> ProblemInstance:
    """Sparse linear regression split across clients.

    A sparse ground-truth vector (about sparsity * dim nonzero entries)
    generates every client's labels through a standard Gaussian design
    plus observation noise. Local losses are mean squared errors
    (1/n_i) ||A_i w - y_i||^2 and the global objective averages them and
    adds alpha * ||w||_1.
    """
    n = _check_positive_int(n_clients, "n_clients")
    d = _check_positive_int(dim, "dim")
    per = _check_positive_int(n_per_client, "n_per_client")
    sigma = _check_sigma(noise_sigma)
    if not 0.0 < float(sparsity) <= 1.0:
        raise ParameterError(f"sparsity must lie in (0, 1], got {sparsity!r}")
    if partition not in ("iid", "dirichlet"):
        raise ParameterError(f"partition must be 'iid' or 'dirichlet', got {partition!r}")
    seed = check_seed(seed)
    rng = Rng(seed)

    gen = rng.stream("gen-lasso")
    support_size = max(1, int(round(float(sparsity) * d)))
    support = gen.choice(d, size=support_size, replace=False)
    w_true = np.zeros(d)
    w_true[support] = gen.standard_normal(support_size)

    features = gen.standard_normal((n * per, d))
    noise = gen.standard_normal(n * per) * sigma
    labels = features @ w_true + noise
    owner = np.repeat(np.arange(n), per)

    if partition == "iid":
        clients = [
            ClientDataset(features=features[owner == i], labels=labels[owner == i])
            for i in range(n)
        ]
    else:
        clients = _dirichlet_repartition(features, labels, owner, n, dirichlet_alpha, seed)

    reg = RegSpec("l1", float(alpha))
    instance = ProblemInstance(
        kind="lasso",
        clients=clients,
        regularizer=reg,
        meta={
            "seed": seed,
            "dims": {"n_clients": n, "dim": d},
            "params": {
                "n_per_client": per,
                "sparsity": float(sparsity),
                "noise_sigma": sigma,
                "alpha": float(alpha),
                "partition": partition,
                "dirichlet_alpha": float(dirichlet_alpha),
            },
            "truth": w_true,
        },
    )
    if with_oracle:
        instance.oracle = _lasso_oracle(instance)
    return instance


def gen_quadratic(
    n_clients: int,
    dim: int,
    n_per_client: int,
    noise_sigma: float,
    hetero: float,
    seed: int,
    *,
    partition: str = "iid",
    dirichlet_alpha: float = 1.0,
    with_oracle: bool = True,
) -> ProblemInstance:
    """Unregularized least squares with tunable client heterogeneity.

    hetero = 0 gives every client the same ground truth and design scale;
    larger values shift each client's true model and rescale its design,
    so local minimizers drift apart. Local losses are mean squared errors.
    """
    n = _check_positive_int(n_clients, "n_clients")
    d = _check_positive_int(dim, "dim")
    per = _check_positive_int(n_per_client, "n_per_client")
    sigma = _check_sigma(noise_sigma)
    het = float(hetero)
    if not np.isfinite(het) or het < 0.0:
        raise ParameterError(f"hetero must be >= 0, got {hetero!r}")
    if partition not in ("iid", "dirichlet"):
        raise ParameterError(f"partition must be 'iid' or 'dirichlet', got {partition!r}")
    seed = check_seed(seed)
    gen = Rng(seed).stream("gen-quadratic")

    w_base = gen.standard_normal(d)
    feature_blocks = []
    label_blocks = []
    for _ in range(n):
        w_i = w_base + het * gen.standard_normal(d)
        scale = float(np.exp(0.5 * het * gen.standard_normal()))
        a_i = scale * gen.standard_normal((per, d))
        y_i = a_i @ w_i + sigma * gen.standard_normal(per)
        feature_blocks.append(a_i)
        label_blocks.append(y_i)

    features = np.concatenate(feature_blocks)
    labels = np.concatenate(label_blocks)
    owner = np.repeat(np.arange(n), per)
    if partition == "iid":
        clients = [
            ClientDataset(features=feature_blocks[i], labels=label_blocks[i])
            for i in range(n)
        ]
    else:
        clients = _dirichlet_repartition(features, labels, owner, n, dirichlet_alpha, seed)

    instance = ProblemInstance(
        kind="quadratic",
        clients=clients,
        regularizer=RegSpec("none", 0.0),
        meta={
            "seed": seed,
            "dims": {"n_clients": n, "dim": d},
            "params": {
                "n_per_client": per,
                "noise_sigma": sigma,
                "hetero": het,
                "partition": partition,
                "dirichlet_alpha": float(dirichlet_alpha),
            },
            "truth": w_base,
        },
    )
    if with_oracle:
        instance.oracle = _quadratic_oracle(instance)
    return instance


def gen_lrme(
    n_clients: int,
    dim: int,
    rank: int,
    n_per_client: int,
    noise_sigma: float,
    seed: int,
    *,
    lam: float = 1.0,
    with_oracle: bool = True,
) -> ProblemInstance:
    """Low-rank matrix estimation from Gaussian linear measurements.

    The d x d ground truth has the requested rank. Client j's sample k is
    a dense sensing matrix D with label <X, D> plus noise; local losses
    are unnormalized sums of squares, and the global objective adds
    lam * ||X||_*.
    """
    n = _check_positive_int(n_clients, "n_clients")
    d = _check_positive_int(dim, "dim")
    r = _check_positive_int(rank, "rank")
    if r > d:
        raise ParameterError(f"rank {r} exceeds dim {d}")
    per = _check_positive_int(n_per_client, "n_per_client")
    sigma = _check_sigma(noise_sigma)
    lam_f = float(lam)
    if not np.isfinite(lam_f) or lam_f < 0.0:
        raise ParameterError(f"lam must be >= 0, got {lam!r}")
    seed = check_seed(seed)
    gen = Rng(seed).stream("gen-lrme")

    left = gen.standard_normal((d, r))
    right = gen.standard_normal((d, r))
    x_true = (left @ right.T) / np.sqrt(r)

    clients = []
    for _ in range(n):
        sensing = gen.standard_normal((per, d, d))
        y = np.einsum("kij,ij->k", sensing, x_true) + sigma * gen.standard_normal(per)
        clients.append(ClientDataset(features=sensing, labels=y))

    instance = ProblemInstance(
        kind="lrme",
        clients=clients,
        regularizer=RegSpec("nuclear", lam_f),
        meta={
            "seed": seed,
            "dims": {"n_clients": n, "dim": d, "rank": r},
            "params": {"n_per_client": per, "noise_sigma": sigma, "lam": lam_f},
            "truth": x_true,
        },
    )
    if with_oracle:
        instance.oracle = _lrme_oracle(instance)
    return instance


def gen_mtl(
    n_clients: int,
    n_tasks: int,
    dim: int,
    mapping: str,
    seed: int,
    *,
    n_per_client: int = 20,
    noise_sigma: float = 0.01,
    alpha: float = 0.1,
    reg: str = "nuclear",
    rank: int | None = None,
    with_oracle: bool = True,
) -> ProblemInstance:
    """Multi-task least squares with a shared low-rank task matrix.

    Task vectors are the columns of a rank-deficient d x m matrix. Each
    client observes one task through its own Gaussian design; mapping
    'identity' pins client i to task i (requires m == N), 'random' draws
    tasks uniformly and redraws until every task has at least one client.
    reg selects the coupling penalty on the task matrix: 'nuclear' with
    weight alpha, or 'trace-square' (0.5 * alpha * ||Z||_F^2).
    """
    n = _check_positive_int(n_clients, "n_clients")
    m = _check_positive_int(n_tasks, "n_tasks")
    d = _check_positive_int(dim, "dim")
    per = _check_positive_int(n_per_client, "n_per_client")
    sigma = _check_sigma(noise_sigma)
    if mapping not in ("identity", "random"):
        raise ParameterError(f"mapping must be 'identity' or 'random', got {mapping!r}")
    if mapping == "identity" and m != n:
        raise ParameterError(f"identity mapping needs n_tasks == n_clients, got {m} != {n}")
    if reg not in ("nuclear", "trace-square"):
        raise ParameterError(f"reg must be 'nuclear' or 'trace-square', got {reg!r}")
    alpha_f = float(alpha)
    if not np.isfinite(alpha_f) or alpha_f < 0.0:
        raise ParameterError(f"alpha must be >= 0, got {alpha!r}")
    seed = check_seed(seed)
    gen = Rng(seed).stream("gen-mtl")

    q = rank if rank is not None else max(1, min(d, m) // 3)
    q = _check_positive_int(q, "rank")
    if q > min(d, m):
        raise ParameterError(f"rank {q} exceeds min(dim, n_tasks) = {min(d, m)}")
    z_true = (gen.standard_normal((d, q)) @ gen.standard_normal((m, q)).T) / np.sqrt(q)

    if mapping == "identity":
        tasks = np.arange(1, n + 1)
    else:
        while True:
            tasks = gen.integers(1, m + 1, size=n)
            if np.unique(tasks).size == m:
                break

    clients = []
    for i in range(n):
        a_i = gen.standard_normal((per, d))
        b_i = a_i @ z_true[:, tasks[i] - 1] + sigma * gen.standard_normal(per)
        clients.append(ClientDataset(features=a_i, labels=b_i, task=int(tasks[i])))

    instance = ProblemInstance(
        kind="mtl",
        clients=clients,
        regularizer=RegSpec(reg, alpha_f),
        meta={
            "seed": seed,
            "dims": {"n_clients": n, "n_tasks": m, "dim": d, "rank": q},
            "params": {
                "n_per_client": per,
                "noise_sigma": sigma,
                "alpha": alpha_f,
                "mapping": mapping,
                "reg": reg,
            },
            "truth": z_true,
        },
    )
    if with_oracle:
        instance.oracle = _mtl_oracle(instance)
    return instance


def gen_mf(
    n_users: int,
    n_items: int,
    rank: int,
    noise_sigma: float,
    seed: int,
    *,
    lam: float = 0.01,
    mu: float = 0.01,
    with_oracle: bool = True,
) -> ProblemInstance:
    """Matrix factorization of a noisy low-rank rating table.

    User i holds the full i-th row of the N x M table. The objective
    factors the table as U V^T with a row-group penalty lam * ||U||_{2,1}
    and a nuclear penalty mu * ||V||_*.
    """
    n = _check_positive_int(n_users, "n_users")
    m = _check_positive_int(n_items, "n_items")
    r = _check_positive_int(rank, "rank")
    if r > min(n, m):
        raise ParameterError(f"rank {r} exceeds min(n_users, n_items) = {min(n, m)}")
    sigma = _check_sigma(noise_sigma)
    lam_f = float(lam)
    mu_f = float(mu)
    if not np.isfinite(lam_f) or lam_f < 0.0:
        raise ParameterError(f"lam must be >= 0, got {lam!r}")
    if not np.isfinite(mu_f) or mu_f < 0.0:
        raise ParameterError(f"mu must be >= 0, got {mu!r}")
    seed = check_seed(seed)
    gen = Rng(seed).stream("gen-mf")

    u_true = gen.standard_normal((n, r)) / np.sqrt(r)
    v_true = gen.standard_normal((m, r))
    ratings_clean = u_true @ v_true.T
    ratings = ratings_clean + sigma * gen.standard_normal((n, m))

    clients = [ClientDataset(features=None, labels=ratings[i]) for i in range(n)]

    instance = ProblemInstance(
        kind="mf",
        clients=clients,
        regularizer=RegSpec("l21", lam_f),
        aux_regularizer=RegSpec("nuclear", mu_f),
        meta={
            "seed": seed,
            "dims": {"n_users": n, "n_items": m, "rank": r},
            "params": {"noise_sigma": sigma, "lam": lam_f, "mu": mu_f},
            "truth_u": u_true,
            "truth_v": v_true,
            "truth_ratings": ratings_clean,
        },
    )
    if with_oracle:
        instance.oracle = _mf_oracle(instance)
    return instance


# ---------------------------------------------------------------------------
# local losses and gradients


def local_smooth_value(instance: ProblemInstance, cid: int, point) -> float:
    """Client cid's smooth loss at the given point (no regularizer)."""
    data = instance.client(cid)
    kind = instance.kind
    if kind in ("lasso", "quadratic"):
        resid = data.features @ np.asarray(point) - data.labels
        return float(np.dot(resid, resid) / data.size)
    if kind == "lrme":
        resid = np.einsum("kij,ij->k", data.features, np.asarray(point)) - data.labels
        return float(np.dot(resid, resid))
    if kind == "mtl":
        resid = data.features @ np.asarray(point) - data.labels
        return float(np.dot(resid, resid))
    if kind == "mf":
        resid = np.asarray(point) - data.labels
        return float(np.dot(resid, resid))
    raise ParameterError(f"unknown problem kind {kind!r}")


def local_gradient(instance: ProblemInstance, cid: int, point) -> Array:
    """Gradient of client cid's smooth loss at the given point.

    For mtl the point is the client's own task vector; for mf it is the
    user's rating-estimate row.
    """
    data = instance.client(cid)
    kind = instance.kind
    p = np.asarray(point, dtype=np.float64)
    if kind in ("lasso", "quadratic"):
        return (2.0 / data.size) * (data.features.T @ (data.features @ p - data.labels))
    if kind == "lrme":
        resid = np.einsum("kij,ij->k", data.features, p) - data.labels
        return 2.0 * np.einsum("k,kij->ij", resid, data.features)
    if kind == "mtl":
        return 2.0 * (data.features.T @ (data.features @ p - data.labels))
    if kind == "mf":
        return 2.0 * (p - data.labels)
    raise ParameterError(f"unknown problem kind {kind!r}")


def minibatch_gradient(instance: ProblemInstance, cid: int, point, sample_idx) -> Array:
    """Unbiased minibatch estimate of local_gradient over the given rows."""
    data = instance.client(cid)
    idx = np.asarray(sample_idx, dtype=np.int64)
    if idx.size == 0:
        raise ParameterError("sample_idx must be nonempty")
    kind = instance.kind
    p = np.asarray(point, dtype=np.float64)
    if kind in ("lasso", "quadratic"):
        a = data.features[idx]
        return (2.0 / idx.size) * (a.T @ (a @ p - data.labels[idx]))
    if kind == "lrme":
        # local loss is an unnormalized sum, so scale the batch back up
        sensing = data.features[idx]
        resid = np.einsum("kij,ij->k", sensing, p) - data.labels[idx]
        return (2.0 * data.size / idx.size) * np.einsum("k,kij->ij", resid, sensing)
    if kind == "mtl":
        a = data.features[idx]
        return (2.0 * data.size / idx.size) * (a.T @ (a @ p - data.labels[idx]))
    if kind == "mf":
        return local_gradient(instance, cid, p)
    raise ParameterError(f"unknown problem kind {kind!r}")


def regularizer_value(reg: RegSpec, point) -> float:
    """Evaluate a regularizer at a point of matching shape."""
    p = np.asarray(point, dtype=np.float64)
    if reg.kind == "none" or reg.weight == 0.0:
        return 0.0
    if reg.kind == "l1":
        return reg.weight * float(np.sum(np.abs(p)))
    if reg.kind == "nuclear":
        return reg.weight * nuclear_norm(p)
    if reg.kind == "l21":
        return reg.weight * float(np.sum(np.linalg.norm(p, axis=1)))
    if reg.kind == "trace-square":
        return 0.5 * reg.weight * float(np.sum(p * p))
    raise ParameterError(f"unknown regularizer kind {reg.kind!r}")


def global_objective(instance: ProblemInstance, model) -> float:
    """Composite objective at a global model.

    lasso/quadratic average client losses; lrme and mtl sum them (their
    losses are already unnormalized). For mtl the model is the full task
    matrix and each client is evaluated at its task's column. For mf pass
    (U, V); user rows of U stand in for the x_i estimates.
    """
    kind = instance.kind
    n = instance.num_clients
    if kind in ("lasso", "quadratic"):
        w = np.asarray(model)
        smooth = sum(local_smooth_value(instance, cid, w) for cid in range(1, n + 1)) / n
        return smooth + regularizer_value(instance.regularizer, w)
    if kind == "lrme":
        x = np.asarray(model)
        smooth = sum(local_smooth_value(instance, cid, x) for cid in range(1, n + 1))
        return smooth + regularizer_value(instance.regularizer, x)
    if kind == "mtl":
        z = np.asarray(model)
        smooth = sum(
            local_smooth_value(instance, cid, z[:, instance.client(cid).task - 1])
            for cid in range(1, n + 1)
        )
        return smooth + regularizer_value(instance.regularizer, z)
    if kind == "mf":
        u, v = model
        u = np.asarray(u)
        v = np.asarray(v)
        recon = u @ v.T
        smooth = sum(
            local_smooth_value(instance, cid, recon[cid - 1]) for cid in range(1, n + 1)
        )
        return (
            smooth
            + regularizer_value(instance.regularizer, u)
            + regularizer_value(instance.aux_regularizer, v)
        )
    raise ParameterError(f"unknown problem kind {kind!r}")


# ---------------------------------------------------------------------------
# centralized reference solutions


def _prox_step(point, grad, step, reg: RegSpec):
    moved = point - step * grad
    if reg.kind == "none" or reg.weight == 0.0:
        return moved
    if reg.kind == "l1":
        return soft_threshold_l1(moved, step * reg.weight)
    if reg.kind == "nuclear":
        return svt(moved, step * reg.weight)
    if reg.kind == "l21":
        return row_group_shrink(moved, step * reg.weight)
    if reg.kind == "trace-square":
        return moved / (1.0 + step * reg.weight)
    raise ParameterError(f"unknown regularizer kind {reg.kind!r}")


def _prox_gradient_minimize(objective, gradient, reg, x0, lipschitz, max_iters=100000, rel_tol=1e-12):
    """Accelerated proximal gradient descent with adaptive restarts.

    Stops once the relative objective change stays below rel_tol for a
    few consecutive iterations (acceleration makes single-step changes
    non-monotone).
    """
    step = 1.0 / lipschitz
    x = np.array(x0, dtype=np.float64, copy=True)
    y = x.copy()
    t = 1.0
    prev = objective(x)
    calm = 0
    for _ in range(max_iters):
        x_next = _prox_step(y, gradient(y), step, reg)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_next + ((t - 1.0) / t_next) * (x_next - x)
        x, t = x_next, t_next
        cur = objective(x)
        if cur > prev:
            # restart momentum when the objective backslides
            y = x.copy()
            t = 1.0
        calm = calm + 1 if abs(prev - cur) <= rel_tol * (1.0 + abs(cur)) else 0
        if calm >= 5:
            break
        prev = cur
    return x


def _lasso_oracle(instance: ProblemInstance) -> OracleSolution:
    n = instance.num_clients
    d = instance.clients[0].features.shape[1]
    gram = np.zeros((d, d))
    moment = np.zeros(d)
    for data in instance.clients:
        gram += data.features.T @ data.features / data.size
        moment += data.features.T @ data.labels / data.size
    gram /= n
    moment /= n

    lip = 2.0 * float(np.linalg.eigvalsh(gram)[-1])

    def grad(w):
        return 2.0 * (gram @ w - moment)

    sol = _prox_gradient_minimize(
        lambda w: global_objective(instance, w), grad, instance.regularizer, np.zeros(d), lip
    )
    return OracleSolution(
        solution=sol,
        objective=global_objective(instance, sol),
        method="centralized-proximal-gradient",
    )


def _quadratic_oracle(instance: ProblemInstance) -> OracleSolution:
    n = instance.num_clients
    d = instance.clients[0].features.shape[1]
    gram = np.zeros((d, d))
    moment = np.zeros(d)
    for data in instance.clients:
        gram += data.features.T @ data.features / data.size
        moment += data.features.T @ data.labels / data.size
    sol = np.linalg.solve(gram / n, moment / n)
    return OracleSolution(
        solution=sol,
        objective=global_objective(instance, sol),
        method="normal-equations",
    )


def _lrme_oracle(instance: ProblemInstance) -> OracleSolution:
    d = instance.clients[0].features.shape[1]
    design = np.concatenate([c.features.reshape(c.size, -1) for c in instance.clients])
    targets = np.concatenate([c.labels for c in instance.clients])
    lip = 2.0 * float(np.linalg.eigvalsh(design.T @ design)[-1])

    def grad(x):
        resid = design @ x.ravel() - targets
        return 2.0 * (design.T @ resid).reshape(d, d)

    sol = _prox_gradient_minimize(
        lambda x: global_objective(instance, x),
        grad,
        instance.regularizer,
        np.zeros((d, d)),
        lip,
        rel_tol=1e-13,
    )
    return OracleSolution(
        solution=sol,
        objective=global_objective(instance, sol),
        method="centralized-proximal-gradient",
    )


def _mtl_oracle(instance: ProblemInstance) -> OracleSolution:
    d = instance.clients[0].features.shape[1]
    m = instance.meta["dims"]["n_tasks"]
    grams = [np.zeros((d, d)) for _ in range(m)]
    moments = [np.zeros(d) for _ in range(m)]
    for data in instance.clients:
        grams[data.task - 1] += data.features.T @ data.features
        moments[data.task - 1] += data.features.T @ data.labels
    lip = 2.0 * max(float(np.linalg.eigvalsh(g)[-1]) for g in grams)
    if lip == 0.0:
        lip = 1.0

    def grad(z):
        out = np.empty_like(z)
        for j in range(m):
            out[:, j] = 2.0 * (grams[j] @ z[:, j] - moments[j])
        return out

    sol = _prox_gradient_minimize(
        lambda z: global_objective(instance, z),
        grad,
        instance.regularizer,
        np.zeros((d, m)),
        lip,
        rel_tol=1e-13,
    )
    return OracleSolution(
        solution=sol,
        objective=global_objective(instance, sol),
        method="centralized-proximal-gradient",
    )


def _mf_oracle(instance: ProblemInstance) -> OracleSolution:
    """Alternating minimization with proximal-gradient inner loops."""
    ratings = np.stack([c.labels for c in instance.clients])
    n, m = ratings.shape
    r = instance.meta["dims"]["rank"]
    lam = instance.regularizer.weight
    mu = instance.aux_regularizer.weight

    fac = svd(ratings)
    scale = np.sqrt(fac.sigma[:r])
    u = fac.u[:, :r] * scale
    v = fac.v[:, :r] * scale

    def objective(u_, v_):
        return global_objective(instance, (u_, v_))

    prev = objective(u, v)
    for _ in range(2000):
        # U rows: min ||R - U V^T||_F^2 + lam * sum ||u_i||
        lip_u = 2.0 * max(float(np.linalg.eigvalsh(v.T @ v)[-1]), 1e-12)
        for _ in range(200):
            grad_u = 2.0 * (u @ (v.T @ v) - ratings @ v)
            nxt = row_group_shrink(u - grad_u / lip_u, lam / lip_u)
            if np.linalg.norm(nxt - u) <= 1e-12 * (1.0 + np.linalg.norm(u)):
                u = nxt
                break
            u = nxt
        # V: min ||R - U V^T||_F^2 + mu * ||V||_*
        lip_v = 2.0 * max(float(np.linalg.eigvalsh(u.T @ u)[-1]), 1e-12)
        for _ in range(200):
            grad_v = 2.0 * (v @ (u.T @ u) - ratings.T @ u)
            nxt = svt(v - grad_v / lip_v, mu / lip_v)
            if np.linalg.norm(nxt - v) <= 1e-12 * (1.0 + np.linalg.norm(v)):
                v = nxt
                break
            v = nxt
        cur = objective(u, v)
        if abs(prev - cur) <= 1e-11 * (1.0 + abs(cur)):
            break
        prev = cur

    stacked = np.concatenate([u.ravel(), v.ravel()])
    sol = OracleSolution(
        solution=stacked,
        objective=objective(u, v),
        method="centralized-alternating-minimization",
    )
    return sol


# ---------------------------------------------------------------------------
# serialization


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {
            "__ndarray__": obj.tolist(),
            "shape": list(obj.shape),
            "dtype": str(obj.dtype),
        }
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            arr = np.array(obj["__ndarray__"], dtype=obj["dtype"])
            return arr.reshape(obj["shape"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def instance_to_json(instance: ProblemInstance) -> str:
    """Serialize an instance (data, regularizers, oracle, meta) as JSON."""
    doc = {
        "kind": instance.kind,
        "regularizer": {"kind": instance.regularizer.kind, "weight": instance.regularizer.weight},
        "aux_regularizer": (
            None
            if instance.aux_regularizer is None
            else {"kind": instance.aux_regularizer.kind, "weight": instance.aux_regularizer.weight}
        ),
        "clients": [
            {
                "features": None if c.features is None else _encode(c.features),
                "labels": _encode(c.labels),
                "task": c.task,
            }
            for c in instance.clients
        ],
        "oracle": (
            None
            if instance.oracle is None
            else {
                "solution": _encode(instance.oracle.solution),
                "objective": instance.oracle.objective,
                "method": instance.oracle.method,
            }
        ),
        "meta": _encode(instance.meta),
    }
    return json.dumps(doc, sort_keys=True)


def instance_from_json(text: str) -> ProblemInstance:
    doc = json.loads(text)
    reg = RegSpec(doc["regularizer"]["kind"], doc["regularizer"]["weight"])
    aux = None
    if doc["aux_regularizer"] is not None:
        aux = RegSpec(doc["aux_regularizer"]["kind"], doc["aux_regularizer"]["weight"])
    clients = [
        ClientDataset(
            features=None if c["features"] is None else _decode(c["features"]),
            labels=_decode(c["labels"]),
            task=c["task"],
        )
        for c in doc["clients"]
    ]
    oracle = None
    if doc["oracle"] is not None:
        oracle = OracleSolution(
            solution=_decode(doc["oracle"]["solution"]),
            objective=doc["oracle"]["objective"],
            method=doc["oracle"]["method"],
        )
    return ProblemInstance(
        kind=doc["kind"],
        clients=clients,
        regularizer=reg,
        oracle=oracle,
        aux_regularizer=aux,
        meta=_decode(doc["meta"]),
    )


def save_instance(instance: ProblemInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(instance_to_json(instance))


def load_instance(path) -> ProblemInstance:
    with open(path, "r", encoding="utf-8") as handle:
        return instance_from_json(handle.read())
