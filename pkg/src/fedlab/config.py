"""Experiment configuration: flat INI sections, strict key tables, builders.

One file describes one experiment. Sections: [problem] picks a data
generator, [algorithm] a solver family and its knobs, [topology] the
communication graph, [shield] the wire-level operators, [run] the round
budget, sampling, seed, and report tolerance. Every key is checked
against a fixed table and every cross-section compatibility rule is
enforced before anything runs, so a config that parses will execute.

``problem.seed`` fixes the data, ``run.seed`` fixes everything that
happens during the run (sampling, minibatches, noise). Overriding the
run seed therefore reruns the same problem under different randomness.

The canonical serialization (sorted keys, normalized values) feeds a
short digest that ledgers and reports cite, so two runs can be traced
back to byte-equal configurations.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass

from .admm import SERVER_MODES, AdmmParams, FactorizationAdmm, LowRankAdmm, MultiTaskAdmm
from .core.engine import RunResult, run_experiment
from .core.metrics import RunReport, build_report
from .core.rng import Rng
from .core.topology import (
    HUB_PATTERNS,
    Topology,
    clustered_topology,
    ring_topology,
    star_topology,
    tree_topology,
)
from .errors import ConfigurationError
from .firstorder import ACCEL_KINDS, SCOPES, FirstOrderAlgorithm, LocalPlan
from .problems import (
    ProblemInstance,
    gen_lasso,
    gen_lrme,
    gen_mf,
    gen_mtl,
    gen_quadratic,
)
from .shield import ByzantineSpec, CompressionSpec, DpSpec, RobustSpec, ShieldSpec

SECTIONS = ("problem", "algorithm", "topology", "shield", "run")

PROBLEM_KINDS = ("lasso", "quadratic", "lrme", "mtl", "mf")
FAMILIES = ("first-order", "admm")
VARIANTS = ("lrme", "mtl-a", "mtl-b", "mtl-c", "mf")
TOPOLOGY_KINDS = ("star", "tree", "ring", "clustered")

_PROBLEM_KEYS = {
    "lasso": frozenset(
        {"kind", "seed", "n_clients", "dim", "n_per_client", "sparsity", "noise_sigma", "alpha", "partition"}
    ),
    "quadratic": frozenset(
        {"kind", "seed", "n_clients", "dim", "n_per_client", "noise_sigma", "hetero", "partition"}
    ),
    "lrme": frozenset({"kind", "seed", "n_clients", "dim", "rank", "n_per_client", "noise_sigma", "lambda"}),
    "mtl": frozenset(
        {"kind", "seed", "n_clients", "n_tasks", "dim", "mapping", "n_per_client", "noise_sigma", "alpha", "reg", "rank"}
    ),
    "mf": frozenset({"kind", "seed", "n_users", "n_items", "rank", "noise_sigma", "lambda", "mu"}),
}
_PROBLEM_REQUIRED = {
    "lasso": ("seed", "n_clients", "dim", "n_per_client", "sparsity", "noise_sigma"),
    "quadratic": ("seed", "n_clients", "dim", "n_per_client", "noise_sigma", "hetero"),
    "lrme": ("seed", "n_clients", "dim", "rank", "n_per_client", "noise_sigma"),
    "mtl": ("seed", "n_clients", "n_tasks", "dim", "mapping"),
    "mf": ("seed", "n_users", "n_items", "rank", "noise_sigma"),
}
_ALGORITHM_KEYS = {
    "first-order": frozenset({"family", "accel", "scope", "t", "eta", "beta", "batch"}),
    "admm": frozenset({"family", "variant", "rho", "eta_l", "eta_g", "t", "i", "j", "lambda", "mu", "alpha"}),
}
# keys each topology kind accepts beyond "kind" itself
_TOPOLOGY_EXTRA = {
    "star": frozenset(),
    "ring": frozenset(),
    "tree": frozenset({"fanout"}),
    "clustered": frozenset({"clusters", "pattern"}),
}
_SHIELD_KEYS = frozenset({"compress", "robust", "dp", "byzantine"})
_RUN_KEYS = frozenset({"rounds", "sample_fraction", "seed", "tolerance", "oracle", "out"})

_VARIANT_KIND = {"lrme": "lrme", "mtl-a": "mtl", "mtl-b": "mtl", "mtl-c": "mtl", "mf": "mf"}
_VARIANT_MODE = {"mtl-a": "identity-svt", "mtl-b": "prox-descent", "mtl-c": "ridge"}
assert set(_VARIANT_MODE.values()) == set(SERVER_MODES)


@dataclass
class ExperimentConfig:
    """Validated key/value blocks, one per section, values as written."""

    problem: dict[str, str]
    algorithm: dict[str, str]
    topology: dict[str, str]
    shield: dict[str, str]
    run: dict[str, str]

    def blocks(self):
        return zip(SECTIONS, (self.problem, self.algorithm, self.topology, self.shield, self.run))


# ---------------------------------------------------------------------------
# coercion helpers; `where` is always "section.key" for diagnostics


def _as_int(value: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigurationError(f"{where} must be an integer, got {value!r}") from None


def _as_float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigurationError(f"{where} must be a number, got {value!r}") from None


def _as_choice(value: str, where: str, choices) -> str:
    if value not in choices:
        raise ConfigurationError(f"{where} must be one of {', '.join(choices)}; got {value!r}")
    return value


def _split_token(token: str, where: str, arg_counts: dict[str, int]) -> tuple[str, list[float]]:
    """Parse ``head`` or ``head:a,b,...`` against a per-head argument count."""
    head, sep, tail = token.partition(":")
    if head not in arg_counts:
        raise ConfigurationError(f"{where} must start with one of {', '.join(sorted(arg_counts))}; got {token!r}")
    want = arg_counts[head]
    if want == 0:
        if sep:
            raise ConfigurationError(f"{where}: {head!r} takes no arguments, got {token!r}")
        return head, []
    parts = tail.split(",") if tail else []
    if not sep or len(parts) != want:
        raise ConfigurationError(f"{where}: {head!r} needs {want} colon-argument(s) like {head}:x, got {token!r}")
    return head, [_as_float(p, where) for p in parts]


def parse_compress_token(token: str, where: str = "shield.compress") -> CompressionSpec:
    head, args = _split_token(token, where, {"none": 0, "sign": 0, "qsgd": 1, "topk": 1, "varbudget": 1})
    if head == "qsgd":
        return CompressionSpec(kind="qsgd", levels=int(args[0]))
    if head == "topk":
        return CompressionSpec(kind="topk", k=int(args[0]))
    if head == "varbudget":
        return CompressionSpec(kind="varbudget", budget=args[0])
    return CompressionSpec(kind=head)


def parse_robust_token(token: str, where: str = "shield.robust") -> RobustSpec:
    head, args = _split_token(token, where, {"none": 0, "krum": 1, "median": 0, "tmean": 1})
    if head == "krum":
        return RobustSpec(rule="krum", f=int(args[0]))
    if head == "tmean":
        return RobustSpec(rule="tmean", beta=args[0])
    return RobustSpec(rule=head)


def parse_dp_token(token: str, where: str = "shield.dp") -> DpSpec:
    head, args = _split_token(token, where, {"none": 0, "laplace": 2, "gaussian": 3})
    if head == "laplace":
        return DpSpec(mechanism="laplace", epsilon=args[0], clip=args[1])
    if head == "gaussian":
        return DpSpec(mechanism="gaussian", epsilon=args[0], delta=args[1], clip=args[2])
    return DpSpec()


def parse_byzantine_token(token: str, where: str = "shield.byzantine") -> ByzantineSpec:
    head, args = _split_token(token, where, {"none": 0, "scale": 2})
    if head == "scale":
        return ByzantineSpec(count=int(args[0]), factor=args[1])
    return ByzantineSpec()


# ---------------------------------------------------------------------------
# parsing


def _block(cp: configparser.ConfigParser, name: str) -> dict[str, str]:
    if not cp.has_section(name):
        return {}
    # paths keep their case; every other value in the grammar is case-free
    return {
        key: (value.strip() if name == "run" and key == "out" else value.strip().lower())
        for key, value in cp.items(name)
    }


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse and fully validate one experiment description."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    if cp.defaults():
        raise ConfigurationError("a [DEFAULT] section is not allowed; use the five named sections")
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigurationError(f"unknown section(s) {unknown}; valid sections: {', '.join(SECTIONS)}")
    for required in ("problem", "algorithm", "run"):
        if not cp.has_section(required):
            raise ConfigurationError(f"missing required section [{required}]")

    cfg = ExperimentConfig(
        problem=_block(cp, "problem"),
        algorithm=_block(cp, "algorithm"),
        topology=_block(cp, "topology") or {"kind": "star"},
        shield={
            "compress": "none",
            "robust": "none",
            "dp": "none",
            "byzantine": "none",
            **_block(cp, "shield"),
        },
        run={"sample_fraction": "1.0", "tolerance": "1e-3", "oracle": "on", **_block(cp, "run")},
    )
    validate_config(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    try:
        with io.open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc}") from None
    return parse_config_text(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: sections in fixed order, keys sorted."""
    lines = []
    for name, block in cfg.blocks():
        lines.append(f"[{name}]")
        for key in sorted(block):
            lines.append(f"{key} = {block[key]}")
        lines.append("")
    return "\n".join(lines)


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:12]


def with_run_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    run = dict(cfg.run)
    run["seed"] = str(int(seed))
    return ExperimentConfig(cfg.problem, cfg.algorithm, cfg.topology, cfg.shield, run)


# ---------------------------------------------------------------------------
# validation


def _check_keys(block: dict, allowed, section: str, context: str = "") -> None:
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        suffix = f" for {context}" if context else ""
        raise ConfigurationError(
            f"unknown key(s) {unknown} in [{section}]{suffix}; valid keys: {', '.join(sorted(allowed))}"
        )


def _check_required(block: dict, required, section: str) -> None:
    missing = [k for k in required if k not in block]
    if missing:
        raise ConfigurationError(f"[{section}] is missing required key(s): {', '.join(missing)}")


def _validate_problem(p: dict) -> str:
    if "kind" not in p:
        raise ConfigurationError(f"[problem] needs kind, one of: {', '.join(PROBLEM_KINDS)}")
    kind = _as_choice(p["kind"], "problem.kind", PROBLEM_KINDS)
    _check_keys(p, _PROBLEM_KEYS[kind], "problem", f"kind={kind}")
    _check_required(p, _PROBLEM_REQUIRED[kind], "problem")
    _as_int(p["seed"], "problem.seed")
    for key in ("n_clients", "dim", "n_per_client", "rank", "n_tasks", "n_users", "n_items"):
        if key in p:
            _as_int(p[key], f"problem.{key}")
    for key in ("sparsity", "noise_sigma", "alpha", "hetero", "lambda", "mu"):
        if key in p:
            _as_float(p[key], f"problem.{key}")
    if "partition" in p:
        _parse_partition(p["partition"])
    if "mapping" in p:
        _as_choice(p["mapping"], "problem.mapping", ("identity", "random"))
    if "reg" in p:
        _as_choice(p["reg"], "problem.reg", ("nuclear", "trace-square"))
    return kind


def _parse_partition(token: str) -> tuple[str, float]:
    head, args = _split_token(token, "problem.partition", {"iid": 0, "dirichlet": 1})
    if head == "dirichlet":
        if args[0] <= 0:
            raise ConfigurationError(f"problem.partition: dirichlet concentration must be > 0, got {args[0]}")
        return "dirichlet", args[0]
    return "iid", 0.0


def _weight_echo(a: dict, p: dict, key_a: str, key_p: str, default_p: float) -> None:
    """Algorithm blocks may restate a problem weight; it must then agree."""
    if key_a not in a:
        return
    stated = _as_float(a[key_a], f"algorithm.{key_a}")
    actual = _as_float(p[key_p], f"problem.{key_p}") if key_p in p else default_p
    if stated != actual:
        raise ConfigurationError(
            f"algorithm.{key_a} = {stated!r} does not match problem.{key_p} = {actual!r}; "
            "drop the algorithm key or make them equal"
        )


def _validate_algorithm(a: dict, p: dict, kind: str) -> str:
    if "family" not in a:
        raise ConfigurationError(f"[algorithm] needs family, one of: {', '.join(FAMILIES)}")
    family = _as_choice(a["family"], "algorithm.family", FAMILIES)
    _check_keys(a, _ALGORITHM_KEYS[family], "algorithm", f"family={family}")

    if family == "first-order":
        if kind not in ("lasso", "quadratic"):
            raise ConfigurationError(
                f"family=first-order handles kind lasso or quadratic, not {kind!r}; "
                "matrix problems take family=admm"
            )
        accel = _as_choice(a.get("accel", "none"), "algorithm.accel", ACCEL_KINDS)
        scope = _as_choice(a.get("scope", "local"), "algorithm.scope", SCOPES)
        if accel == "control-variate" and scope != "global":
            raise ConfigurationError("accel=control-variate requires scope=global")
        if "t" in a:
            _as_int(a["t"], "algorithm.t")
        for key in ("eta", "beta"):
            if key in a:
                _as_float(a[key], f"algorithm.{key}")
        if "batch" in a and a["batch"] != "full":
            _as_int(a["batch"], "algorithm.batch")
        return family

    if "variant" not in a:
        raise ConfigurationError(f"family=admm needs variant, one of: {', '.join(VARIANTS)}")
    variant = _as_choice(a["variant"], "algorithm.variant", VARIANTS)
    if _VARIANT_KIND[variant] != kind:
        raise ConfigurationError(
            f"variant={variant} runs on kind={_VARIANT_KIND[variant]}, but the problem is kind={kind}"
        )
    if variant == "mtl-a" and p.get("mapping") != "identity":
        raise ConfigurationError(
            "variant=mtl-a uses the closed-form consensus update, which needs "
            "problem.mapping = identity (one client per task); use mtl-b for other mappings"
        )
    reg = p.get("reg", "nuclear")
    if variant in ("mtl-a", "mtl-b") and reg != "nuclear":
        raise ConfigurationError(f"variant={variant} needs problem.reg = nuclear, got {reg!r}")
    if variant == "mtl-c" and reg != "trace-square":
        raise ConfigurationError(f"variant=mtl-c needs problem.reg = trace-square, got {reg!r}")

    for key in ("t", "i", "j"):
        if key in a:
            _as_int(a[key], f"algorithm.{key}")
    if "rho" in a:
        _as_float(a["rho"], "algorithm.rho")
    for key in ("eta_l", "eta_g"):
        if key in a and a[key] != "auto":
            _as_float(a[key], f"algorithm.{key}")
    if variant == "lrme":
        _weight_echo(a, p, "lambda", "lambda", 1.0)
    if variant.startswith("mtl"):
        _weight_echo(a, p, "alpha", "alpha", 0.1)
    if variant == "mf":
        _weight_echo(a, p, "lambda", "lambda", 0.01)
        _weight_echo(a, p, "mu", "mu", 0.01)
    for key in ("lambda", "mu", "alpha"):
        if key in a and key not in _echo_keys(variant):
            raise ConfigurationError(f"algorithm.{key} does not apply to variant={variant}")
    return family


def _echo_keys(variant: str):
    if variant == "lrme":
        return ("lambda",)
    if variant.startswith("mtl"):
        return ("alpha",)
    return ("lambda", "mu")


def _problem_client_count(p: dict) -> int:
    key = "n_users" if p["kind"] == "mf" else "n_clients"
    return _as_int(p[key], f"problem.{key}")


def _validate_topology(t: dict, p: dict) -> str:
    if "kind" not in t:
        raise ConfigurationError(f"[topology] needs kind, one of: {', '.join(TOPOLOGY_KINDS)}")
    kind = _as_choice(t["kind"], "topology.kind", TOPOLOGY_KINDS)
    _check_keys(t, {"kind"} | _TOPOLOGY_EXTRA[kind], "topology", f"kind={kind}")
    if kind == "tree":
        _check_required(t, ("fanout",), "topology")
        _as_int(t["fanout"], "topology.fanout")
    if kind == "clustered":
        _check_required(t, ("clusters", "pattern"), "topology")
        _as_choice(t["pattern"], "topology.pattern", HUB_PATTERNS)
        clusters = [_as_int(c.strip(), "topology.clusters") for c in t["clusters"].split(",") if c.strip()]
        n = _problem_client_count(p)
        if len(clusters) != n:
            raise ConfigurationError(
                f"topology.clusters lists {len(clusters)} assignments but the problem has {n} clients"
            )
    return kind


def _validate_run(r: dict) -> None:
    _check_keys(r, _RUN_KEYS, "run")
    _check_required(r, ("rounds", "seed"), "run")
    if _as_int(r["rounds"], "run.rounds") < 0:
        raise ConfigurationError(f"run.rounds must be >= 0, got {r['rounds']!r}")
    _as_int(r["seed"], "run.seed")
    fraction = _as_float(r["sample_fraction"], "run.sample_fraction")
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"run.sample_fraction must be in (0, 1], got {fraction!r}")
    if _as_float(r["tolerance"], "run.tolerance") <= 0.0:
        raise ConfigurationError(f"run.tolerance must be > 0, got {r['tolerance']!r}")
    _as_choice(r["oracle"], "run.oracle", ("on", "off"))


def validate_config(cfg: ExperimentConfig) -> None:
    """Full key-table, grammar, and cross-section compatibility check."""
    kind = _validate_problem(cfg.problem)
    family = _validate_algorithm(cfg.algorithm, cfg.problem, kind)

    _check_keys(cfg.shield, _SHIELD_KEYS, "shield")
    compression = parse_compress_token(cfg.shield["compress"])
    robust = parse_robust_token(cfg.shield["robust"])
    dp = parse_dp_token(cfg.shield["dp"])
    byzantine = parse_byzantine_token(cfg.shield["byzantine"])

    topo_kind = _validate_topology(cfg.topology, cfg.problem)
    _validate_run(cfg.run)

    # compatibility table; the engine re-checks, but a config should fail at parse
    shielded = (
        compression.kind != "none"
        or dp.mechanism != "none"
        or byzantine.count > 0
        or robust.rule != "none"
    )
    if family == "admm" and topo_kind not in ("star", "tree"):
        raise ConfigurationError(f"family=admm runs on topology star or tree, not {topo_kind!r}")
    if family != "first-order" and shielded:
        raise ConfigurationError("[shield] operators apply to family=first-order only")
    if topo_kind in ("ring", "clustered"):
        if family != "first-order":
            raise ConfigurationError(f"topology {topo_kind!r} needs family=first-order")
        if _as_float(cfg.run["sample_fraction"], "run.sample_fraction") != 1.0:
            raise ConfigurationError(f"topology {topo_kind!r} requires sample_fraction = 1.0")
        if shielded:
            raise ConfigurationError(f"[shield] operators need a server topology, not {topo_kind!r}")
        accel = cfg.algorithm.get("accel", "none")
        scope = cfg.algorithm.get("scope", "local")
        if accel == "control-variate" or (accel == "momentum" and scope == "global"):
            raise ConfigurationError(
                f"topology {topo_kind!r} has no server state: accel must be none or momentum with scope=local"
            )
    if robust.rule != "none":
        if topo_kind != "star":
            raise ConfigurationError("robust aggregation requires topology.kind = star")
        if cfg.algorithm.get("accel", "none") != "none":
            raise ConfigurationError("robust aggregation requires accel = none")


# ---------------------------------------------------------------------------
# builders


def build_instance(cfg: ExperimentConfig, *, with_oracle: bool | None = None) -> ProblemInstance:
    p = cfg.problem
    kind = p["kind"]
    seed = _as_int(p["seed"], "problem.seed")
    if with_oracle is None:
        with_oracle = cfg.run.get("oracle", "on") == "on"

    if kind in ("lasso", "quadratic"):
        scheme, conc = _parse_partition(p.get("partition", "iid"))
        common = dict(partition=scheme, with_oracle=with_oracle)
        if scheme == "dirichlet":
            common["dirichlet_alpha"] = conc
        if kind == "lasso":
            return gen_lasso(
                int(p["n_clients"]),
                int(p["dim"]),
                int(p["n_per_client"]),
                float(p["sparsity"]),
                float(p["noise_sigma"]),
                seed,
                alpha=float(p.get("alpha", 0.05)),
                **common,
            )
        return gen_quadratic(
            int(p["n_clients"]),
            int(p["dim"]),
            int(p["n_per_client"]),
            float(p["noise_sigma"]),
            float(p["hetero"]),
            seed,
            **common,
        )
    if kind == "lrme":
        return gen_lrme(
            int(p["n_clients"]),
            int(p["dim"]),
            int(p["rank"]),
            int(p["n_per_client"]),
            float(p["noise_sigma"]),
            seed,
            lam=float(p.get("lambda", 1.0)),
            with_oracle=with_oracle,
        )
    if kind == "mtl":
        extra = {}
        if "n_per_client" in p:
            extra["n_per_client"] = int(p["n_per_client"])
        if "noise_sigma" in p:
            extra["noise_sigma"] = float(p["noise_sigma"])
        if "rank" in p:
            extra["rank"] = int(p["rank"])
        return gen_mtl(
            int(p["n_clients"]),
            int(p["n_tasks"]),
            int(p["dim"]),
            p["mapping"],
            seed,
            alpha=float(p.get("alpha", 0.1)),
            reg=p.get("reg", "nuclear"),
            with_oracle=with_oracle,
            **extra,
        )
    return gen_mf(
        int(p["n_users"]),
        int(p["n_items"]),
        int(p["rank"]),
        float(p["noise_sigma"]),
        seed,
        lam=float(p.get("lambda", 0.01)),
        mu=float(p.get("mu", 0.01)),
        with_oracle=with_oracle,
    )


def build_topology(cfg: ExperimentConfig) -> Topology:
    t = cfg.topology
    n = _problem_client_count(cfg.problem)
    kind = t["kind"]
    if kind == "star":
        return star_topology(n)
    if kind == "tree":
        return tree_topology(n, int(t["fanout"]))
    if kind == "ring":
        return ring_topology(n)
    clusters = [int(c.strip()) for c in t["clusters"].split(",") if c.strip()]
    return clustered_topology(clusters, t["pattern"])


def build_shield(cfg: ExperimentConfig) -> ShieldSpec:
    return ShieldSpec(
        compression=parse_compress_token(cfg.shield["compress"]),
        robust=parse_robust_token(cfg.shield["robust"]),
        dp=parse_dp_token(cfg.shield["dp"]),
        byzantine=parse_byzantine_token(cfg.shield["byzantine"]),
    )


def _auto_or_float(value: str | None, where: str) -> float | None:
    if value is None or value == "auto":
        return None
    return _as_float(value, where)


def build_algorithm(cfg: ExperimentConfig, instance: ProblemInstance):
    a = cfg.algorithm
    if a["family"] == "first-order":
        batch = a.get("batch", "full")
        plan = LocalPlan(
            steps=int(a.get("t", 1)),
            eta=float(a.get("eta", 0.1)),
            batch=None if batch == "full" else int(batch),
        )
        robust = parse_robust_token(cfg.shield["robust"])
        return FirstOrderAlgorithm(
            instance,
            plan,
            accel=a.get("accel", "none"),
            scope=a.get("scope", "local"),
            beta=float(a.get("beta", 0.9)),
            robust=None if robust.rule == "none" else robust,
        )

    variant = a["variant"]
    params = AdmmParams(
        rho=float(a.get("rho", "2.0" if variant == "mf" else "1.0")),
        local_steps=int(a.get("t", 1)),
        prox_iters=int(a.get("i", 20)),
        factor_steps=int(a.get("j", 10)),
        eta_local=_auto_or_float(a.get("eta_l"), "algorithm.eta_l"),
        eta_global=_auto_or_float(a.get("eta_g"), "algorithm.eta_g"),
    )
    if variant == "lrme":
        return LowRankAdmm(instance, params)
    if variant in _VARIANT_MODE:
        return MultiTaskAdmm(instance, _VARIANT_MODE[variant], params)
    return FactorizationAdmm(instance, params)


def run_from_config(
    cfg: ExperimentConfig, *, seed_override: int | None = None
) -> tuple[RunResult, RunReport]:
    """Build every piece from a validated config and execute the run."""
    if seed_override is not None:
        cfg = with_run_seed(cfg, seed_override)
    digest = config_digest(cfg)
    instance = build_instance(cfg)
    topology = build_topology(cfg)
    shield = build_shield(cfg)
    algorithm = build_algorithm(cfg, instance)
    result = run_experiment(
        instance,
        algorithm,
        topology,
        _as_int(cfg.run["rounds"], "run.rounds"),
        Rng(_as_int(cfg.run["seed"], "run.seed")),
        sample_fraction=_as_float(cfg.run["sample_fraction"], "run.sample_fraction"),
        shield_spec=shield,
    )
    oracle = instance.oracle.objective if instance.oracle is not None else None
    report = build_report(
        result.metrics,
        digest,
        oracle,
        _as_float(cfg.run["tolerance"], "run.tolerance"),
    )
    return result, report
