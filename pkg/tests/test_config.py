import pytest

from fedlab import cli
from fedlab.admm import FactorizationAdmm, LowRankAdmm, MultiTaskAdmm
from fedlab.config import (
    ExperimentConfig,
    build_algorithm,
    build_instance,
    build_shield,
    build_topology,
    config_digest,
    parse_byzantine_token,
    parse_compress_token,
    parse_config,
    parse_config_text,
    parse_dp_token,
    parse_robust_token,
    run_from_config,
    serialize_config,
    with_run_seed,
)
from fedlab.core.metrics import read_metrics_csv
from fedlab.errors import ConfigurationError
from fedlab.firstorder import FirstOrderAlgorithm

LASSO = """
[problem]
kind = lasso
seed = 3
n_clients = 4
dim = 10
n_per_client = 15
sparsity = 0.3
noise_sigma = 0.01
alpha = 0.05

[algorithm]
family = first-order
t = 5
eta = 0.05

[run]
rounds = 30
seed = 11
"""

LRME = """
[problem]
kind = lrme
seed = 21
n_clients = 4
dim = 8
rank = 2
n_per_client = 30
noise_sigma = 0.01
lambda = 20.0

[algorithm]
family = admm
variant = lrme
rho = 100.0
t = 10
i = 20

[run]
rounds = 40
seed = 5
"""


def _edit(text: str, old: str, new: str) -> str:
    assert old in text
    return text.replace(old, new)


# ---------------------------------------------------------------------------
# parsing and canonical form


def test_minimal_config_parses_with_defaults():
    cfg = parse_config_text(LASSO)
    assert cfg.problem["kind"] == "lasso"
    assert cfg.topology == {"kind": "star"}
    assert cfg.shield == {"compress": "none", "robust": "none", "dp": "none", "byzantine": "none"}
    assert cfg.run["sample_fraction"] == "1.0"
    assert cfg.run["tolerance"] == "1e-3"
    assert cfg.run["oracle"] == "on"


def test_round_trip_preserves_config_and_digest():
    cfg = parse_config_text(LASSO)
    again = parse_config_text(serialize_config(cfg))
    assert again == cfg
    assert config_digest(again) == config_digest(cfg)


def test_digest_tracks_every_value():
    base = config_digest(parse_config_text(LASSO))
    for old, new in [
        ("seed = 3", "seed = 4"),
        ("eta = 0.05", "eta = 0.06"),
        ("rounds = 30", "rounds = 31"),
        ("seed = 11", "seed = 12"),
    ]:
        assert config_digest(parse_config_text(_edit(LASSO, old, new))) != base


def test_keys_and_values_are_case_insensitive_except_paths():
    cfg = parse_config_text(
        _edit(LASSO, "kind = lasso", "KIND = LASSO")
        .replace("[run]", "[run]\nout = /Tmp/MixedCase.csv")
    )
    assert cfg.problem["kind"] == "lasso"
    assert cfg.run["out"] == "/Tmp/MixedCase.csv"


def test_inline_comments_are_stripped():
    cfg = parse_config_text(_edit(LASSO, "eta = 0.05", "eta = 0.05  # step size"))
    assert cfg.algorithm["eta"] == "0.05"


def test_unknown_section_and_missing_section_rejected():
    with pytest.raises(ConfigurationError, match="unknown section"):
        parse_config_text(LASSO + "\n[plotting]\nstyle = dark\n")
    with pytest.raises(ConfigurationError, match=r"missing required section \[run\]"):
        parse_config_text(LASSO[: LASSO.index("[run]")])


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigurationError, match="valid keys.*n_per_client"):
        parse_config_text(_edit(LASSO, "alpha = 0.05", "aalpha = 0.05"))


def test_missing_required_key_named():
    with pytest.raises(ConfigurationError, match="missing required key.*sparsity"):
        parse_config_text(_edit(LASSO, "sparsity = 0.3\n", ""))


def test_default_section_and_duplicate_keys_rejected():
    with pytest.raises(ConfigurationError, match="DEFAULT"):
        parse_config_text("[DEFAULT]\nx = 1\n" + LASSO)
    with pytest.raises(ConfigurationError, match="malformed"):
        parse_config_text(_edit(LASSO, "eta = 0.05", "eta = 0.05\neta = 0.06"))


def test_non_numeric_values_diagnosed_with_key_path():
    with pytest.raises(ConfigurationError, match="problem.dim must be an integer"):
        parse_config_text(_edit(LASSO, "dim = 10", "dim = ten"))
    with pytest.raises(ConfigurationError, match="algorithm.eta must be a number"):
        parse_config_text(_edit(LASSO, "eta = 0.05", "eta = fast"))


def test_partition_grammar():
    ok = parse_config_text(_edit(LASSO, "alpha = 0.05", "alpha = 0.05\npartition = dirichlet:0.5"))
    assert ok.problem["partition"] == "dirichlet:0.5"
    with pytest.raises(ConfigurationError, match="dirichlet"):
        parse_config_text(_edit(LASSO, "alpha = 0.05", "alpha = 0.05\npartition = dirichlet"))
    with pytest.raises(ConfigurationError, match="must be > 0"):
        parse_config_text(_edit(LASSO, "alpha = 0.05", "alpha = 0.05\npartition = dirichlet:-1"))
    with pytest.raises(ConfigurationError, match="partition"):
        parse_config_text(_edit(LASSO, "alpha = 0.05", "alpha = 0.05\npartition = sorted"))


# ---------------------------------------------------------------------------
# shield token grammar


def test_compress_tokens():
    assert parse_compress_token("none").kind == "none"
    assert parse_compress_token("sign").kind == "sign"
    q = parse_compress_token("qsgd:8")
    assert (q.kind, q.levels) == ("qsgd", 8)
    t = parse_compress_token("topk:5")
    assert (t.kind, t.k) == ("topk", 5)
    v = parse_compress_token("varbudget:0.25")
    assert (v.kind, v.budget) == ("varbudget", 0.25)
    for bad in ("gzip", "qsgd", "sign:2", "topk:1,2"):
        with pytest.raises(ConfigurationError):
            parse_compress_token(bad)


def test_robust_tokens():
    k = parse_robust_token("krum:2")
    assert (k.rule, k.f) == ("krum", 2)
    assert parse_robust_token("median").rule == "median"
    t = parse_robust_token("tmean:0.25")
    assert (t.rule, t.beta) == ("tmean", 0.25)
    for bad in ("krum", "tmean", "mode", "median:1"):
        with pytest.raises(ConfigurationError):
            parse_robust_token(bad)


def test_dp_tokens():
    lap = parse_dp_token("laplace:1.5,0.5")
    assert (lap.mechanism, lap.epsilon, lap.clip) == ("laplace", 1.5, 0.5)
    g = parse_dp_token("gaussian:2.0,1e-5,1.0")
    assert (g.mechanism, g.epsilon, g.delta, g.clip) == ("gaussian", 2.0, 1e-5, 1.0)
    for bad in ("laplace:1.0", "gaussian:1,2", "exponential:1,2"):
        with pytest.raises(ConfigurationError):
            parse_dp_token(bad)


def test_byzantine_tokens():
    b = parse_byzantine_token("scale:2,100")
    assert (b.count, b.factor) == (2, 100.0)
    assert parse_byzantine_token("none").count == 0
    with pytest.raises(ConfigurationError):
        parse_byzantine_token("scale:2")


# ---------------------------------------------------------------------------
# compatibility table


def test_variant_requires_matching_problem_kind():
    with pytest.raises(ConfigurationError, match="variant=lrme runs on kind=lrme"):
        parse_config_text(
            _edit(LASSO, "family = first-order\nt = 5\neta = 0.05", "family = admm\nvariant = lrme")
        )


def test_first_order_rejects_matrix_problems():
    with pytest.raises(ConfigurationError, match="first-order"):
        parse_config_text(
            _edit(LRME, "family = admm\nvariant = lrme\nrho = 100.0\nt = 10\ni = 20", "family = first-order")
        )


def test_mtl_case_a_needs_identity_mapping():
    mtl = """
[problem]
kind = mtl
seed = 2
n_clients = 5
n_tasks = 5
dim = 6
mapping = random

[algorithm]
family = admm
variant = mtl-a

[run]
rounds = 5
seed = 1
"""
    with pytest.raises(ConfigurationError, match="mapping = identity"):
        parse_config_text(mtl)
    parse_config_text(_edit(mtl, "mapping = random", "mapping = identity"))


def test_mtl_case_c_needs_trace_square_reg():
    mtl_c = """
[problem]
kind = mtl
seed = 2
n_clients = 5
n_tasks = 3
dim = 6
mapping = random
reg = nuclear

[algorithm]
family = admm
variant = mtl-c

[run]
rounds = 5
seed = 1
"""
    with pytest.raises(ConfigurationError, match="trace-square"):
        parse_config_text(mtl_c)
    fixed = _edit(mtl_c, "reg = nuclear", "reg = trace-square")
    parse_config_text(fixed)
    with pytest.raises(ConfigurationError, match="reg = nuclear"):
        parse_config_text(_edit(fixed, "variant = mtl-c", "variant = mtl-b"))


def test_admm_confined_to_server_topologies():
    with pytest.raises(ConfigurationError, match="star or tree"):
        parse_config_text(_edit(LRME, "[run]", "[topology]\nkind = ring\n\n[run]"))
    parse_config_text(_edit(LRME, "[run]", "[topology]\nkind = tree\nfanout = 2\n\n[run]"))


def test_shields_confined_to_first_order():
    with pytest.raises(ConfigurationError, match="first-order only"):
        parse_config_text(_edit(LRME, "[run]", "[shield]\ncompress = sign\n\n[run]"))


def test_peer_topologies_reject_sampling_shields_and_server_accel():
    ring = _edit(LASSO, "[run]", "[topology]\nkind = ring\n\n[run]")
    parse_config_text(ring)
    with pytest.raises(ConfigurationError, match="sample_fraction"):
        parse_config_text(_edit(ring, "seed = 11", "seed = 11\nsample_fraction = 0.5"))
    with pytest.raises(ConfigurationError, match="server topology"):
        parse_config_text(_edit(ring, "[topology]", "[shield]\ndp = gaussian:1.0,1e-5,1.0\n\n[topology]"))
    with pytest.raises(ConfigurationError, match="no server state"):
        parse_config_text(
            _edit(ring, "t = 5", "t = 5\naccel = control-variate\nscope = global")
        )
    with pytest.raises(ConfigurationError, match="no server state"):
        parse_config_text(_edit(ring, "t = 5", "t = 5\naccel = momentum\nscope = global"))
    parse_config_text(_edit(ring, "t = 5", "t = 5\naccel = momentum"))


def test_robust_needs_star_and_plain_accel():
    with pytest.raises(ConfigurationError, match="topology.kind = star"):
        parse_config_text(
            _edit(
                _edit(LASSO, "[run]", "[shield]\nrobust = krum:1\n\n[run]"),
                "[shield]",
                "[topology]\nkind = tree\nfanout = 2\n\n[shield]",
            )
        )
    with pytest.raises(ConfigurationError, match="accel = none"):
        parse_config_text(
            _edit(
                _edit(LASSO, "t = 5", "t = 5\naccel = momentum"),
                "[run]",
                "[shield]\nrobust = median\n\n[run]",
            )
        )


def test_control_variate_requires_global_scope():
    with pytest.raises(ConfigurationError, match="scope=global"):
        parse_config_text(_edit(LASSO, "t = 5", "t = 5\naccel = control-variate"))


def test_weight_echo_checked_against_problem():
    with pytest.raises(ConfigurationError, match="does not match problem.lambda"):
        parse_config_text(_edit(LRME, "i = 20", "i = 20\nlambda = 5.0"))
    parse_config_text(_edit(LRME, "i = 20", "i = 20\nlambda = 20.0"))
    with pytest.raises(ConfigurationError, match="does not apply"):
        parse_config_text(_edit(LRME, "i = 20", "i = 20\nmu = 1.0"))


def test_cluster_assignment_length_checked():
    clustered = _edit(
        LASSO, "[run]", "[topology]\nkind = clustered\nclusters = 0,0,1\npattern = hub-gossip\n\n[run]"
    )
    with pytest.raises(ConfigurationError, match="3 assignments but the problem has 4"):
        parse_config_text(clustered)
    parse_config_text(_edit(clustered, "clusters = 0,0,1", "clusters = 0,0,1,1"))


def test_run_block_ranges():
    with pytest.raises(ConfigurationError, match="rounds must be >= 0"):
        parse_config_text(_edit(LASSO, "rounds = 30", "rounds = -1"))
    with pytest.raises(ConfigurationError, match=r"sample_fraction must be in \(0, 1\]"):
        parse_config_text(_edit(LASSO, "seed = 11", "seed = 11\nsample_fraction = 1.5"))
    with pytest.raises(ConfigurationError, match="tolerance must be > 0"):
        parse_config_text(_edit(LASSO, "seed = 11", "seed = 11\ntolerance = 0"))


# ---------------------------------------------------------------------------
# builders


def test_build_instance_lasso_shape_and_partition():
    inst = build_instance(parse_config_text(LASSO))
    assert inst.kind == "lasso"
    assert inst.num_clients == 4
    assert inst.client(1).features.shape == (15, 10)
    assert inst.oracle is not None
    skewed = build_instance(
        parse_config_text(_edit(LASSO, "alpha = 0.05", "alpha = 0.05\npartition = dirichlet:0.5"))
    )
    sizes = {c.size for c in skewed.clients}
    assert len(sizes) > 1


def test_build_instance_oracle_switch():
    inst = build_instance(parse_config_text(_edit(LASSO, "seed = 11", "seed = 11\noracle = off")))
    assert inst.oracle is None


def test_build_topology_kinds():
    assert build_topology(parse_config_text(LASSO)).kind == "star"
    tree = build_topology(
        parse_config_text(_edit(LRME, "[run]", "[topology]\nkind = tree\nfanout = 2\n\n[run]"))
    )
    assert tree.kind == "tree" and tree.n_clients == 4
    clustered = build_topology(
        parse_config_text(
            _edit(
                LASSO,
                "[run]",
                "[topology]\nkind = clustered\nclusters = 0,0,1,1\npattern = client-gossip\n\n[run]",
            )
        )
    )
    assert clustered.clusters == (0, 0, 1, 1)


def test_build_shield_wires_all_four_operators():
    cfg = parse_config_text(
        _edit(
            LASSO,
            "[run]",
            "[shield]\ncompress = qsgd:4\nrobust = none\ndp = gaussian:1.0,1e-5,0.5\nbyzantine = scale:1,10\n\n[run]",
        )
    )
    spec = build_shield(cfg)
    assert spec.compression.kind == "qsgd" and spec.compression.levels == 4
    assert spec.dp.mechanism == "gaussian" and spec.dp.clip == 0.5
    assert spec.byzantine.count == 1 and spec.byzantine.factor == 10.0
    assert not spec.is_plain
    assert build_shield(parse_config_text(LASSO)).is_plain


def test_build_algorithm_first_order_plan_and_robust():
    cfg = parse_config_text(
        _edit(
            _edit(LASSO, "t = 5", "t = 5\nbatch = 5"),
            "[run]",
            "[shield]\nrobust = krum:1\n\n[run]",
        )
    )
    algo = build_algorithm(cfg, build_instance(cfg))
    assert isinstance(algo, FirstOrderAlgorithm)
    assert algo.plan.steps == 5 and algo.plan.eta == 0.05 and algo.plan.batch == 5
    assert algo.robust.rule == "krum" and algo.robust.f == 1


def test_build_algorithm_admm_params():
    cfg = parse_config_text(LRME)
    algo = build_algorithm(cfg, build_instance(cfg))
    assert isinstance(algo, LowRankAdmm)
    assert algo.params.rho == 100.0
    assert algo.params.local_steps == 10
    assert algo.params.prox_iters == 20
    assert algo.params.eta_global is None  # auto


def test_build_algorithm_admm_variants_and_mf_default_rho():
    mtl = parse_config_text(
        """
[problem]
kind = mtl
seed = 2
n_clients = 3
n_tasks = 3
dim = 5
mapping = identity

[algorithm]
family = admm
variant = mtl-a

[run]
rounds = 5
seed = 1
"""
    )
    algo = build_algorithm(mtl, build_instance(mtl))
    assert isinstance(algo, MultiTaskAdmm) and algo.server_mode == "identity-svt"

    mf = parse_config_text(
        """
[problem]
kind = mf
seed = 4
n_users = 6
n_items = 5
rank = 2
noise_sigma = 0.01

[algorithm]
family = admm
variant = mf

[run]
rounds = 5
seed = 1
"""
    )
    mf_algo = build_algorithm(mf, build_instance(mf))
    assert isinstance(mf_algo, FactorizationAdmm)
    assert mf_algo.params.rho == 2.0


def test_run_from_config_repeats_exactly_and_override_changes_digest():
    cfg = parse_config_text(LASSO)
    res1, rep1 = run_from_config(cfg)
    res2, rep2 = run_from_config(cfg)
    assert [m.objective for m in res1.metrics] == [m.objective for m in res2.metrics]
    assert rep1 == rep2
    res3, rep3 = run_from_config(cfg, seed_override=99)
    assert rep3.config_digest != rep1.config_digest
    assert config_digest(with_run_seed(cfg, 99)) == rep3.config_digest


def test_report_carries_oracle_gap_and_tolerance_round():
    _, report = run_from_config(parse_config_text(LASSO))
    assert report.oracle_gap is not None and report.oracle_gap >= -1e-9
    assert report.rounds_to_tolerance is not None


# ---------------------------------------------------------------------------
# command line


def _write(tmp_path, name: str, text: str) -> str:
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_cli_run_writes_ledger_and_report(tmp_path, capsys):
    path = _write(tmp_path, "lasso.ini", LASSO)
    out = str(tmp_path / "ledger.csv")
    assert cli.main(["run", "--config", path, "--out", out]) == 0
    table = capsys.readouterr().out
    assert "final objective" in table and "oracle gap" in table
    rows = read_metrics_csv(out)
    assert len(rows) == 30
    assert rows[0]["round"] == 1


def test_cli_run_byte_identical_ledgers(tmp_path):
    path = _write(tmp_path, "lasso.ini", LASSO)
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert cli.main(["run", "--config", path, "--out", a]) == 0
    assert cli.main(["run", "--config", path, "--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_cli_run_zero_rounds_header_only(tmp_path):
    path = _write(tmp_path, "empty.ini", _edit(LASSO, "rounds = 30", "rounds = 0"))
    out = str(tmp_path / "empty.csv")
    assert cli.main(["run", "--config", path, "--out", out]) == 0
    text = open(out).read()
    assert text == "round,objective,residual,bytes_up,bytes_down,sampled_count\n"


def test_cli_exit_codes(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "absent.ini")]) == 2
    bad = _write(tmp_path, "bad.ini", _edit(LASSO, "alpha = 0.05", "aalpha = 0.05"))
    assert cli.main(["run", "--config", bad]) == 2
    hot = _write(tmp_path, "hot.ini", _edit(LASSO, "eta = 0.05", "eta = 50.0"))
    assert cli.main(["run", "--config", hot]) == 3


def test_cli_seed_precedence(tmp_path, capsys, monkeypatch):
    path = _write(tmp_path, "lasso.ini", LASSO)
    base = config_digest(parse_config(path))
    monkeypatch.setenv("FEDLAB_SEED", "77")
    assert cli.main(["run", "--config", path]) == 0
    env_digest = config_digest(with_run_seed(parse_config(path), 77))
    assert env_digest != base
    assert cli.main(["run", "--config", path, "--seed", "11"]) == 0
    err = capsys.readouterr().err
    assert "seed 77 (FEDLAB_SEED)" in err
    assert "seed 11 (--seed)" in err
    monkeypatch.setenv("FEDLAB_SEED", "many")
    assert cli.main(["run", "--config", path]) == 2


def test_cli_compare_identical_configs_identical_rows(tmp_path, capsys):
    path = _write(tmp_path, "lasso.ini", LASSO)
    assert cli.main(["compare", "--config", path, "--config", path]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[2] == out[3]


def test_cli_compare_needs_two_configs_on_one_problem(tmp_path):
    path = _write(tmp_path, "lasso.ini", LASSO)
    assert cli.main(["compare", "--config", path]) == 2
    other = _write(tmp_path, "other.ini", _edit(LASSO, "seed = 3", "seed = 4"))
    assert cli.main(["compare", "--config", path, "--config", other]) == 2


def test_cli_compare_tabulates_both_rows(tmp_path, capsys):
    dense = _write(tmp_path, "dense.ini", LASSO)
    signed = _write(
        tmp_path, "signed.ini", _edit(LASSO, "[run]", "[shield]\ncompress = sign\n\n[run]")
    )
    assert cli.main(["compare", "--config", dense, "--config", signed, "--tol", "1e-2"]) == 0
    out = capsys.readouterr().out
    assert "dense.ini" in out and "signed.ini" in out
    assert "bytes up/round" in out
    with pytest.raises(SystemExit):
        cli.main(["compare", "--config", dense, "--config", signed, "--tol", "oops"])
    assert cli.main(["compare", "--config", dense, "--config", signed, "--tol", "-1"]) == 2


def test_cli_oracle_prints_objective(tmp_path, capsys):
    path = _write(tmp_path, "lasso.ini", LASSO)
    assert cli.main(["oracle", "--config", path]) == 0
    out = capsys.readouterr().out
    assert "oracle objective" in out and "proximal" in out


def test_cli_rejects_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["plot", "--config", "x"])
