"""Tests for the first-order local update machinery.

The scalar quadratic with features [[1/sqrt(2)]] and label 3/sqrt(2) has
loss 0.5*(x-3)^2 and gradient x-3, so plain local steps follow the exact
geometric recursion x_t = 3*(1 - (1-eta)^t); momentum and control-variate
recursions are hand-rolled against the same function.
"""

from __future__ import annotations

import numpy as np
import pytest

from fedlab.core.rng import Rng
from fedlab.core.topology import ring_topology, star_topology
from fedlab.errors import ConfigurationError, ParameterError
from fedlab.firstorder import (
    AccelState,
    FirstOrderAlgorithm,
    LocalPlan,
    accel_update,
    direction,
    local_epochs,
    mirror_step,
)
from fedlab.problems import (
    ClientDataset,
    ProblemInstance,
    RegSpec,
    gen_lrme,
    gen_quadratic,
    local_gradient,
)
from fedlab.shield import RobustSpec


def _scalar_instance():
    root = 1.0 / np.sqrt(2.0)
    client = ClientDataset(features=np.array([[root]]), labels=np.array([3.0 * root]))
    return ProblemInstance(kind="quadratic", clients=(client,), regularizer=RegSpec("none", 0.0))


# ---------------------------------------------------------------------------
# plans and state containers


def test_local_plan_validation():
    with pytest.raises(ParameterError):
        LocalPlan(steps=0)
    with pytest.raises(ParameterError):
        LocalPlan(eta=0.0)
    with pytest.raises(ParameterError):
        LocalPlan(eta=float("nan"))
    with pytest.raises(ParameterError):
        LocalPlan(batch=0)


def test_accel_state_validation():
    with pytest.raises(ParameterError):
        AccelState(kind="nesterov")
    with pytest.raises(ParameterError):
        AccelState(beta=1.0)
    with pytest.raises(ParameterError):
        AccelState(beta=-0.1)


# ---------------------------------------------------------------------------
# single steps


def test_mirror_step_plain_is_gradient_step():
    w = np.array([1.0, -2.0])
    g = np.array([0.5, 0.5])
    out = mirror_step(w, g, 0.2, RegSpec("none", 0.0))
    assert np.array_equal(out, np.array([0.9, -2.1]))


def test_mirror_step_l1_applies_soft_threshold():
    w = np.array([1.0, -0.5, 0.1])
    out = mirror_step(w, np.zeros(3), 1.0, RegSpec("l1", 0.3))
    assert np.allclose(out, [0.7, -0.2, 0.0], atol=1e-15)


def test_mirror_step_rejects_matrix_regularizers():
    with pytest.raises(ConfigurationError):
        mirror_step(np.zeros(2), np.zeros(2), 0.1, RegSpec("nuclear", 1.0))
    with pytest.raises(ParameterError):
        mirror_step(np.zeros(2), np.zeros(2), 0.0, RegSpec("none", 0.0))


def test_direction_modes():
    g = np.array([1.0, 2.0])
    assert np.array_equal(direction(g, AccelState()), g)

    warm = AccelState(kind="momentum", beta=0.5, momentum=np.array([4.0, 0.0]))
    assert np.array_equal(direction(g, warm), np.array([3.0, 2.0]))
    cold = AccelState(kind="momentum", beta=0.5, momentum=None)
    assert np.array_equal(direction(g, cold), g)

    cv = AccelState(
        kind="control-variate",
        control_local=np.array([1.0, 1.0]),
        control_global=np.array([0.25, 0.0]),
    )
    assert np.array_equal(direction(g, cv), np.array([0.25, 1.0]))


def test_accel_update_argument_contracts():
    with pytest.raises(ParameterError):
        accel_update(AccelState(kind="momentum"))
    with pytest.raises(ParameterError):
        accel_update(AccelState(kind="control-variate"), grad=np.zeros(2))


# ---------------------------------------------------------------------------
# local rounds against hand-rolled recursions


def test_local_epochs_follows_geometric_recursion():
    inst = _scalar_instance()
    plan = LocalPlan(steps=5, eta=0.1)
    gen = np.random.default_rng(0)
    model, _ = local_epochs(inst, 1, np.zeros(1), plan, AccelState(), inst.regularizer, gen)
    expected = 3.0 * (1.0 - 0.9**5)
    assert abs(model[0] - expected) <= 1e-12


def test_local_epochs_momentum_matches_hand_rolled():
    inst = _scalar_instance()
    plan = LocalPlan(steps=3, eta=0.1)
    gen = np.random.default_rng(0)
    state = AccelState(kind="momentum", beta=0.5)
    model, out = local_epochs(inst, 1, np.zeros(1), plan, state, inst.regularizer, gen)

    x, buf = 0.0, 0.0
    for t in range(3):
        g = x - 3.0
        buf = g if t == 0 else 0.5 * buf + g
        x = x - 0.1 * buf
    assert abs(model[0] - x) <= 1e-12
    assert abs(out.momentum[0] - buf) <= 1e-12


def test_local_epochs_control_variate_refresh():
    inst = _scalar_instance()
    plan = LocalPlan(steps=5, eta=0.1)
    gen = np.random.default_rng(0)
    state = AccelState(
        kind="control-variate", control_local=np.zeros(1), control_global=np.zeros(1)
    )
    model, out = local_epochs(inst, 1, np.zeros(1), plan, state, inst.regularizer, gen)
    # with zero controls the walk is plain descent, and the refreshed local
    # control is the average step direction (start - end) / (steps * eta)
    expected_model = 3.0 * (1.0 - 0.9**5)
    assert abs(model[0] - expected_model) <= 1e-12
    assert abs(out.control_local[0] - (0.0 - expected_model) / 0.5) <= 1e-12


def test_local_epochs_nonzero_controls_shift_the_walk():
    inst = _scalar_instance()
    plan = LocalPlan(steps=2, eta=0.1)
    gen = np.random.default_rng(0)
    state = AccelState(
        kind="control-variate",
        control_local=np.array([1.0]),
        control_global=np.array([-1.0]),
    )
    model, out = local_epochs(inst, 1, np.zeros(1), plan, state, inst.regularizer, gen)
    x = 0.0
    for _ in range(2):
        x = x - 0.1 * ((x - 3.0) - 1.0 + (-1.0))
    assert abs(model[0] - x) <= 1e-12
    # c_local' = c_local - c_global + (start - end)/(steps*eta)
    assert abs(out.control_local[0] - (1.0 - (-1.0) + (0.0 - x) / 0.2)) <= 1e-12


def test_minibatch_permutation_covers_all_data():
    inst = gen_quadratic(2, 4, 6, 0.1, hetero=0.0, seed=3, with_oracle=False)
    plan_full = LocalPlan(steps=1, eta=0.05)
    plan_all = LocalPlan(steps=1, eta=0.05, batch=6)
    gen_a = Rng(7).stream("local-steps", 1, 1)
    gen_b = Rng(7).stream("local-steps", 1, 1)
    full, _ = local_epochs(inst, 1, np.zeros(4), plan_full, AccelState(), inst.regularizer, gen_a)
    batched, _ = local_epochs(inst, 1, np.zeros(4), plan_all, AccelState(), inst.regularizer, gen_b)
    # a full-size minibatch is the whole dataset in permuted order
    assert np.allclose(full, batched, atol=1e-12)


def test_minibatch_walk_is_stream_deterministic():
    inst = gen_quadratic(2, 4, 10, 0.1, hetero=0.5, seed=3, with_oracle=False)
    plan = LocalPlan(steps=7, eta=0.05, batch=3)
    runs = []
    for _ in range(2):
        gen = Rng(7).stream("local-steps", 2, 1)
        model, _ = local_epochs(inst, 1, np.zeros(4), plan, AccelState(), inst.regularizer, gen)
        runs.append(model)
    assert np.array_equal(runs[0], runs[1])
    other_gen = Rng(8).stream("local-steps", 2, 1)
    other, _ = local_epochs(inst, 1, np.zeros(4), plan, AccelState(), inst.regularizer, other_gen)
    assert not np.array_equal(runs[0], other)


# ---------------------------------------------------------------------------
# algorithm adapter contracts


def test_algorithm_rejects_matrix_instances():
    lrme = gen_lrme(4, 6, 2, 10, 0.01, seed=1, with_oracle=False)
    with pytest.raises(ConfigurationError):
        FirstOrderAlgorithm(lrme, LocalPlan())


def test_algorithm_accel_scope_contracts():
    inst = gen_quadratic(4, 3, 5, 0.1, hetero=0.0, seed=2, with_oracle=False)
    with pytest.raises(ConfigurationError):
        FirstOrderAlgorithm(inst, LocalPlan(), accel="adam")
    with pytest.raises(ConfigurationError):
        FirstOrderAlgorithm(inst, LocalPlan(), scope="cluster")
    with pytest.raises(ConfigurationError):
        FirstOrderAlgorithm(inst, LocalPlan(), accel="control-variate", scope="local")
    with pytest.raises(ConfigurationError):
        FirstOrderAlgorithm(
            inst, LocalPlan(), accel="momentum", robust=RobustSpec(rule="median")
        )


def test_algorithm_gossip_needs_local_state():
    inst = gen_quadratic(4, 3, 5, 0.1, hetero=0.0, seed=2, with_oracle=False)
    ring = ring_topology(4)
    cv = FirstOrderAlgorithm(inst, LocalPlan(), accel="control-variate", scope="global")
    with pytest.raises(ConfigurationError):
        cv.setup(ring, Rng(1))
    glob = FirstOrderAlgorithm(inst, LocalPlan(), accel="momentum", scope="global")
    with pytest.raises(ConfigurationError):
        glob.setup(ring, Rng(1))
    ok = FirstOrderAlgorithm(inst, LocalPlan(), accel="momentum", scope="local")
    ok.setup(ring, Rng(1))
    assert ok.peer_models.shape == (4, 3)


def test_broadcast_contents_track_accel_mode():
    inst = gen_quadratic(4, 3, 5, 0.1, hetero=0.0, seed=2, with_oracle=False)
    plain = FirstOrderAlgorithm(inst, LocalPlan())
    assert set(plain.broadcast()) == {"model"}
    assert plain.broadcast_bytes_per_client == 8 * 3

    glob = FirstOrderAlgorithm(inst, LocalPlan(), accel="momentum", scope="global")
    assert set(glob.broadcast()) == {"model", "momentum"}
    assert glob.broadcast_bytes_per_client == 16 * 3

    local = FirstOrderAlgorithm(inst, LocalPlan(), accel="momentum", scope="local")
    assert set(local.broadcast()) == {"model"}

    cv = FirstOrderAlgorithm(inst, LocalPlan(), accel="control-variate", scope="global")
    assert set(cv.broadcast()) == {"model", "control"}


def test_single_round_average_matches_manual():
    inst = gen_quadratic(3, 4, 5, 0.1, hetero=0.3, seed=9, with_oracle=False)
    alg = FirstOrderAlgorithm(inst, LocalPlan(steps=1, eta=0.05))
    rng = Rng(4)
    alg.setup(star_topology(3), rng)
    down = alg.broadcast()
    received = {}
    for cid in (1, 2, 3):
        entries = alg.client_update(cid, down, 1, rng)
        received[cid] = {"model": entries["model"].value}
    alg.aggregate(1, received, [1, 2, 3])
    # equal client sizes: plain mean of one-step updates
    expected = np.mean(
        [-0.05 * local_gradient(inst, cid, np.zeros(4)) for cid in (1, 2, 3)], axis=0
    )
    assert np.allclose(alg.model, expected, atol=1e-14)


def test_residual_is_prox_mapping_norm_for_lasso():
    from fedlab.problems import gen_lasso

    inst = gen_lasso(3, 5, 8, 0.4, 0.05, seed=1, with_oracle=False)
    alg = FirstOrderAlgorithm(inst, LocalPlan(steps=1, eta=0.1))
    res_at_zero = alg.residual()
    assert np.isfinite(res_at_zero) and res_at_zero > 0
    # at the oracle solution the prox mapping residual is tiny
    inst2 = gen_lasso(3, 5, 8, 0.4, 0.05, seed=1, with_oracle=True)
    alg2 = FirstOrderAlgorithm(inst2, LocalPlan(steps=1, eta=0.1))
    alg2.model = inst2.oracle.solution.copy()
    assert alg2.residual() <= 1e-6
