import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from cmdp_ac.core import CmdpModel, ModelError, lagrangian_value, signal_values, uniform_policy
from cmdp_ac.envs import random_cmdp
from cmdp_ac.oracles import (
    DualSolveReport,
    constraint_values,
    constraint_violation,
    dual_function,
    dual_minimize,
    duality_gap,
    feasible_warm_start,
    gap_bound,
    is_feasible,
    multiplier_bound,
    optimal_value_grid,
    value_iteration,
)

from conftest import cycle_model, random_policy, single_state


def lp_optimum(model: CmdpModel) -> float:
    """Constrained optimum from the occupancy-measure linear program (test-only oracle)."""
    S, A, g = model.num_states, model.num_actions, model.gamma
    n = S * A
    flow = np.zeros((S, n))
    for s in range(S):
        for a in range(A):
            flow[s, s * A + a] += 1.0
            flow[:, s * A + a] -= g * model.transition[s, a]
    r = model.rewards.reshape(model.num_constraints + 1, n) / (1 - g)
    res = linprog(-r[0], A_ub=-r[1:] if model.num_constraints else None,
                  b_ub=-model.thresholds if model.num_constraints else None,
                  A_eq=flow, b_eq=(1 - g) * model.initial_dist, bounds=(0, None),
                  method="highs")
    assert res.status == 0, res.message
    return -res.fun


# -- value iteration -----------------------------------------------------------


def test_vi_single_state():
    m = single_state([[1.0, 0.5]])
    V, greedy = value_iteration(m, m.rewards[0])
    np.testing.assert_allclose(V, [10.0])
    np.testing.assert_array_equal(greedy, [[1.0, 0.0]])


def test_vi_zero_reward(small_random):
    V, greedy = value_iteration(small_random, np.zeros((3, 2)))
    assert np.all(V == 0)
    np.testing.assert_allclose(greedy.sum(axis=1), 1)


def test_vi_cycle():
    m = cycle_model(num_actions=2)
    V, _ = value_iteration(m, m.rewards[0])
    np.testing.assert_allclose(V, [4 / 3, 2 / 3], atol=1e-12)


@given(st.integers(0, 10_000))
def test_vi_optimality_and_greedy(seed):
    m = random_cmdp(4, 3, 0, seed)
    V, greedy = value_iteration(m, m.rewards[0], tolerance=1e-10)
    Q = m.rewards[0] + m.gamma * m.transition @ V
    assert np.max(np.abs(Q.max(axis=1) - V)) <= 1e-10
    assert set(np.unique(greedy)) <= {0.0, 1.0}
    v_greedy = signal_values(m, greedy)[0]
    assert abs(v_greedy - m.initial_dist @ V) <= 1e-10 / (1 - m.gamma)
    # no deterministic policy does better
    rng = np.random.default_rng(seed)
    for _ in range(5):
        pi = random_policy(rng, 4, 3)
        assert signal_values(m, pi)[0] <= m.initial_dist @ V + 1e-9


# -- dual function ---------------------------------------------------------------


def test_dual_function_zero_lambda(small_random):
    V, _ = value_iteration(small_random, small_random.rewards[0])
    val, _ = dual_function(small_random, [0.0])
    assert val == pytest.approx(small_random.initial_dist @ V, abs=1e-10)


def test_dual_function_null_utility(small_random):
    r = np.array(small_random.rewards)
    r[1] = 0.0
    m = CmdpModel(small_random.transition, r, [0.0], small_random.initial_dist, 0.9)
    vals = [dual_function(m, [lam])[0] for lam in (0.0, 1.0, 17.0)]
    assert max(vals) - min(vals) <= 1e-10


def test_dual_function_hand_value():
    # V_0 = 10, V_1 = 5: 10 + 2 * (5 - 3) = 14
    m = single_state([[1.0], [0.5]], thresholds=[3.0])
    val, pi = dual_function(m, [2.0])
    assert val == pytest.approx(14.0, abs=1e-9)
    np.testing.assert_array_equal(pi, [[1.0]])


def test_dual_function_hand_value_small_threshold():
    # 10 + 2 * (5 - 0.3)
    m = single_state([[1.0], [0.5]], thresholds=[0.3])
    assert dual_function(m, [2.0])[0] == pytest.approx(19.4, abs=1e-9)


def test_dual_function_rejects_negative(small_random):
    with pytest.raises(ModelError):
        dual_function(small_random, [-0.1])


@given(st.integers(0, 10_000))
def test_weak_duality(seed):
    rng = np.random.default_rng(seed)
    m = random_cmdp(3, 2, 2, seed)
    pi = uniform_policy(m)  # feasible by construction
    for _ in range(4):
        lam = rng.exponential(2.0, size=2)
        assert dual_function(m, lam)[0] >= lagrangian_value(m, pi, lam) - 1e-8


@given(st.integers(0, 10_000), st.floats(0, 1))
def test_dual_convexity(seed, t):
    rng = np.random.default_rng(seed)
    m = random_cmdp(3, 2, 2, seed)
    l1, l2 = rng.exponential(3.0, size=2), rng.exponential(3.0, size=2)
    mid = dual_function(m, t * l1 + (1 - t) * l2)[0]
    assert mid <= t * dual_function(m, l1)[0] + (1 - t) * dual_function(m, l2)[0] + 1e-8


# -- dual minimization -------------------------------------------------------------


def test_dual_minimize_inactive_constraint():
    m0 = random_cmdp(3, 2, 0, 5)
    r = np.concatenate([m0.rewards, 2 * m0.rewards])
    m = CmdpModel(m0.transition, r, [-1.0], m0.initial_dist, 0.9)
    rep = dual_minimize(m, step=0.5, max_iter=200)
    V, _ = value_iteration(m0, m0.rewards[0])
    np.testing.assert_allclose(rep.lambda_star, [0.0])
    assert rep.dual_value == pytest.approx(m0.initial_dist @ V, abs=1e-10)


def test_dual_minimize_single_state_slack():
    m = single_state([[1.0], [0.5]], thresholds=[0.3])
    rep = dual_minimize(m, step=1.0, max_iter=50)
    np.testing.assert_allclose(rep.lambda_star, [0.0])
    assert rep.dual_value == pytest.approx(10.0)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_dual_minimize_matches_lp(seed):
    m = random_cmdp(3, 2, 1, seed)
    rep = dual_minimize(m, step=2.0, max_iter=3000)
    opt = lp_optimum(m)
    assert rep.dual_value >= opt - 1e-8
    assert rep.dual_value - opt <= 1e-3


def test_dual_minimize_against_grid():
    m = random_cmdp(3, 2, 1, 11)
    rep = dual_minimize(m, step=2.0, max_iter=2000)
    best, _ = optimal_value_grid(m, 0.05)
    assert -1e-6 <= rep.dual_value - best <= gap_bound(m, 0.05)


def test_dual_report_serialization():
    m = random_cmdp(3, 2, 2, 1)
    rep = dual_minimize(m, max_iter=20)
    doc = json.loads(rep.to_json())
    assert {"lambda_star", "dual_value", "iterations", "final_subgradient_norm"} <= set(doc)
    back = DualSolveReport.from_dict(doc)
    np.testing.assert_array_equal(back.lambda_star, rep.lambda_star)
    assert back.dual_value == rep.dual_value
    assert rep.final_subgradient_norm >= 0 and math.isfinite(rep.dual_value)


@pytest.mark.parametrize("seed", range(5))
def test_multiplier_bound(seed):
    m = random_cmdp(3, 2, 2, seed)
    rep = dual_minimize(m, step=2.0, max_iter=1000)
    assert np.max(rep.lambda_star) <= multiplier_bound(m, uniform_policy(m)) + 1e-6


def test_multiplier_bound_needs_strict_probe(small_random):
    v = constraint_values(small_random, uniform_policy(small_random))
    with pytest.raises(ModelError):
        multiplier_bound(small_random.with_thresholds(v + 0.1), uniform_policy(small_random))


# -- feasibility and gap --------------------------------------------------------------


def test_constraint_violation_hand():
    # V_1 = -0.05 / 0.1 = -0.5
    m = single_state([[1.0], [-0.05]], thresholds=[-0.01])
    assert constraint_violation(m, np.ones((1, 1))) == pytest.approx(0.49)


def test_constraint_violation_slack(small_random):
    assert constraint_violation(small_random, uniform_policy(small_random)) == 0.0


def test_constraint_violation_mixed():
    m = single_state([[1.0], [-0.05], [0.2]], thresholds=[-0.01, 1.0])
    assert constraint_violation(m, np.ones((1, 1))) == pytest.approx(0.49)


def test_gap_infinite_when_infeasible():
    m = single_state([[1.0], [-0.05]], thresholds=[-0.01])
    assert math.isinf(duality_gap(m, np.ones((1, 1)), [1.0]))


def test_gap_zero_at_saddle():
    m = single_state([[1.0], [0.5]], thresholds=[5.0])  # V_1 = 5 exactly: zero slack
    assert duality_gap(m, np.ones((1, 1)), [3.0]) == pytest.approx(0.0, abs=1e-9)


def test_gap_uniform_lambda_zero(small_random):
    pi = uniform_policy(small_random)
    V, _ = value_iteration(small_random, small_random.rewards[0])
    expected = small_random.initial_dist @ V - signal_values(small_random, pi)[0]
    assert duality_gap(small_random, pi, [0.0]) == pytest.approx(expected, abs=1e-10)


@given(st.integers(0, 10_000))
def test_gap_nonnegative(seed):
    rng = np.random.default_rng(seed)
    m = random_cmdp(3, 2, 1, seed)
    g = duality_gap(m, random_policy(rng, 3, 2), rng.exponential(1.0, size=1))
    assert math.isinf(g) or g >= -1e-8


# -- grid oracle --------------------------------------------------------------------


def test_grid_unconstrained_greedy_feasible():
    m0 = random_cmdp(2, 2, 0, 4)
    m = CmdpModel(m0.transition, np.concatenate([m0.rewards, m0.rewards]), [0.0],
                  m0.initial_dist, m0.gamma)
    V, greedy = value_iteration(m, m.rewards[0])
    assert is_feasible(m, greedy)
    best, pi = optimal_value_grid(m, 0.05)
    assert best == pytest.approx(m.initial_dist @ V, abs=1e-9)


def test_grid_infeasible_marker(small_random):
    m = small_random.with_thresholds([1e3])
    best, pi = optimal_value_grid(m, 0.25)
    assert best == -math.inf and pi is None


def test_grid_guard():
    with pytest.raises(ModelError):
        optimal_value_grid(random_cmdp(5, 2, 1, 0), 0.5)


def test_grid_regression_two_state():
    m = random_cmdp(2, 2, 1, 0)
    best, pi = optimal_value_grid(m, 0.05)
    assert is_feasible(m, pi)
    assert best == pytest.approx(lp_optimum(m), abs=gap_bound(m, 0.05))
    assert best <= lp_optimum(m) + 1e-9


def test_feasible_warm_start(small_random):
    pi = feasible_warm_start(small_random)
    assert is_feasible(small_random, pi)
    assert np.all(pi > 0)
