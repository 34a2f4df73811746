import numpy as np
import pytest

from cmdp_ac.batch import (
    SAMPLES_COMMENT,
    BatchConfig,
    default_trajectory_length,
    generate_trajectories,
    run_batch,
)
from cmdp_ac.core import CmdpModel, evaluate_all, uniform_policy
from cmdp_ac.envs import random_cmdp
from cmdp_ac.pdnac import StepSizes, UniformStream, behavior_update, schedule_from_horizon


def test_default_length():
    assert default_trajectory_length(0.9) == 40
    assert default_trajectory_length(0.5) == 8


@pytest.mark.parametrize("M, T", [(0, 5), (1, 0)])
def test_config_validation(M, T):
    with pytest.raises(ValueError):
        BatchConfig(StepSizes(0.1, 0.1, 0.1, 0.5, 5), M, T)


def test_trajectories_restart_from_rho():
    P = np.zeros((3, 2, 3))
    P[:, :, 2] = 1.0
    m = CmdpModel(P, np.zeros((1, 3, 2)), [], [0, 1, 0], 0.9)
    states, actions = generate_trajectories(m, np.full((3, 2), 0.5), 4, 3, UniformStream(0))
    assert states.shape == (4, 4)
    assert np.all(states[:, 0] == 1) and np.all(states[:, 1:] == 2)
    assert set(np.unique(actions)) <= {0, 1}


def test_trajectory_state_frequencies():
    m = random_cmdp(3, 2, 0, 1)
    beh = uniform_policy(m)
    states, _ = generate_trajectories(m, beh, 20_000, 1, UniformStream(2))
    freq = np.bincount(states[:, 0], minlength=3) / 20_000
    np.testing.assert_allclose(freq, m.initial_dist, atol=0.015)


def test_sample_accounting():
    m = random_cmdp(3, 2, 1, 0)
    cfg = BatchConfig(StepSizes(0.1, 0.1, 0.1, 0.5, 12), 3, 7)
    trace = run_batch(m, cfg, 0, record_stride=4)
    assert [r.k for r in trace.records] == [0, 4, 8, 12]
    assert all(r.samples == r.k * 3 * 7 for r in trace.records)
    assert trace.comment == SAMPLES_COMMENT
    assert trace.to_csv().startswith("# ")


def test_degenerate_batch_cost_matches_online():
    m = random_cmdp(3, 2, 1, 0)
    trace = run_batch(m, BatchConfig(StepSizes(0.1, 0.1, 0.1, 0.5, 5), 1, 1), 0)
    assert [r.samples for r in trace.records] == [0, 1, 2, 3, 4, 5]


def test_batch_deterministic():
    m = random_cmdp(4, 2, 2, 3)
    cfg = BatchConfig(schedule_from_horizon(200), 5)
    a = run_batch(m, cfg, 9, record_stride=20, gap_stride=50)
    b = run_batch(m, cfg, 9, record_stride=20, gap_stride=50)
    assert a.to_csv() == b.to_csv()


def test_batch_invariants():
    m = random_cmdp(3, 2, 2, 4)
    trace = run_batch(m, BatchConfig(StepSizes(3.0, 0.5, 0.2, 0.3, 100), 5, 10), 1,
                      record_stride=10, cap=4.0)
    lo, hi = trace.lambda_range
    assert 0.0 <= lo and hi <= 4.0


def test_frozen_policy_critic_error_shrinks_with_data():
    m = random_cmdp(3, 2, 1, 6)
    beh = behavior_update(uniform_policy(m), 0.5)
    _, Q = evaluate_all(m, beh)
    errs = {}
    for M in (1, 8):
        per_seed = []
        for seed in range(5):
            cfg = BatchConfig(StepSizes(0.0, 0.0, 0.05, 0.5, 40), M, 40)
            trace = run_batch(m, cfg, seed, record_stride=40, gap_stride=40)
            per_seed.append(np.max(trace.records[-1].critic_error))
        errs[M] = np.median(per_seed)
    assert errs[8] < errs[1]
