"""Batch actor-critic baseline: fresh restart trajectories refresh the critic before every actor step."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CmdpModel
from .pdnac import (
    MetricsTrace,
    StepSizes,
    actor_update,
    attach_averages,
    behavior_update,
    check_invariants,
    critic_update,
    critic_values,
    dual_update,
    evaluate_record,
    init_runner,
)

SAMPLES_COMMENT = ("batch actor-critic: samples = actor_iteration * trajectories_per_update "
                   "* trajectory_length (one sample per transition)")


def default_trajectory_length(gamma: float) -> int:
    # round first so 4 / (1 - 0.9) = 40.000000000000004 gives 40
    return math.ceil(round(4.0 / (1.0 - gamma), 9))


@dataclass(frozen=True)
class BatchConfig:
    sizes: StepSizes
    trajectories_per_update: int = 5
    trajectory_length: int | None = None

    def __post_init__(self):
        if self.trajectories_per_update < 1:
            raise ValueError("need at least one trajectory per update")
        if self.trajectory_length is not None and self.trajectory_length < 1:
            raise ValueError("trajectory length must be at least 1")

    @property
    def actor_iterations(self) -> int:
        return self.sizes.horizon


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # vectorized draw over rows of ``cdf`` (shape (M, n)) with one uniform per row
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def generate_trajectories(model: CmdpModel, behavior: np.ndarray, M: int, T: int,
                          stream) -> tuple[np.ndarray, np.ndarray]:
    """``M`` restarts from ``rho`` of ``T`` transitions each under a fixed policy.

    Returns state and action arrays of shape (M, T + 1). Uniforms are consumed
    trajectory-major per time step, so results depend only on the stream.
    """
    cum_p = np.cumsum(model.transition, axis=2)
    cum_b = np.cumsum(behavior, axis=1)
    cum_rho = np.cumsum(model.initial_dist)
    states = np.empty((M, T + 1), dtype=np.int64)
    actions = np.empty((M, T + 1), dtype=np.int64)
    u = np.array([stream.next() for _ in range(2 * M * (T + 1))]).reshape(T + 1, 2, M)
    states[:, 0] = _inverse_cdf(np.broadcast_to(cum_rho, (M, len(cum_rho))), u[0, 0])
    actions[:, 0] = _inverse_cdf(cum_b[states[:, 0]], u[0, 1])
    for t in range(1, T + 1):
        states[:, t] = _inverse_cdf(cum_p[states[:, t - 1], actions[:, t - 1]], u[t, 0])
        actions[:, t] = _inverse_cdf(cum_b[states[:, t]], u[t, 1])
    return states, actions


def run_batch(model: CmdpModel, cfg: BatchConfig, seed: int, record_stride: int = 1,
              gap_stride: int | None = None, warm_start: np.ndarray | None = None,
              cap: float | None = None, optimum: float | None = None) -> MetricsTrace:
    """Batch baseline with the same actor, behavior and dual updates as the online runner.

    The critic persists across actor iterations; each iteration first runs
    TD(0) along ``M`` fresh trajectories (applied in trajectory order), then
    takes one actor/behavior/dual step from the refreshed critic.
    """
    if record_stride < 1 or (gap_stride is not None and gap_stride < 1):
        raise ValueError("strides must be at least 1")
    sizes = cfg.sizes
    M = cfg.trajectories_per_update
    T = cfg.trajectory_length or default_trajectory_length(model.gamma)
    K = cfg.actor_iterations
    state = init_runner(model, seed, sizes, warm_start, cap)
    records = []
    lo, hi = 0.0, 0.0

    def is_gap_point(k):
        return gap_stride is not None and (k % gap_stride == 0 or k == K)

    for k in range(K + 1):
        if k % record_stride == 0 or k == K or is_gap_point(k):
            records.append(evaluate_record(state, k, k * M * T, is_gap_point(k)))
            check_invariants(state)
        if k == K:
            break
        states, actions = generate_trajectories(model, state.behavior, M, T, state.rng)
        for m in range(M):
            for t in range(T):
                critic_update(state, (states[m, t], actions[m, t],
                                      states[m, t + 1], actions[m, t + 1]), sizes.beta)
        values = critic_values(state)
        actor_update(state, sizes.alpha)
        state.behavior = behavior_update(state.policy, state.epsilon)
        dual_update(state, sizes.eta, values)
        state.iteration += 1
        if state.lam.size:
            lo, hi = min(lo, float(state.lam.min())), max(hi, float(state.lam.max()))
            assert lo >= 0.0 and hi <= state.cap, "dual iterate left [0, cap]"

    trace = MetricsTrace(records, model.num_constraints, state.policy.copy(), state.lam.copy(),
                         (lo, hi), comment=SAMPLES_COMMENT)
    attach_averages(trace, K, optimum)
    return trace
