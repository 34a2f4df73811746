"""Tabular CMDP model and exact (non-learned) evaluation.

Array conventions used throughout the package:

* transitions ``P[s, a, s']``
* rewards ``r[i, s, a]`` with signal 0 the objective and 1..N the utilities
* policies ``pi[s, a]`` (row-stochastic)
* Q tables ``Q[s, a]`` for one signal, ``Q[i, s, a]`` for a bank
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DENSE_SOLVE_LIMIT = 4096
MAX_EVAL_ITERS = 100_000


class ModelError(ValueError):
    """Invalid model, policy or distribution."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CmdpModel:
    """A finite discounted CMDP with ``N`` utility constraints ``V_i >= b_i``."""

    transition: np.ndarray
    rewards: np.ndarray
    thresholds: np.ndarray
    initial_dist: np.ndarray
    gamma: float

    def __post_init__(self):
        P = _frozen(self.transition)
        r = _frozen(self.rewards)
        if r.ndim == 2:
            r = _frozen(r[None])
        b = _frozen(np.atleast_1d(np.asarray(self.thresholds, dtype=float)))
        rho = _frozen(self.initial_dist)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "thresholds", b)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "gamma", float(self.gamma))

        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ModelError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ModelError("transition probabilities must be finite and nonnegative")
        row_err = np.max(np.abs(P.sum(axis=2) - 1.0))
        if row_err > 1e-12:
            raise ModelError(f"transition rows must sum to 1 (max error {row_err:.2e})")
        if r.ndim != 3 or r.shape[1:] != (S, A):
            raise ModelError(f"rewards must have shape (N+1, {S}, {A}), got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ModelError("rewards must be finite")
        if b.shape != (r.shape[0] - 1,):
            raise ModelError(f"expected {r.shape[0] - 1} thresholds, got {b.shape[0]}")
        if not np.all(np.isfinite(b)):
            raise ModelError("thresholds must be finite")
        if rho.shape != (S,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
            raise ModelError("initial_dist must be a probability vector over states")
        if not 0.0 < self.gamma < 1.0:
            raise ModelError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.rewards.shape[0] - 1

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.rewards)))

    def with_thresholds(self, thresholds) -> "CmdpModel":
        return CmdpModel(self.transition, self.rewards, thresholds, self.initial_dist, self.gamma)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "states": self.num_states,
            "actions": self.num_actions,
            "gamma": self.gamma,
            "transitions": self.transition.tolist(),
            "rewards": self.rewards.tolist(),
            "thresholds": self.thresholds.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CmdpModel":
        missing = {"states", "actions", "gamma", "transitions", "rewards", "thresholds",
                   "initial_dist"} - set(doc)
        if missing:
            raise ModelError(f"model document missing keys: {sorted(missing)}")
        S, A = int(doc["states"]), int(doc["actions"])
        try:
            P = np.asarray(doc["transitions"], dtype=float).reshape(S, A, S)
            r = np.asarray(doc["rewards"], dtype=float).reshape(-1, S, A)
        except ValueError as exc:
            raise ModelError(f"model tables do not match states={S}, actions={A}: {exc}") from None
        return cls(P, r, doc["thresholds"], doc["initial_dist"], doc["gamma"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "CmdpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- policies ---------------------------------------------------------------


def softmax_policy(theta: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a logit table, evaluated in max-shifted form."""
    z = np.exp(theta - theta.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def check_policy(model: CmdpModel, policy: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (model.num_states, model.num_actions):
        raise ModelError(
            f"policy shape {policy.shape} != ({model.num_states}, {model.num_actions})")
    if np.any(policy < 0) or np.max(np.abs(policy.sum(axis=1) - 1.0)) > atol:
        raise ModelError("policy rows must be probability vectors")
    return policy


def check_distribution(dist: np.ndarray, size: int, atol: float = 1e-9) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (size,):
        raise ModelError(f"distribution shape {dist.shape} != ({size},)")
    if np.any(dist < 0) or abs(dist.sum() - 1.0) > atol:
        raise ModelError("distribution must be nonnegative and sum to 1")
    return dist


def uniform_policy(model: CmdpModel) -> np.ndarray:
    return np.full((model.num_states, model.num_actions), 1.0 / model.num_actions)


def state_transition(model: CmdpModel, policy: np.ndarray) -> np.ndarray:
    """Markov kernel ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``."""
    return np.einsum("sa,sat->st", policy, model.transition)


# -- evaluation ---------------------------------------------------------------


def _evaluate(model: CmdpModel, policy: np.ndarray, rewards: np.ndarray, tolerance: float):
    """Solve the Bellman evaluation equations for a stack of reward tables.

    ``rewards`` has shape (M, S, A); returns V (M, S) and Q (M, S, A).
    """
    S, A = model.num_states, model.num_actions
    P, g = model.transition, model.gamma
    if S * A <= DENSE_SOLVE_LIMIT:
        P_pi = state_transition(model, policy)
        r_pi = np.einsum("sa,msa->sm", policy, rewards)
        V = np.linalg.solve(np.eye(S) - g * P_pi, r_pi).T
        Q = rewards + g * np.einsum("sat,mt->msa", P, V)
    else:
        Q = np.zeros_like(rewards)
        for _ in range(MAX_EVAL_ITERS):
            V = np.einsum("sa,msa->ms", policy, Q)
            Q_new = rewards + g * np.einsum("sat,mt->msa", P, V)
            step = np.max(np.abs(Q_new - Q))
            Q = Q_new
            if g * step / (1.0 - g) <= tolerance:
                break
        else:
            raise ConvergenceError("policy evaluation did not converge", step)
        V = np.einsum("sa,msa->ms", policy, Q)

    residual = bellman_residual(model, policy, Q, rewards)
    if residual > tolerance:
        raise ConvergenceError("policy evaluation exceeded tolerance", residual)
    return V, Q


def bellman_residual(model: CmdpModel, policy: np.ndarray, Q: np.ndarray,
                     rewards: np.ndarray) -> float:
    """Sup-norm residual of ``Q = r + gamma * P pi Q`` (works for stacked tables)."""
    V = np.einsum("sa,...sa->...s", policy, Q)
    target = rewards + model.gamma * np.einsum("sat,...t->...sa", model.transition, V)
    return float(np.max(np.abs(Q - target)))


def policy_evaluation(model: CmdpModel, policy: np.ndarray, signal: int = 0,
                      tolerance: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(V_i, Q_i)`` of ``policy`` for reward/utility signal ``i``."""
    if not 0 <= signal <= model.num_constraints:
        raise ModelError(f"signal index {signal} out of range 0..{model.num_constraints}")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    policy = check_policy(model, policy)
    V, Q = _evaluate(model, policy, model.rewards[signal:signal + 1], tolerance)
    return V[0], Q[0]


def evaluate_all(model: CmdpModel, policy: np.ndarray,
                 tolerance: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Values and Q tables for every signal at once: V (N+1, S), Q (N+1, S, A)."""
    policy = check_policy(model, policy)
    return _evaluate(model, policy, model.rewards, tolerance)


def signal_values(model: CmdpModel, policy: np.ndarray, tolerance: float = 1e-9) -> np.ndarray:
    """``V_i^pi(rho)`` for i = 0..N."""
    V, _ = evaluate_all(model, policy, tolerance)
    return V @ model.initial_dist


def advantage(Q: np.ndarray, policy: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    policy = np.asarray(policy, dtype=float)
    if Q.shape[-2:] != policy.shape:
        raise ModelError(f"Q shape {Q.shape} does not match policy shape {policy.shape}")
    V = np.einsum("sa,...sa->...s", policy, Q)
    return Q - V[..., None]


def value_at_dist(V: np.ndarray, dist: np.ndarray) -> float:
    V = np.asarray(V, dtype=float)
    dist = np.asarray(dist, dtype=float)
    if V.shape != dist.shape:
        raise ModelError(f"value shape {V.shape} does not match distribution {dist.shape}")
    return float(dist @ V)


def discounted_visitation(model: CmdpModel, policy: np.ndarray, start: np.ndarray,
                          tolerance: float = 1e-10) -> np.ndarray:
    """Normalized discounted state occupancy ``d_start^pi``.

    Solves ``d = (1 - gamma) start + gamma P_pi^T d``.
    """
    policy = check_policy(model, policy)
    start = check_distribution(start, model.num_states)
    S, g = model.num_states, model.gamma
    P_pi = state_transition(model, policy)
    if S <= DENSE_SOLVE_LIMIT:
        d = np.linalg.solve(np.eye(S) - g * P_pi.T, (1.0 - g) * start)
    else:
        d = start.copy()
        for _ in range(MAX_EVAL_ITERS):
            d_new = (1.0 - g) * start + g * (P_pi.T @ d)
            step = np.max(np.abs(d_new - d))
            d = d_new
            if g * step / (1.0 - g) <= tolerance:
                break
        else:
            raise ConvergenceError("visitation iteration did not converge", step)
    residual = np.max(np.abs(d - (1.0 - g) * start - g * (P_pi.T @ d)))
    if residual > tolerance:
        raise ConvergenceError("visitation solve exceeded tolerance", residual)
    return d


def lagrangian_value(model: CmdpModel, policy: np.ndarray, lam: np.ndarray,
                     tolerance: float = 1e-9) -> float:
    """``V_0(rho) + lam . (V_g(rho) - b)``."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (model.num_constraints,) or np.any(lam < 0):
        raise ModelError("multipliers must be a nonnegative vector of length N")
    v = signal_values(model, policy, tolerance)
    return float(v[0] + lam @ (v[1:] - model.thresholds))
