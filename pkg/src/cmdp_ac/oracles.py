"""Ground-truth solvers: dynamic programming, the dual problem, brute-force search."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DENSE_SOLVE_LIMIT,
    CmdpModel,
    ConvergenceError,
    ModelError,
    check_policy,
    signal_values,
    state_transition,
    uniform_policy,
)

MAX_VI_ITERS = 200_000
FEASIBILITY_TOL = 1e-12
GRID_MAX_POLICIES = 2_000_000


def _greedy(Q: np.ndarray) -> np.ndarray:
    S, A = Q.shape
    pi = np.zeros((S, A))
    pi[np.arange(S), np.argmax(Q, axis=1)] = 1.0
    return pi


def value_iteration(model: CmdpModel, reward: np.ndarray,
                    tolerance: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values for a single reward table and a deterministic greedy policy.

    Runs value iteration to the requested optimality residual, then (for models
    small enough to solve densely) polishes with policy iteration so the
    returned values are those of an exactly optimal deterministic policy.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    reward = np.asarray(reward, dtype=float)
    S, A = model.num_states, model.num_actions
    if reward.shape != (S, A):
        raise ModelError(f"reward shape {reward.shape} != ({S}, {A})")
    P, g = model.transition, model.gamma

    V = np.zeros(S)
    for _ in range(MAX_VI_ITERS):
        Q = reward + g * (P @ V)
        V_new = Q.max(axis=1)
        residual = np.max(np.abs(V_new - V))
        V = V_new
        if residual <= tolerance:
            break
    else:
        raise ConvergenceError("value iteration did not converge", residual)

    Q = reward + g * (P @ V)
    pi = _greedy(Q)
    if S * A <= DENSE_SOLVE_LIMIT:
        actions = np.argmax(Q, axis=1)
        for _ in range(100):
            V = np.linalg.solve(np.eye(S) - g * state_transition(model, pi),
                                reward[np.arange(S), actions])
            Q = reward + g * (P @ V)
            better = Q[np.arange(S), actions] < Q.max(axis=1) - 1e-12
            if not better.any():
                break
            actions = np.where(better, np.argmax(Q, axis=1), actions)
            pi = np.zeros((S, A))
            pi[np.arange(S), actions] = 1.0
    return V, pi


def scalarized_reward(model: CmdpModel, lam: np.ndarray) -> np.ndarray:
    return model.rewards[0] + np.tensordot(lam, model.rewards[1:], axes=1)


def _check_lambda(model: CmdpModel, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape != (model.num_constraints,) or np.any(lam < 0):
        raise ModelError(f"multipliers must be a nonnegative vector of length "
                         f"{model.num_constraints}")
    return lam


def dual_function(model: CmdpModel, lam, tolerance: float = 1e-10) -> tuple[float, np.ndarray]:
    """``V_D(lam) = max_pi V_L^{pi, lam}(rho)`` and a maximizing policy."""
    lam = _check_lambda(model, lam)
    V, pi = value_iteration(model, scalarized_reward(model, lam), tolerance)
    return float(model.initial_dist @ V - lam @ model.thresholds), pi


@dataclass
class DualSolveReport:
    lambda_star: np.ndarray
    dual_value: float
    iterations: int
    final_subgradient_norm: float
    converged: bool
    cap: float

    def to_dict(self) -> dict:
        return {
            "lambda_star": [float(x) for x in self.lambda_star],
            "dual_value": self.dual_value,
            "iterations": self.iterations,
            "final_subgradient_norm": self.final_subgradient_norm,
            "converged": self.converged,
            "cap": self.cap,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "DualSolveReport":
        return cls(np.asarray(doc["lambda_star"], dtype=float), float(doc["dual_value"]),
                   int(doc["iterations"]), float(doc["final_subgradient_norm"]),
                   bool(doc["converged"]), float(doc["cap"]))


def dual_minimize(model: CmdpModel, init=None, step: float = 1.0, max_iter: int = 1000,
                  tolerance: float = 1e-8, cap: float = 1e6) -> DualSolveReport:
    """Projected subgradient descent on the dual function.

    Step ``k`` (1-based) uses ``step / sqrt(k)``; the lowest dual value seen,
    including the initial point, is returned. The subgradient at ``lam`` is
    ``V_g^{pi_lam}(rho) - b`` for the greedy maximizer ``pi_lam``.
    """
    N = model.num_constraints
    lam = np.zeros(N) if init is None else np.clip(_check_lambda(model, init), 0.0, cap)
    best_value, best_lam, grad_norm = math.inf, lam.copy(), math.inf
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        value, pi = dual_function(model, lam)
        if value < best_value:
            best_value, best_lam = value, lam.copy()
        if N == 0:
            grad_norm, converged = 0.0, True
            break
        grad = signal_values(model, pi)[1:] - model.thresholds
        # projected subgradient: drop components pushing a zero multiplier negative
        active = ~((lam <= 0.0) & (grad > 0.0)) & ~((lam >= cap) & (grad < 0.0))
        grad_norm = float(np.linalg.norm(grad[active]))
        if grad_norm <= tolerance:
            converged = True
            break
        lam = np.clip(lam - step / math.sqrt(k) * grad, 0.0, cap)
    return DualSolveReport(best_lam, float(best_value), k, grad_norm, converged, float(cap))


def constraint_values(model: CmdpModel, policy: np.ndarray) -> np.ndarray:
    """``V_i^pi(rho)`` for the utilities i = 1..N."""
    return signal_values(model, policy)[1:]


def constraint_violation(model: CmdpModel, policy: np.ndarray) -> float:
    v = constraint_values(model, policy)
    return float(np.sum(np.maximum(0.0, model.thresholds - v)))


def is_feasible(model: CmdpModel, policy: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
    return bool(np.all(constraint_values(model, policy) >= model.thresholds - tol))


def duality_gap(model: CmdpModel, policy: np.ndarray, lam) -> float:
    """``max_pi V_L^{pi, lam} - min_{lam' >= 0} V_L^{policy, lam'}``; ``inf`` when infeasible."""
    v = signal_values(model, check_policy(model, policy))
    if np.any(v[1:] < model.thresholds - FEASIBILITY_TOL):
        return math.inf
    dual_value, _ = dual_function(model, lam)
    return dual_value - float(v[0])


def multiplier_bound(model: CmdpModel, probe: np.ndarray) -> float:
    """Bound ``2 r_max / (xi (1 - gamma))`` on the optimal multipliers, with the
    Slater slack ``xi`` measured on the supplied strictly feasible probe policy."""
    slack = float(np.min(constraint_values(model, probe) - model.thresholds))
    if slack <= 0:
        raise ModelError(f"probe policy is not strictly feasible (slack {slack:.3g})")
    return 2.0 * model.r_max / (slack * (1.0 - model.gamma))


def gap_bound(model: CmdpModel, resolution: float) -> float:
    """Coarseness allowance ``resolution |S| r_max / (1 - gamma)^2`` of the grid oracle."""
    return resolution * model.num_states * model.r_max / (1.0 - model.gamma) ** 2


def _simplex_grid(num_actions: int, n: int) -> np.ndarray:
    rows = [c for c in itertools.product(range(n + 1), repeat=num_actions) if sum(c) == n]
    return np.array(rows, dtype=float) / n


def optimal_value_grid(model: CmdpModel, resolution: float,
                       max_policies: int = GRID_MAX_POLICIES) -> tuple[float, np.ndarray | None]:
    """Best feasible objective over stationary policies on a simplex grid.

    Every state row is drawn independently from the grid
    ``{p : p_a in resolution * Z, sum p = 1}``. Returns ``(-inf, None)`` if no
    grid policy satisfies the constraints.
    """
    S, A, N = model.num_states, model.num_actions, model.num_constraints
    if S > 4 or A > 3 or N > 2:
        raise ModelError(f"grid oracle limited to S<=4, A<=3, N<=2 (got {S}, {A}, {N})")
    n = round(1.0 / resolution)
    if n < 1 or abs(n * resolution - 1.0) > 1e-9:
        raise ValueError("resolution must be 1/n for a positive integer n")
    rows = _simplex_grid(A, n)
    m = len(rows)
    if m ** S > max_policies:
        raise ModelError(f"grid has {m ** S} policies, above the limit {max_policies}")

    P, r, g = model.transition, model.rewards, model.gamma
    # per-state, per-row quantities: kernel row (m, S) and rewards (m, N+1)
    kernel = np.einsum("ka,sat->skt", rows, P)
    rew = np.einsum("ka,isa->ski", rows, r)
    best, best_idx = -math.inf, None
    combos = np.array(list(itertools.product(range(m), repeat=S)))
    for chunk in np.array_split(combos, max(1, len(combos) // 50_000)):
        P_pi = np.stack([kernel[s, chunk[:, s]] for s in range(S)], axis=1)
        r_pi = np.stack([rew[s, chunk[:, s]] for s in range(S)], axis=1)
        V = np.linalg.solve(np.eye(S) - g * P_pi, r_pi)
        v = np.einsum("s,bsi->bi", model.initial_dist, V)
        feasible = np.all(v[:, 1:] >= model.thresholds - FEASIBILITY_TOL, axis=1)
        if feasible.any():
            j = np.flatnonzero(feasible)[np.argmax(v[feasible, 0])]
            if v[j, 0] > best:
                best, best_idx = float(v[j, 0]), chunk[j]
    if best_idx is None:
        return -math.inf, None
    return best, rows[best_idx]


def feasible_warm_start(model: CmdpModel, max_uniform_weight: float = 0.5,
                        penalty: float = 1e3) -> np.ndarray:
    """A strictly positive feasible policy.

    Blends the greedy policy of a heavily penalized Lagrangian with the
    uniform policy, keeping as much uniform mass (up to
    ``max_uniform_weight``) as feasibility allows.
    """
    _, safe = dual_function(model, np.full(model.num_constraints, penalty))
    if not is_feasible(model, safe):
        raise ModelError("could not find a feasible policy (constraints may be infeasible)")
    uni = uniform_policy(model)

    def blend(w):
        return (1.0 - w) * safe + w * uni

    lo, hi = 0.0, max_uniform_weight
    if is_feasible(model, blend(hi)):
        return blend(hi)
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if is_feasible(model, blend(mid)):
            lo = mid
        else:
            hi = mid
    return blend(lo)
