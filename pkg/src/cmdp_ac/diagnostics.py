"""Executable checks of the TD-operator and value-function machinery.

Covers the per-observation TD matrices and their stationary mean, stationary
distributions and mixing times, and residuals of the lemma-level identities
(performance difference, Q-Lipschitz continuity, visitation lower bound,
advantage centering).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    CmdpModel,
    ModelError,
    advantage,
    check_policy,
    discounted_visitation,
    evaluate_all,
    state_transition,
)
from .pdnac import behavior_update


class ErgodicityError(RuntimeError):
    pass


def _pair(s: int, a: int, num_actions: int) -> int:
    return s * num_actions + a


def observation_matrix(obs, num_states: int, num_actions: int, gamma: float) -> np.ndarray:
    """Matrix ``M(O)`` of one observation ``O = (s, a, s', a')`` (dense, side |S||A|).

    Row ``(s, a)`` carries ``-1`` on the diagonal and ``gamma`` at ``(s', a')``;
    the two merge into ``gamma - 1`` for a self-loop.
    """
    s, a, s2, a2 = obs
    if not (0 <= s < num_states and 0 <= s2 < num_states
            and 0 <= a < num_actions and 0 <= a2 < num_actions):
        raise IndexError(f"observation {obs} out of range")
    n = num_states * num_actions
    M = np.zeros((n, n))
    m = _pair(s, a, num_actions)
    M[m, m] -= 1.0
    M[m, _pair(s2, a2, num_actions)] += gamma
    return M


def reward_vector(model: CmdpModel, obs, signal: int) -> np.ndarray:
    """``R_i(O)``: the reward ``r_i(s, a)`` placed at entry ``(s, a)``."""
    s, a = obs[0], obs[1]
    R = np.zeros(model.num_states * model.num_actions)
    R[_pair(s, a, model.num_actions)] = model.rewards[signal, s, a]
    return R


def stationary_distribution(model: CmdpModel, policy: np.ndarray, tol: float = 1e-12,
                            max_doublings: int = 60) -> np.ndarray:
    """Stationary distribution of ``P_pi`` by power iteration with repeated squaring.

    Raises ``ErgodicityError`` when the powers do not settle to a rank-one
    matrix (periodic or multi-class chains) or the limit is not strictly positive.
    """
    P = state_transition(model, check_policy(model, policy))
    Pk = P
    for _ in range(max_doublings):
        mu = Pk.mean(axis=0)
        spread = np.max(np.abs(Pk - mu))
        if spread <= tol and np.sum(np.abs(mu @ P - mu)) <= 1e-10:
            break
        Pk = Pk @ Pk
    else:
        raise ErgodicityError(f"power iteration did not converge (row spread {spread:.2e})")
    mu = mu / mu.sum()
    if np.min(mu) <= 0:
        raise ErgodicityError("stationary distribution is not strictly positive")
    return mu


@dataclass
class TdOperator:
    mbar: np.ndarray
    pi: np.ndarray
    stationary: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        """Stationary state-action frequencies ``mu(s) pi(a|s)``."""
        return self.stationary[:, None] * self.pi


def mean_td_operator(model: CmdpModel, policy: np.ndarray) -> TdOperator:
    """Expected TD matrix ``E[M(s, a, s', a')]`` under the stationary chain of ``policy``.

    Closed form ``D (gamma P_sa - I)`` with ``D = diag(mu(s) pi(a|s))`` and
    ``P_sa[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')``.
    """
    policy = check_policy(model, policy)
    mu = stationary_distribution(model, policy)
    S, A = model.num_states, model.num_actions
    P_sa = (model.transition[:, :, :, None] * policy[None, None, :, :]).reshape(S * A, S * A)
    D = (mu[:, None] * policy).reshape(-1)
    mbar = D[:, None] * (model.gamma * P_sa - np.eye(S * A))
    return TdOperator(mbar, policy, mu)


def check_negative_definite(op: TdOperator, gamma: float, mu_floor: float, epsilon: float,
                            num_actions: int) -> tuple[bool, float]:
    """Top eigenvalue of the symmetric part against ``-(1-gamma) mu_floor eps / |A|``."""
    sym = 0.5 * (op.mbar + op.mbar.T)
    top = float(np.linalg.eigvalsh(sym)[-1])
    bound = -(1.0 - gamma) * mu_floor * epsilon / num_actions
    return top <= bound + 1e-9, top


def tv_distance(u1, u2) -> float:
    u1, u2 = np.asarray(u1, dtype=float), np.asarray(u2, dtype=float)
    if u1.shape != u2.shape:
        raise ModelError(f"distribution shapes differ: {u1.shape} vs {u2.shape}")
    return 0.5 * float(np.sum(np.abs(u1 - u2)))


class MixingTime(NamedTuple):
    tau: int | None
    sup_tv: float

    @property
    def mixed(self) -> bool:
        return self.tau is not None


def mixing_time(model: CmdpModel, policy: np.ndarray, c: float, k_max: int = 10_000) -> MixingTime:
    """Smallest ``k`` with ``max_s TV(P_pi^k(s, .), mu) <= c``.

    Returns ``MixingTime(None, best_sup_tv)`` when ``k_max`` is exceeded.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    mu = stationary_distribution(model, policy)
    P = state_transition(model, policy)
    Pk = np.eye(model.num_states)
    best = np.inf
    for k in range(k_max + 1):
        sup_tv = 0.5 * float(np.max(np.sum(np.abs(Pk - mu), axis=1)))
        best = min(best, sup_tv)
        if sup_tv <= c:
            return MixingTime(k, sup_tv)
        Pk = Pk @ P
    return MixingTime(None, best)


def _deterministic_policies(S: int, A: int, limit: int = 4096):
    if A ** S <= limit:
        for acts in itertools.product(range(A), repeat=S):
            pi = np.zeros((S, A))
            pi[np.arange(S), acts] = 1.0
            yield pi
    else:
        for a in range(A):
            pi = np.zeros((S, A))
            pi[:, a] = 1.0
            yield pi


def mu_floor_estimate(model: CmdpModel, num_policy_samples: int = 64, seed: int = 0,
                      epsilon: float = 0.1) -> float:
    """Sampled estimate (an upper bound) of ``min_{pi, s} mu_pi(s)`` over eps-mixed policies.

    Covers random Dirichlet policies and every deterministic policy (or only the
    constant-action ones when there are more than 4096), each mixed with the
    uniform policy at weight ``epsilon``.
    """
    rng = np.random.default_rng(seed)
    S, A = model.num_states, model.num_actions
    candidates = list(_deterministic_policies(S, A))
    candidates += list(rng.dirichlet(np.ones(A), size=(num_policy_samples, S)))
    return min(float(np.min(stationary_distribution(model, behavior_update(pi, epsilon))))
               for pi in candidates)


@dataclass
class LemmaReport:
    trials: int
    performance_difference: float
    q_lipschitz: float
    visitation_bound: float
    advantage_centering: float

    identity_tol: float = 1e-8
    centering_tol: float = 1e-10
    inequality_tol: float = 1e-10

    @property
    def passed(self) -> bool:
        return (self.performance_difference <= self.identity_tol
                and self.advantage_centering <= self.centering_tol
                and self.q_lipschitz <= self.inequality_tol
                and self.visitation_bound <= self.inequality_tol)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "trials": self.trials,
                "performance_difference": self.performance_difference,
                "q_lipschitz": self.q_lipschitz,
                "visitation_bound": self.visitation_bound,
                "advantage_centering": self.advantage_centering}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def pdl_residual(model: CmdpModel, pi1: np.ndarray, pi2: np.ndarray, zeta: np.ndarray) -> float:
    """Max over signals of ``|V^1(zeta) - V^2(zeta) - E_{d^1, pi1}[A^2] / (1 - gamma)|``."""
    V1, _ = evaluate_all(model, pi1)
    V2, Q2 = evaluate_all(model, pi2)
    d1 = discounted_visitation(model, pi1, zeta)
    A2 = advantage(Q2, pi2)
    rhs = np.einsum("s,sa,isa->i", d1, pi1, A2) / (1.0 - model.gamma)
    return float(np.max(np.abs((V1 - V2) @ zeta - rhs)))


def q_lipschitz_excess(model: CmdpModel, pi1: np.ndarray, pi2: np.ndarray) -> float:
    """How far ``||Q^1 - Q^2||`` exceeds ``r_max |S||A| / (1-gamma)^2 ||pi1 - pi2||`` (0 if not)."""
    _, Q1 = evaluate_all(model, pi1)
    _, Q2 = evaluate_all(model, pi2)
    const = model.r_max * model.num_states * model.num_actions / (1.0 - model.gamma) ** 2
    lhs = np.linalg.norm((Q1 - Q2).reshape(Q1.shape[0], -1), axis=1)
    return float(max(0.0, np.max(lhs - const * np.linalg.norm(pi1 - pi2))))


def lemma_residuals(model: CmdpModel, seed: int = 0, trials: int = 100) -> LemmaReport:
    """Worst-case residuals of the exact identities over random policy pairs."""
    S, A = model.num_states, model.num_actions
    if S > 6 or A > 4:
        raise ModelError(f"lemma checks limited to S<=6, A<=4 (got {S}, {A})")
    rng = np.random.default_rng(seed)
    worst = np.zeros(4)
    for _ in range(trials):
        pi1 = rng.dirichlet(np.ones(A), size=S)
        pi2 = rng.dirichlet(np.ones(A), size=S)
        zeta = rng.dirichlet(np.ones(S))
        d = discounted_visitation(model, pi1, zeta)
        _, Q = evaluate_all(model, pi1)
        centering = np.max(np.abs(np.einsum("sa,isa->is", pi1, advantage(Q, pi1))))
        worst = np.maximum(worst, [
            pdl_residual(model, pi1, pi2, zeta),
            q_lipschitz_excess(model, pi1, pi2),
            float(max(0.0, np.max((1.0 - model.gamma) * zeta - d))),
            centering,
        ])
    return LemmaReport(trials, *map(float, worst))
