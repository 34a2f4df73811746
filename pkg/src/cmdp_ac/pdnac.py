"""Online primal-dual natural actor-critic for tabular CMDPs.

One iteration ``k`` consumes a single transition of the trajectory driven by
the behavior policy and performs, in order:

1. sample ``s_{k+1} ~ P(.|s_k, a_k)``, ``a_{k+1} ~ pi_hat_k(.|s_{k+1})``
2. TD(0) critic update of the visited entry for every signal
3. natural-gradient actor step ``theta += alpha * Q_L``
4. behavior policy ``pi_hat = eps/|A| + (1 - eps) pi``
5. projected dual step on the critic's value estimates

Steps 3 and 5 read the actor policy, critic and multipliers as they stood at
the start of the iteration.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import CmdpModel, ModelError, evaluate_all, signal_values, softmax_policy
from .oracles import duality_gap

DEFAULT_COEFFS = {"eta0": 10.0, "alpha0": 10.0, "beta0": 10.0, "eps0": 1.0}
DEFAULT_XI = 0.1
WARM_START_FLOOR = 1e-12
_BLOCK = 8192


@dataclass(frozen=True)
class StepSizes:
    eta: float
    alpha: float
    beta: float
    epsilon: float
    horizon: int

    def __post_init__(self):
        if min(self.eta, self.alpha, self.beta) < 0:
            raise ValueError("step sizes must be nonnegative")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"exploration weight must lie in (0, 1], got {self.epsilon}")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")


def schedule_from_horizon(K: int, eta0: float = DEFAULT_COEFFS["eta0"],
                          alpha0: float = DEFAULT_COEFFS["alpha0"],
                          beta0: float = DEFAULT_COEFFS["beta0"],
                          eps0: float = DEFAULT_COEFFS["eps0"],
                          mu_floor: float | None = None,
                          model: CmdpModel | None = None) -> StepSizes:
    """Horizon-dependent constant step sizes.

    ``eta = eta0 K^-5/6``, ``alpha = alpha0 K^-5/6``, ``beta = beta0 K^-1/2``,
    ``eps = eps0 K^-1/6``. The critic step is capped at 1, beyond which a
    TD update overshoots its own target. When a stationary-floor estimate ``mu_floor`` is
    given, also requires ``(1 - gamma) mu_floor eps0 beta0 / |A| <= 1``.
    """
    if K < 1:
        raise ValueError("horizon K must be at least 1")
    if min(eta0, alpha0, beta0, eps0) <= 0:
        raise ValueError("schedule coefficients must be positive")
    eps = eps0 / K ** (1 / 6)
    if eps > 1:
        raise ValueError(f"eps0 / K^(1/6) = {eps:.4g} exceeds 1")
    if mu_floor is not None:
        if model is None:
            raise ValueError("checking the step-size condition needs the model")
        lhs = (1 - model.gamma) * mu_floor * eps0 * beta0 / model.num_actions
        if lhs > 1:
            raise ValueError(f"(1-gamma) mu eps0 beta0 / |A| = {lhs:.4g} exceeds 1")
    return StepSizes(eta0 / K ** (5 / 6), alpha0 / K ** (5 / 6), min(1.0, beta0 / K ** 0.5),
                     eps, K)


def lambda_cap(model: CmdpModel, xi: float = DEFAULT_XI) -> float:
    """Projection ceiling ``2 r_max / (xi (1 - gamma))`` for an assumed Slater slack."""
    if xi <= 0:
        raise ValueError("Slater slack must be positive")
    return 2.0 * max(model.r_max, 1e-300) / (xi * (1.0 - model.gamma))


class UniformStream:
    """Seeded stream of U[0, 1) draws, generated in blocks."""

    def __init__(self, seed: int):
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self._buf = self._rng.random(_BLOCK)
        self._pos = 0

    def next(self) -> float:
        if self._pos == _BLOCK:
            self._buf = self._rng.random(_BLOCK)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def draw(cdf: np.ndarray, u: float) -> int:
    """Inverse-CDF draw over the stored row order."""
    return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)


def behavior_update(policy: np.ndarray, epsilon: float) -> np.ndarray:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    return epsilon / policy.shape[-1] + (1.0 - epsilon) * policy


@dataclass
class RunnerState:
    model: CmdpModel
    theta: np.ndarray
    policy: np.ndarray
    behavior: np.ndarray
    critics: np.ndarray
    lam: np.ndarray
    cap: float
    epsilon: float
    state: int
    action: int
    iteration: int
    rng: UniformStream
    _cum_p: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self._cum_p is None:
            self._cum_p = np.cumsum(self.model.transition, axis=2)


def init_runner(model: CmdpModel, seed: int, sizes: StepSizes,
                warm_start: np.ndarray | None = None,
                cap: float | None = None) -> RunnerState:
    """Uniform (or warm-started) actor, zero critics and multipliers, first sample drawn."""
    cap = lambda_cap(model) if cap is None else float(cap)
    if cap <= 0:
        raise ValueError("lambda cap must be positive")
    S, A = model.num_states, model.num_actions
    if warm_start is None:
        theta = np.zeros((S, A))
    else:
        warm_start = np.asarray(warm_start, dtype=float)
        if warm_start.shape != (S, A):
            raise ModelError(f"warm start shape {warm_start.shape} != ({S}, {A})")
        theta = np.log(np.maximum(warm_start, WARM_START_FLOOR))
    policy = softmax_policy(theta)
    behavior = behavior_update(policy, sizes.epsilon)
    rng = UniformStream(seed)
    s0 = draw(np.cumsum(model.initial_dist), rng.next())
    a0 = draw(np.cumsum(behavior[s0]), rng.next())
    return RunnerState(model, theta, policy, behavior,
                       np.zeros((model.num_constraints + 1, S, A)),
                       np.zeros(model.num_constraints), cap, sizes.epsilon, s0, a0, 0, rng)


def sample_step(state: RunnerState) -> tuple[int, int, int, int]:
    """Draw ``(s', a')`` from the current behavior policy and advance the trajectory."""
    s, a = state.state, state.action
    s2 = draw(state._cum_p[s, a], state.rng.next())
    a2 = draw(np.cumsum(state.behavior[s2]), state.rng.next())
    state.state, state.action = s2, a2
    return s, a, s2, a2


def critic_update(state: RunnerState, obs, beta: float) -> np.ndarray:
    """Asynchronous TD(0) update of entry ``(s, a)`` for all signals, in place.

    The bootstrap term reads the pre-update table, including when
    ``(s, a) == (s', a')``.
    """
    s, a, s2, a2 = obs
    Q = state.critics
    td = state.model.rewards[:, s, a] + state.model.gamma * Q[:, s2, a2] - Q[:, s, a]
    Q[:, s, a] += beta * td
    return Q


def lagrangian_critic(state: RunnerState) -> np.ndarray:
    """``Q_L = Q_0 + sum_i lam_i Q_i`` from the current critics."""
    return state.critics[0] + np.tensordot(state.lam, state.critics[1:], axes=1)


def critic_values(state: RunnerState) -> np.ndarray:
    """Critic estimates ``sum_{s,a} rho(s) pi(a|s) Q_i(s, a)`` for i = 1..N."""
    return np.einsum("s,sa,isa->i", state.model.initial_dist, state.policy, state.critics[1:])


def actor_update(state: RunnerState, alpha: float, q_lagrangian: np.ndarray | None = None):
    """Natural-gradient step on the softmax logits; recomputes the cached policy."""
    if q_lagrangian is None:
        q_lagrangian = lagrangian_critic(state)
    state.theta += alpha * q_lagrangian
    state.policy = softmax_policy(state.theta)
    return state.theta, state.policy


def dual_update(state: RunnerState, eta: float, values: np.ndarray | None = None) -> np.ndarray:
    """Projected step ``lam <- clip(lam - eta (v_hat - b), 0, cap)``."""
    if values is None:
        values = critic_values(state)
    state.lam = np.clip(state.lam - eta * (values - state.model.thresholds), 0.0, state.cap)
    return state.lam


def step(state: RunnerState, sizes: StepSizes) -> tuple[int, int, int, int]:
    """One full iteration in algorithm order; returns the observation used."""
    q_lagrangian = lagrangian_critic(state)
    values = critic_values(state)
    obs = sample_step(state)
    critic_update(state, obs, sizes.beta)
    actor_update(state, sizes.alpha, q_lagrangian)
    state.behavior = behavior_update(state.policy, state.epsilon)
    dual_update(state, sizes.eta, values)
    state.iteration += 1
    return obs


# -- metrics -----------------------------------------------------------------


@dataclass
class MetricsRecord:
    k: int
    samples: int
    objective: float
    violations: np.ndarray
    lam: np.ndarray
    gap: float | None = None
    critic_error: np.ndarray | None = None

    @property
    def violation_total(self) -> float:
        return float(np.sum(self.violations))


@dataclass
class MetricsTrace:
    records: list[MetricsRecord]
    num_constraints: int
    policy: np.ndarray | None = None
    lam: np.ndarray | None = None
    lambda_range: tuple[float, float] = (0.0, 0.0)
    averages: dict = field(default_factory=dict)
    comment: str | None = None

    def header(self) -> list[str]:
        N = self.num_constraints
        return (["k", "samples", "objective", "violation_total"]
                + [f"violation_{i}" for i in range(1, N + 1)]
                + [f"lambda_{i}" for i in range(1, N + 1)]
                + ["gap"]
                + [f"critic_err_{i}" for i in range(N + 1)])

    def to_csv(self) -> str:
        def fmt(x):
            return "" if x is None else format(float(x), ".17g")

        buf = io.StringIO()
        if self.comment:
            buf.write(f"# {self.comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        N = self.num_constraints
        for r in self.records:
            err = [None] * (N + 1) if r.critic_error is None else list(r.critic_error)
            w.writerow([r.k, r.samples, fmt(r.objective), fmt(r.violation_total)]
                       + [fmt(v) for v in r.violations] + [fmt(v) for v in r.lam]
                       + [fmt(r.gap)] + [fmt(e) for e in err])
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())

    @staticmethod
    def read_rows(path) -> list[dict]:
        with open(path) as f:
            lines = [line for line in f if not line.startswith("#")]
        return list(csv.DictReader(lines))

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def evaluate_record(state: RunnerState, k: int, samples: int, with_gap: bool) -> MetricsRecord:
    model = state.model
    v = signal_values(model, state.policy)
    rec = MetricsRecord(k, samples, float(v[0]), np.maximum(0.0, model.thresholds - v[1:]),
                        state.lam.copy())
    if with_gap:
        rec.gap = duality_gap(model, state.policy, state.lam)
        _, Q_b = evaluate_all(model, state.behavior)
        rec.critic_error = np.max(np.abs(state.critics - Q_b), axis=(1, 2))
    return rec


def check_invariants(state: RunnerState) -> None:
    pi, eps, A = state.policy, state.epsilon, state.model.num_actions
    assert np.max(np.abs(pi.sum(axis=1) - 1.0)) <= 1e-9, "actor rows not normalized"
    # positive in exact arithmetic; float64 softmax may underflow to exactly 0
    assert np.all(pi >= 0), "negative actor probability"
    assert np.all(state.behavior >= eps / A * (1 - 1e-12)), "behavior floor violated"
    bound = 2.0 * state.model.r_max / (1.0 - state.model.gamma)
    assert np.max(np.abs(state.critics)) <= bound + 1e-9, "critic left bounded ball"


def attach_averages(trace: MetricsTrace, horizon: int, optimum: float | None) -> None:
    """Averages over recorded iterates ``k < horizon`` (exact when every iterate is recorded)."""
    early = [r for r in trace.records if r.k < horizon]
    if not early:
        return
    trace.averages["violation"] = float(np.mean([r.violation_total for r in early]))
    if optimum is not None:
        trace.averages["optimality_gap"] = float(np.mean([optimum - r.objective for r in early]))


def run(model: CmdpModel, sizes: StepSizes, seed: int, record_stride: int = 1,
        gap_stride: int | None = None, warm_start: np.ndarray | None = None,
        cap: float | None = None, optimum: float | None = None,
        strict: bool = False) -> MetricsTrace:
    """Run ``sizes.horizon`` iterations from a fresh runner and record exact metrics.

    Records are taken at ``k = 0, record_stride, ...`` and at ``k = K``; the
    duality gap and critic errors are added at multiples of ``gap_stride``
    (never when ``None``) and at ``k = K``. With ``strict`` every per-step
    invariant is asserted after each iteration instead of at record points.
    """
    if record_stride < 1 or (gap_stride is not None and gap_stride < 1):
        raise ValueError("strides must be at least 1")
    K = sizes.horizon
    state = init_runner(model, seed, sizes, warm_start, cap)
    records = []
    lo, hi = 0.0, 0.0

    def is_gap_point(k):
        return gap_stride is not None and (k % gap_stride == 0 or k == K)

    for k in range(K + 1):
        if k % record_stride == 0 or k == K or is_gap_point(k):
            records.append(evaluate_record(state, k, k + 1, is_gap_point(k)))
            check_invariants(state)
        if k == K:
            break
        step(state, sizes)
        lam = state.lam
        if lam.size:
            lo, hi = min(lo, float(lam.min())), max(hi, float(lam.max()))
            assert lo >= 0.0 and hi <= state.cap, "dual iterate left [0, cap]"
        if strict:
            check_invariants(state)

    trace = MetricsTrace(records, model.num_constraints, state.policy.copy(), state.lam.copy(),
                         (lo, hi))
    attach_averages(trace, K, optimum)
    return trace


def first_reaching(trace: MetricsTrace, target: float) -> MetricsRecord | None:
    """Earliest record whose duality gap is at or below ``target``."""
    for r in trace.records:
        if r.gap is not None and not math.isinf(r.gap) and r.gap <= target:
            return r
    return None
