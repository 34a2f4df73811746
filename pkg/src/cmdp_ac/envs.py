"""Environment constructors: bridge GridWorld and seeded random CMDPs."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .core import CmdpModel, ModelError, signal_values, uniform_policy

# up, down, left, right
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")
DEFAULT_MAP = "bridges_8x8.map"


class MapError(ModelError):
    pass


@dataclass
class GridSpec:
    ascii_map: list[str]
    slip: float = 0.1
    goal_reward: float = 10.0
    step_reward: float = -1.0
    bridge_penalty: float = -1.0
    constrained_bridges: list[int] = field(default_factory=list)
    thresholds: list[float] = field(default_factory=list)
    gamma: float = 0.9

    def __post_init__(self):
        rows = self.ascii_map
        if not rows or any(len(r) != len(rows[0]) for r in rows) or not rows[0]:
            raise MapError("map must be a non-empty rectangle")
        text = "".join(rows)
        bad = set(text) - set("SG.#123456789")
        if bad:
            raise MapError(f"unknown map symbols: {''.join(sorted(bad))}")
        if text.count("S") != 1 or text.count("G") != 1:
            raise MapError("map needs exactly one S and one G")
        if not 0.0 <= self.slip < 1.0:
            raise MapError(f"slip must lie in [0, 1), got {self.slip}")
        if not self.thresholds:
            self.thresholds = [-0.01] * len(self.constrained_bridges)
        if len(self.thresholds) != len(self.constrained_bridges):
            raise MapError("one threshold per constrained bridge is required")
        for b in self.constrained_bridges:
            if str(b) not in text:
                raise MapError(f"constrained bridge {b} does not appear on the map")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.ascii_map), len(self.ascii_map[0])


_META_KEYS = {
    "slip": float,
    "gamma": float,
    "goal_reward": float,
    "step_reward": float,
    "bridge_penalty": float,
    "constrained_bridges": lambda v: [int(x) for x in v.split(",") if x.strip()],
    "thresholds": lambda v: [float(x) for x in v.split(",") if x.strip()],
}


def parse_map(text: str) -> GridSpec:
    """Parse the map file format: grid rows, then ``key = value`` metadata lines."""
    if "\t" in text or "\r" in text:
        raise MapError("map files must use LF line endings and no tabs")
    rows, meta = [], {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        if "=" in line:
            key, _, value = (p.strip() for p in line.partition("="))
            if key not in _META_KEYS:
                raise MapError(f"line {lineno}: unknown key {key!r}")
            try:
                meta[key] = _META_KEYS[key](value)
            except ValueError:
                raise MapError(f"line {lineno}: bad value for {key}: {value!r}") from None
        elif meta:
            raise MapError(f"line {lineno}: map row after metadata")
        else:
            rows.append(line)
    return GridSpec(rows, **meta)


def load_map(path) -> GridSpec:
    return parse_map(Path(path).read_text())


def default_map_text() -> str:
    return resources.files("cmdp_ac.data").joinpath(DEFAULT_MAP).read_text()


def default_spec(**overrides) -> GridSpec:
    spec = parse_map(default_map_text())
    for k, v in overrides.items():
        setattr(spec, k, v)
    spec.__post_init__()
    return spec


class GridWorld:
    """Continuing bridge GridWorld; reaching the goal teleports back to start."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        H, W = spec.shape
        self.cells = [(i, j) for i in range(H) for j in range(W) if spec.ascii_map[i][j] != "#"]
        self.index = {c: k for k, c in enumerate(self.cells)}
        self.start = self.index[self._find("S")]
        self.goal = self.index[self._find("G")]
        self.model = self._build()

    def _find(self, ch):
        for i, row in enumerate(self.spec.ascii_map):
            if ch in row:
                return i, row.index(ch)

    def symbol(self, state: int) -> str:
        i, j = self.cells[state]
        return self.spec.ascii_map[i][j]

    def step_cell(self, state: int, action: int) -> int:
        """Deterministic move; walls and borders leave the agent in place."""
        H, W = self.spec.shape
        i, j = self.cells[state]
        di, dj = MOVES[action]
        ni, nj = i + di, j + dj
        if 0 <= ni < H and 0 <= nj < W and self.spec.ascii_map[ni][nj] != "#":
            return self.index[(ni, nj)]
        return state

    def _build(self) -> CmdpModel:
        spec = self.spec
        S, A = len(self.cells), len(MOVES)
        P = np.zeros((S, A, S))
        for s in range(S):
            for a in range(A):
                if s == self.goal:
                    P[s, a, self.start] = 1.0
                    continue
                for b in range(A):
                    p = spec.slip / A + (1.0 - spec.slip) * (a == b)
                    P[s, a, self.step_cell(s, b)] += p
        arrive = np.full(S, spec.step_reward)
        arrive[self.goal] = spec.goal_reward
        rewards = [P @ arrive]
        for bridge in spec.constrained_bridges:
            on_bridge = np.array([spec.bridge_penalty if self.symbol(s) == str(bridge) else 0.0
                                  for s in range(S)])
            rewards.append(P @ on_bridge)
        rho = np.zeros(S)
        rho[self.start] = 1.0
        return CmdpModel(P, np.stack(rewards), spec.thresholds, rho, spec.gamma)

    def greedy_path(self, policy: np.ndarray, max_steps: int | None = None) -> list[int]:
        """Noise-free rollout of the argmax action from start until the goal is reached."""
        max_steps = max_steps or 4 * len(self.cells)
        s, path = self.start, [self.start]
        for _ in range(max_steps):
            if s == self.goal:
                break
            s = self.step_cell(s, int(np.argmax(policy[s])))
            path.append(s)
        return path

    def bridges_on_path(self, path) -> set[int]:
        return {int(self.symbol(s)) for s in path if self.symbol(s).isdigit()}


def gridworld_to_cmdp(spec: GridSpec) -> CmdpModel:
    return GridWorld(spec).model


def random_cmdp(num_states: int, num_actions: int, num_constraints: int, seed: int,
                min_transition_prob: float = 0.02, slack_target: float = 0.1,
                gamma: float = 0.9) -> CmdpModel:
    """Seeded ergodic CMDP with a Slater witness (the uniform policy).

    Transition rows are ``m + (1 - S m) * Dirichlet(1)`` so every entry is at
    least ``m``; rewards are uniform on [0, 1]; thresholds leave the uniform
    policy exactly ``slack_target`` of slack on every constraint.
    """
    S, A, N = num_states, num_actions, num_constraints
    if S < 1 or A < 1 or N < 0:
        raise ModelError("need at least one state and one action")
    if min_transition_prob < 0 or min_transition_prob * S > 1:
        raise ModelError("min_transition_prob * num_states must not exceed 1")
    rng = np.random.default_rng(seed)
    P = min_transition_prob + (1 - S * min_transition_prob) * rng.dirichlet(np.ones(S), size=(S, A))
    P /= P.sum(axis=2, keepdims=True)
    rewards = rng.uniform(0.0, 1.0, size=(N + 1, S, A))
    rho = rng.dirichlet(np.ones(S))
    probe = CmdpModel(P, rewards, np.zeros(N), rho, gamma)
    v = signal_values(probe, uniform_policy(probe))[1:]
    if N and slack_target > v.min():
        raise ModelError(f"slack_target {slack_target} exceeds the largest achievable "
                         f"uniform-policy slack {v.min():.6g}")
    # tiny extra margin so the measured uniform slack is never rounded below target
    return probe.with_thresholds(v - slack_target - 1e-12 * np.maximum(1.0, np.abs(v)))
