"""Bundled small MDPs and a seeded rollout helper.

Cells in the grid environments are addressed as ``(x, y)`` with ``y = 0``
the bottom row; the state index is ``y * width + x``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .mdp import Mdp, MdpError, check_policy

KINDS = ("grid_world", "cliff_walk", "long_corridor", "two_path_chest", "bandit")

LEFT, RIGHT = 0, 1
UP, DOWN, WEST, EAST = 0, 1, 2, 3
_MOVES = {UP: (0, 1), DOWN: (0, -1), WEST: (-1, 0), EAST: (1, 0)}


class EnvError(MdpError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    """Parameters of a bundled environment.

    Unused fields are ignored by kinds that do not need them. ``None`` means
    "use the kind's default".
    """

    kind: str
    width: int | None = None
    height: int | None = None
    length: int | None = None
    horizon: int | None = None
    gamma_e: float | None = None
    start: tuple[int, int] | None = None
    goal: tuple[int, int] | None = None
    goal_reward: float = 1.0
    step_reward: float | None = None
    cliff_reward: float = -1.0
    progress_reward: float = 0.0
    left_reward: float = 1.0
    right_reward: float = 0.5
    arm_rewards: tuple[float, ...] = (1.0, 0.5)
    rewards: tuple[tuple[tuple[int, int], float], ...] = ()
    noisy_cells: tuple = field(default_factory=tuple)

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvSpec":
        doc = dict(doc)
        kind = doc.pop("kind", doc.pop("builtin", None))
        if kind not in KINDS:
            raise EnvError(f"env.kind must be one of {KINDS}, got {kind!r}")
        known = set(cls.__dataclass_fields__) - {"kind"}
        unknown = set(doc) - known
        if unknown:
            raise EnvError(f"unknown env key `env.{sorted(unknown)[0]}`")
        for key in ("start", "goal"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        if "arm_rewards" in doc:
            doc["arm_rewards"] = tuple(float(x) for x in doc["arm_rewards"])
        if "rewards" in doc:
            doc["rewards"] = tuple((tuple(c), float(v)) for c, v in doc["rewards"])
        if "noisy_cells" in doc:
            doc["noisy_cells"] = tuple(tuple(c) if isinstance(c, list) else c for c in doc["noisy_cells"])
        return cls(kind=kind, **doc)


def build_env(spec: EnvSpec | str, **overrides) -> Mdp:
    """Construct the MDP described by ``spec``.

    ``spec`` may also be a kind name, with parameters passed as keywords.
    """
    if isinstance(spec, str):
        spec = EnvSpec(kind=spec, **overrides)
    elif overrides:
        raise TypeError("keyword overrides are only accepted with a kind name")
    builders = {
        "two_path_chest": _two_path_chest,
        "long_corridor": _long_corridor,
        "grid_world": _grid_world,
        "cliff_walk": _cliff_walk,
        "bandit": _bandit,
    }
    if spec.kind not in builders:
        raise EnvError(f"unknown environment kind {spec.kind!r}")
    if spec.horizon is not None and spec.horizon < 1:
        raise EnvError(f"horizon must be >= 1, got {spec.horizon}")
    return builders[spec.kind](spec)


def _gamma(spec: EnvSpec, default: float) -> float:
    return default if spec.gamma_e is None else float(spec.gamma_e)


def _two_path_chest(spec: EnvSpec) -> Mdp:
    # s0 -LEFT-> L1 -any-> G (pays left_reward); s0 -RIGHT-> R1 -any-> G (pays right_reward)
    names = ("s0", "L1", "R1", "G")
    s0, l1, r1, g = range(4)
    N = spec.horizon or 3
    P = np.zeros((4, 2, 4))
    P[s0, LEFT, l1] = P[s0, RIGHT, r1] = 1.0
    P[l1, :, g] = P[r1, :, g] = P[g, :, g] = 1.0
    R = np.zeros((4, 2, 4))
    R[l1, :, g] = spec.left_reward
    R[r1, :, g] = spec.right_reward
    noisy = _resolve_named(spec.noisy_cells, names)
    return Mdp(4, 2, np.eye(4)[s0], P, R, _gamma(spec, 0.99), N, names, ("LEFT", "RIGHT"),
               frozenset({g}), (s0, 0), noisy, "two_path_chest")


def _bandit(spec: EnvSpec) -> Mdp:
    """One decision at t=0 then a terminal state; arm ``a`` pays ``arm_rewards[a]``."""
    A = len(spec.arm_rewards)
    P = np.zeros((2, A, 2))
    P[:, :, 1] = 1.0
    R = np.zeros((2, A, 2))
    R[0, :, 1] = spec.arm_rewards
    return Mdp(2, A, np.array([1.0, 0.0]), P, R, _gamma(spec, 0.99), spec.horizon or 1,
               ("s0", "done"), tuple(f"arm{a}" for a in range(A)), frozenset({1}), (0, 0),
               name="bandit")


def _long_corridor(spec: EnvSpec) -> Mdp:
    # cells 0..length; start at 0, goal at `length` (terminal). LEFT at 0 stays put.
    L = spec.length if spec.length is not None else 10
    if L < 1:
        raise EnvError(f"corridor length must be >= 1, got {L}")
    S = L + 1
    N = spec.horizon or 2 * L
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2, S))
    for s in range(S):
        if s == L:
            P[s, :, s] = 1.0
            continue
        P[s, LEFT, max(s - 1, 0)] = 1.0
        P[s, RIGHT, s + 1] = 1.0
        R[s, RIGHT, s + 1] = spec.progress_reward
    R[L - 1, RIGHT, L] += spec.goal_reward
    noisy = frozenset(_check_index(c, S) for c in spec.noisy_cells)
    return Mdp(S, 2, np.eye(S)[0], P, R, _gamma(spec, 0.9), N,
               tuple(f"c{i}" for i in range(S)), ("LEFT", "RIGHT"), frozenset({L}), (0, 0),
               noisy, "long_corridor")


def _check_index(c, S: int) -> int:
    if not isinstance(c, (int, np.integer)) or not 0 <= c < S:
        raise EnvError(f"cell {c!r} is outside the corridor [0, {S})")
    return int(c)


def _resolve_named(cells, names) -> frozenset[int]:
    out = set()
    for c in cells:
        if isinstance(c, str):
            if c not in names:
                raise EnvError(f"unknown cell {c!r}")
            out.add(names.index(c))
        else:
            out.add(_check_index(c, len(names)))
    return frozenset(out)


class _Grid:
    def __init__(self, width: int, height: int):
        if width < 1 or height < 1:
            raise EnvError(f"grid must be at least 1x1, got {width}x{height}")
        self.w, self.h = width, height

    def check(self, cell, what: str) -> tuple[int, int]:
        x, y = cell
        if not (0 <= x < self.w and 0 <= y < self.h):
            raise EnvError(f"{what} cell ({x}, {y}) is outside the {self.w}x{self.h} grid")
        return int(x), int(y)

    def index(self, cell) -> int:
        return cell[1] * self.w + cell[0]

    def cell(self, s: int) -> tuple[int, int]:
        return s % self.w, s // self.w

    def step(self, s: int, a: int) -> int:
        x, y = self.cell(s)
        dx, dy = _MOVES[a]
        nx, ny = x + dx, y + dy
        if 0 <= nx < self.w and 0 <= ny < self.h:
            return self.index((nx, ny))
        return s

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f"({x},{y})" for y in range(self.h) for x in range(self.w))

    def noisy(self, cells) -> frozenset[int]:
        return frozenset(self.index(self.check(c, "noisy")) for c in cells)


def _grid_world(spec: EnvSpec) -> Mdp:
    g = _Grid(spec.width or 3, spec.height or 3)
    start = g.check(spec.start or (0, 0), "start")
    goal = g.check(spec.goal or (g.w - 1, g.h - 1), "goal")
    placements = {g.index(goal): spec.goal_reward}
    for cell, value in spec.rewards:
        placements[g.index(g.check(cell, "reward"))] = value
    S = g.w * g.h
    terminal = g.index(goal)
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4, S))
    for s in range(S):
        for a in range(4):
            if s == terminal:
                P[s, a, s] = 1.0
                continue
            sn = g.step(s, a)
            P[s, a, sn] = 1.0
            R[s, a, sn] = (spec.step_reward or 0.0) + placements.get(sn, 0.0)
    N = spec.horizon or 2 * (g.w + g.h)
    return Mdp(S, 4, np.eye(S)[g.index(start)], P, R, _gamma(spec, 0.95), N, g.names,
               ("UP", "DOWN", "WEST", "EAST"), frozenset({terminal}), (g.index(start), 0),
               g.noisy(spec.noisy_cells), "grid_world")


def _cliff_walk(spec: EnvSpec) -> Mdp:
    # bottom row: start at x=0, goal at x=w-1, cliff in between. Falling in
    # pays cliff_reward and sends the agent back to start.
    g = _Grid(spec.width or 4, spec.height or 4)
    if g.w < 3:
        raise EnvError("cliff_walk needs width >= 3")
    start = g.check(spec.start or (0, 0), "start")
    goal = g.check(spec.goal or (g.w - 1, 0), "goal")
    cliff = {g.index((x, 0)) for x in range(1, g.w - 1)} - {g.index(start), g.index(goal)}
    S = g.w * g.h
    s_start, terminal = g.index(start), g.index(goal)
    step_reward = -0.01 if spec.step_reward is None else spec.step_reward
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4, S))
    for s in range(S):
        for a in range(4):
            if s == terminal:
                P[s, a, s] = 1.0
                continue
            sn = g.step(s, a)
            if sn in cliff:
                P[s, a, s_start] = 1.0
                R[s, a, s_start] = spec.cliff_reward
            else:
                P[s, a, sn] = 1.0
                R[s, a, sn] = step_reward + (spec.goal_reward if sn == terminal else 0.0)
    N = spec.horizon or 2 * (g.w + g.h)
    return Mdp(S, 4, np.eye(S)[s_start], P, R, _gamma(spec, 0.95), N, g.names,
               ("UP", "DOWN", "WEST", "EAST"), frozenset({terminal}), (s_start, 0),
               g.noisy(spec.noisy_cells), "cliff_walk")


def cliff_cells(spec: EnvSpec) -> frozenset[int]:
    g = _Grid(spec.width or 4, spec.height or 4)
    start = spec.start or (0, 0)
    goal = spec.goal or (g.w - 1, 0)
    return frozenset({g.index((x, 0)) for x in range(1, g.w - 1)} - {g.index(start), g.index(goal)})


# --------------------------------------------------------------------------
# rollouts
# --------------------------------------------------------------------------

class Step(NamedTuple):
    t: int
    s: int
    a: int
    r_ext: float
    s_next: int
    done: bool


Trajectory = list[Step]


def rollout(mdp: Mdp, policy: np.ndarray, seed: int | np.random.Generator) -> Trajectory:
    """Sample one episode; it ends at the horizon or on entering a terminal state."""
    pi = check_policy(mdp, policy)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    S, A = mdp.num_states, mdp.num_actions
    s = int(rng.choice(S, p=mdp.start))
    traj: Trajectory = []
    for t in range(mdp.horizon):
        a = int(rng.choice(A, p=pi[t, s]))
        sn = int(rng.choice(S, p=mdp.transition[s, a]))
        done = t == mdp.horizon - 1 or sn in mdp.terminal_states
        traj.append(Step(t, s, a, float(mdp.reward[t, s, a, sn]), sn, done))
        if done:
            break
        s = sn
    return traj


def trajectory_return(traj: Trajectory, gamma: float) -> float:
    return sum(gamma ** step.t * step.r_ext for step in traj)
