"""Finite-horizon MDPs and exact backward-induction solvers.

Arrays are time-major throughout:

* ``transition[s, a, s']``      P(s' | s, a)
* ``reward[t, s, a, s']``       extrinsic reward for the transition at step t
* value tables ``V[t, s]``      shape (N + 1, S), with ``V[N] == 0``
* Q tables ``Q[t, s, a]``       shape (N, S, A)
* policies ``pi[t, s, a]``      shape (N, S, A), rows sum to one
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import yaml

ROW_TOL = 1e-12
DEFAULT_TIE_TOLERANCE = 1e-9

RewardFn = Callable[[int, int, int, int], float]


class MdpError(ValueError):
    """Raised for malformed MDPs, rewards or policies."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mdp:
    """An immutable finite-horizon MDP.

    ``reward`` may be given as an array of shape (N, S, A, S) or (S, A, S)
    (time-invariant), or as a callable ``(s, a, s_next, t) -> float``; it is
    always stored as the full (N, S, A, S) array.

    Terminal states are absorbing zero-reward self-loops. They only matter to
    code that runs episodes (rollouts, learners, the augmented-space oracle),
    which ends the episode on entry.
    """

    num_states: int
    num_actions: int
    start: np.ndarray
    transition: np.ndarray
    reward: np.ndarray
    gamma_e: float
    horizon: int
    state_names: tuple[str, ...] = ()
    action_names: tuple[str, ...] = ()
    terminal_states: frozenset[int] = frozenset()
    decision_state: tuple[int, int] | None = None
    noisy_states: frozenset[int] = frozenset()
    name: str = "mdp"

    def __post_init__(self) -> None:
        S, A, N = self.num_states, self.num_actions, self.horizon
        if S < 1 or A < 1:
            raise MdpError("num_states and num_actions must be positive")
        if N < 1:
            raise MdpError(f"horizon must be >= 1, got {N}")
        if not 0.0 <= self.gamma_e <= 1.0:
            raise MdpError(f"gamma_e must lie in [0, 1], got {self.gamma_e}")

        start = np.asarray(self.start, dtype=np.float64)
        if start.shape != (S,) or np.any(start < 0) or abs(start.sum() - 1.0) > ROW_TOL:
            raise MdpError("start distribution must be a probability vector over states")
        P = np.asarray(self.transition, dtype=np.float64)
        if P.shape != (S, A, S):
            raise MdpError(f"transition must have shape {(S, A, S)}, got {P.shape}")
        if np.any(P < 0):
            raise MdpError("transition probabilities must be nonnegative")
        bad = np.argwhere(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL)
        if bad.size:
            s, a = bad[0]
            raise MdpError(f"transition row (s={s}, a={a}) does not sum to 1")

        R = _materialize_reward(self.reward, S, A, N)
        object.__setattr__(self, "start", _frozen(start))
        object.__setattr__(self, "transition", _frozen(P))
        object.__setattr__(self, "reward", R if not R.flags.writeable else _frozen(R))
        object.__setattr__(self, "terminal_states", frozenset(int(s) for s in self.terminal_states))
        object.__setattr__(self, "noisy_states", frozenset(int(s) for s in self.noisy_states))
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(str(i) for i in range(S)))
        if not self.action_names:
            object.__setattr__(self, "action_names", tuple(str(i) for i in range(A)))
        if self.decision_state is None:
            object.__setattr__(self, "decision_state", (int(np.argmax(start)), 0))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.horizon, self.num_states, self.num_actions

    def state_index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            return int(name)
        return self.state_names.index(name)

    def action_index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            return int(name)
        return self.action_names.index(name)

    def with_reward(self, reward) -> "Mdp":
        """Copy of this MDP with a different reward."""
        return Mdp(
            self.num_states, self.num_actions, self.start, self.transition, reward,
            self.gamma_e, self.horizon, self.state_names, self.action_names,
            self.terminal_states, self.decision_state, self.noisy_states, self.name,
        )


def _materialize_reward(reward, S: int, A: int, N: int) -> np.ndarray:
    if callable(reward):
        R = np.empty((N, S, A, S))
        for t in range(N):
            for s in range(S):
                for a in range(A):
                    for sn in range(S):
                        R[t, s, a, sn] = reward(s, a, sn, t)
    else:
        R = np.asarray(reward, dtype=np.float64)
        if R.shape == (S, A, S):
            # time-invariant rewards share one (S, A, S) block across all t
            _check_finite(R[None])
            return np.broadcast_to(R.copy(), (N, S, A, S))
    if R.shape != (N, S, A, S):
        raise MdpError(f"reward must have shape {(N, S, A, S)}, got {R.shape}")
    _check_finite(R)
    return R


def _check_finite(R: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(R))
    if bad.size:
        t, s, a, sn = (int(x) for x in bad[0])
        raise MdpError(f"non-finite reward at (s={s}, a={a}, s'={sn}, t={t})")


def _reward_for(mdp: Mdp, reward_override) -> np.ndarray:
    if reward_override is None:
        return mdp.reward
    return _materialize_reward(reward_override, mdp.num_states, mdp.num_actions, mdp.horizon)


def value_iteration(mdp: Mdp, reward_override=None) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values by backward induction over the finite horizon.

    Returns:
        ``(V, Q)`` with shapes (N + 1, S) and (N, S, A).
    """
    ER = _expected_reward(mdp, _reward_for(mdp, reward_override))
    N, S, A = mdp.shape
    P = mdp.transition
    V = np.zeros((N + 1, S))
    Q = np.zeros((N, S, A))
    for t in range(N - 1, -1, -1):
        Q[t] = ER[t] + mdp.gamma_e * (P @ V[t + 1])
        V[t] = Q[t].max(axis=1)
    return V, Q


def _expected_reward(mdp: Mdp, R: np.ndarray) -> np.ndarray:
    """``sum_s' P(s'|s,a) R(s,a,s',t)`` with shape (N, S, A)."""
    P = mdp.transition
    if R.strides[0] == 0:
        return np.broadcast_to(np.einsum("ijk,ijk->ij", P, R[0]), mdp.shape)
    return np.einsum("ijk,tijk->tij", P, R)


def check_policy(mdp: Mdp, policy: np.ndarray) -> np.ndarray:
    pi = np.asarray(policy, dtype=np.float64)
    if pi.shape != mdp.shape:
        raise MdpError(f"policy must have shape {mdp.shape}, got {pi.shape}")
    if np.any(pi < 0):
        raise MdpError("policy probabilities must be nonnegative")
    bad = np.argwhere(np.abs(pi.sum(axis=2) - 1.0) > ROW_TOL)
    if bad.size:
        t, s = bad[0]
        raise MdpError(f"policy distribution at (s={s}, t={t}) is not normalized")
    return pi


def policy_evaluation(mdp: Mdp, policy: np.ndarray, reward_override=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact finite-horizon evaluation of a (possibly time-dependent) policy."""
    pi = check_policy(mdp, policy)
    ER = _expected_reward(mdp, _reward_for(mdp, reward_override))
    N, S, A = mdp.shape
    P = mdp.transition
    V = np.zeros((N + 1, S))
    Q = np.zeros((N, S, A))
    for t in range(N - 1, -1, -1):
        Q[t] = ER[t] + mdp.gamma_e * (P @ V[t + 1])
        V[t] = (pi[t] * Q[t]).sum(axis=1)
    return V, Q


@dataclass(frozen=True, eq=False)
class OptimalActionSet:
    """Per-(t, s) sets of actions within ``tie_tolerance`` of the best Q.

    Backed by a boolean (N, S, A) membership mask.
    """

    mask: np.ndarray
    tie_tolerance: float

    def __getitem__(self, ts: tuple[int, int]) -> frozenset[int]:
        t, s = ts
        return frozenset(int(a) for a in np.flatnonzero(self.mask[t, s]))

    def __eq__(self, other) -> bool:
        return isinstance(other, OptimalActionSet) and np.array_equal(self.mask, other.mask)

    def as_mask(self) -> np.ndarray:
        return self.mask.copy()


def argmax_set(row: Sequence[float], tie_tolerance: float = DEFAULT_TIE_TOLERANCE) -> frozenset[int]:
    row = np.asarray(row, dtype=np.float64)
    best = row.max()
    return frozenset(int(a) for a in np.flatnonzero(row >= best - tie_tolerance))


def optimal_action_set(q: np.ndarray, tie_tolerance: float = DEFAULT_TIE_TOLERANCE) -> OptimalActionSet:
    if not tie_tolerance > 0:
        raise MdpError("tie_tolerance must be positive")
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, None, :]
    elif q.ndim == 2:
        q = q[None]
    mask = q >= q.max(axis=2, keepdims=True) - tie_tolerance
    mask.setflags(write=False)
    return OptimalActionSet(mask, tie_tolerance)


def greedy_policy(q: np.ndarray, tie_tolerance: float = DEFAULT_TIE_TOLERANCE) -> np.ndarray:
    """Deterministic policy picking the lowest-index action in each argmax set."""
    N, S, A = q.shape
    pi = np.zeros_like(q)
    for t in range(N):
        for s in range(S):
            pi[t, s, min(argmax_set(q[t, s], tie_tolerance))] = 1.0
    return pi


def discounted_return(rewards: Sequence[float], gamma: float, from_t: int = 0) -> float:
    """Sum of ``gamma**(j - from_t) * r_j`` for ``j >= from_t``."""
    if len(rewards) == 0:
        raise MdpError("rewards must be nonempty")
    if not 0 <= from_t < len(rewards):
        raise MdpError(f"from_t={from_t} outside [0, {len(rewards)})")
    total = 0.0
    for r in reversed(list(rewards)[from_t:]):
        total = r + gamma * total
    return total


def deterministic_policies(mdp: Mdp):
    """Yield every deterministic time-dependent policy as an (N, S, A) array.

    There are A ** (N * S) of them, so this is only for tiny MDPs.
    """
    N, S, A = mdp.shape
    cells = N * S
    if A ** cells > 5_000_000:
        raise MdpError(f"{A}**{cells} deterministic policies is too many to enumerate")
    eye = np.eye(A)
    for idx in np.ndindex(*([A] * cells)):
        yield eye[np.array(idx)].reshape(N, S, A)


def uniform_policy(mdp: Mdp) -> np.ndarray:
    return np.full(mdp.shape, 1.0 / mdp.num_actions)


# --------------------------------------------------------------------------
# MDP spec files
# --------------------------------------------------------------------------

def _names(value, what: str) -> tuple[str, ...]:
    if isinstance(value, int):
        return tuple(str(i) for i in range(value))
    if isinstance(value, list) and value:
        return tuple(str(v) for v in value)
    raise MdpError(f"`{what}` must be a positive integer or a nonempty list of names")


def mdp_from_dict(doc: Mapping) -> Mdp:
    """Build an :class:`Mdp` from an MDP description mapping.

    Required keys are ``states``, ``actions``, ``horizon``, ``gamma_e``,
    ``start`` and ``transitions``; ``rewards``, ``terminal`` and ``name`` are
    optional. Unlisted transitions have probability 0, unlisted rewards are 0.
    """
    for key in ("states", "actions", "horizon", "gamma_e", "start", "transitions"):
        if key not in doc:
            raise MdpError(f"missing key `{key}`")
    states = _names(doc["states"], "states")
    actions = _names(doc["actions"], "actions")
    S, A, N = len(states), len(actions), int(doc["horizon"])

    def sidx(x) -> int:
        if isinstance(x, int) and not isinstance(x, bool):
            if not 0 <= x < S:
                raise MdpError(f"state index {x} out of range")
            return x
        if str(x) not in states:
            raise MdpError(f"unknown state `{x}`")
        return states.index(str(x))

    def aidx(x) -> int:
        if isinstance(x, int) and not isinstance(x, bool):
            if not 0 <= x < A:
                raise MdpError(f"action index {x} out of range")
            return x
        if str(x) not in actions:
            raise MdpError(f"unknown action `{x}`")
        return actions.index(str(x))

    start = np.zeros(S)
    raw_start = doc["start"]
    if isinstance(raw_start, Mapping):
        for k, p in raw_start.items():
            start[sidx(k)] = float(p)
    elif isinstance(raw_start, list):
        if len(raw_start) == S and all(isinstance(p, (int, float)) for p in raw_start) and not all(
            isinstance(p, int) for p in raw_start
        ):
            start[:] = raw_start
        else:
            for k in raw_start:
                start[sidx(k)] = 1.0 / len(raw_start)
    else:
        start[sidx(raw_start)] = 1.0

    P = np.zeros((S, A, S))
    for entry in doc["transitions"]:
        s, a, sn, p = entry
        P[sidx(s), aidx(a), sidx(sn)] += float(p)

    R = np.zeros((N, S, A, S))
    for entry in doc.get("rewards", []) or []:
        s, a, sn, t, value = entry
        if t == "any":
            R[:, sidx(s), aidx(a), sidx(sn)] = float(value)
        else:
            t = int(t)
            if not 0 <= t < N:
                raise MdpError(f"reward time {t} outside [0, {N})")
            R[t, sidx(s), aidx(a), sidx(sn)] = float(value)

    terminal = frozenset(sidx(x) for x in doc.get("terminal", []) or [])
    return Mdp(S, A, start, P, R, float(doc["gamma_e"]), N, states, actions,
               terminal, name=str(doc.get("name", "mdp")))


def load_mdp(path: str | Path) -> Mdp:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, Mapping):
        raise MdpError(f"{path}: expected a mapping at top level")
    return mdp_from_dict(doc)


def mdp_to_dict(mdp: Mdp) -> dict:
    """Inverse of :func:`mdp_from_dict` (rewards listed per time step)."""
    names, acts = list(mdp.state_names), list(mdp.action_names)
    transitions = [
        [names[s], acts[a], names[sn], float(mdp.transition[s, a, sn])]
        for s, a, sn in zip(*np.nonzero(mdp.transition))
    ]
    rewards = []
    for s, a, sn in zip(*np.nonzero(np.any(mdp.reward != 0, axis=0))):
        col = mdp.reward[:, s, a, sn]
        if np.all(col == col[0]):
            rewards.append([names[s], acts[a], names[sn], "any", float(col[0])])
        else:
            rewards.extend(
                [names[s], acts[a], names[sn], int(t), float(col[t])]
                for t in np.flatnonzero(col)
            )
    return {
        "name": mdp.name,
        "states": names,
        "actions": acts,
        "horizon": mdp.horizon,
        "gamma_e": mdp.gamma_e,
        "start": {names[s]: float(p) for s, p in enumerate(mdp.start) if p > 0},
        "transitions": transitions,
        "rewards": rewards,
        "terminal": [names[s] for s in sorted(mdp.terminal_states)],
    }


__all__ = [
    "Mdp", "MdpError", "OptimalActionSet", "value_iteration", "policy_evaluation",
    "optimal_action_set", "argmax_set", "greedy_policy", "discounted_return",
    "deterministic_policies", "uniform_policy", "check_policy", "load_mdp",
    "mdp_from_dict", "mdp_to_dict", "DEFAULT_TIE_TOLERANCE",
]
