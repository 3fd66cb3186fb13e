"""Tabular training loops with separate extrinsic and intrinsic critics.

The primary learner is a softmax actor-critic: two TD(0) critics estimate
``V_E`` and ``V_I`` and the actor ascends the combined TD error. An
epsilon-greedy Q-learning baseline keeps two Q tables in the same way.
Both runs are strictly sequential and fully determined by the seed.
"""
from __future__ import annotations

import bisect
import math
from itertools import accumulate
from dataclasses import dataclass, field, fields

import numpy as np

from .intrinsic import IMConfig, build_im
from .mdp import DEFAULT_TIE_TOLERANCE, Mdp, optimal_action_set, value_iteration
from .oracle import exact_critic
from .shaping import CriticValues, ShaperConfig, ShapingEvent, make_shaper


class TrainingAborted(RuntimeError):
    """A non-finite quantity appeared during training."""

    def __init__(self, step: int, quantity: str, value: float):
        super().__init__(f"training aborted at step {step}: {quantity} = {value}")
        self.step = step
        self.quantity = quantity
        self.value = value


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Training-loop settings (the ``train.*`` config keys).

    An iteration is ``episodes_per_iteration`` episodes; coefficient
    schedules advance once per iteration and one curve record is written
    every ``cadence`` iterations. With ``time_indexed=False`` the critics
    and the actor are indexed by state alone.
    """

    iterations: int = 300
    episodes_per_iteration: int = 1
    seed: int = 0
    policy: str = "softmax"
    temperature: float = 1.0
    epsilon: float = 0.1
    lr_actor: float = 0.1
    lr_e: float = 0.1
    lr_i: float = 0.1
    time_indexed: bool = True
    cadence: int = 1
    shaper: ShaperConfig = field(default_factory=ShaperConfig)
    im: IMConfig = field(default_factory=IMConfig)

    def __post_init__(self):
        if self.iterations < 1 or self.episodes_per_iteration < 1 or self.cadence < 1:
            raise TrainConfigError("train.iterations, train.episodes_per_iteration and train.cadence must be >= 1")
        if self.policy not in ("softmax", "egreedy"):
            raise TrainConfigError(f"train.policy must be 'softmax' or 'egreedy', got {self.policy!r}")
        if not self.temperature > 0:
            raise TrainConfigError(f"train.temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise TrainConfigError(f"train.epsilon must lie in [0, 1], got {self.epsilon}")
        for name in ("lr_actor", "lr_e", "lr_i"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise TrainConfigError(f"train.{name} must lie in (0, 1], got {getattr(self, name)}")

    @classmethod
    def from_dict(cls, doc: dict | None, shaper: ShaperConfig | None = None,
                  im: IMConfig | None = None) -> "TrainConfig":
        doc = dict(doc or {})
        allowed = {f.name for f in fields(cls)} - {"shaper", "im"}
        unknown = set(doc) - allowed
        if unknown:
            raise TrainConfigError(f"unknown train key `train.{sorted(unknown)[0]}`")
        return cls(**doc, shaper=shaper or ShaperConfig(), im=im or IMConfig())


@dataclass
class Critic:
    """Tabular value estimates; tables have one row per time step (plus the
    terminal boundary) or a single row when not time-indexed."""

    v_e: np.ndarray
    v_i: np.ndarray
    lr_e: float = 0.1
    lr_i: float = 0.1
    gamma_e: float = 0.99
    gamma_i: float = 0.99

    @classmethod
    def zeros(cls, mdp: Mdp, cfg: TrainConfig) -> "Critic":
        rows = mdp.horizon + 1 if cfg.time_indexed else 1
        return cls(np.zeros((rows, mdp.num_states)), np.zeros((rows, mdp.num_states)),
                   cfg.lr_e, cfg.lr_i, mdp.gamma_e, cfg.shaper.gamma_i)


def td_sweep(critic: Critic, env: Mdp, policy: np.ndarray) -> Critic:
    """One synchronous expected TD(0) sweep of ``v_e`` under a fixed policy.

    Every (t, s) moves ``lr_e`` of the way toward the model expectation of
    ``r + gamma_e * v_e(t+1, s')``, using the previous sweep's values. Needs
    a time-indexed critic.
    """
    if critic.v_e.shape[0] != env.horizon + 1:
        raise TrainConfigError("td_sweep needs a time-indexed critic")
    P, R = env.transition, env.reward
    v = critic.v_e
    # target[t, s] = sum_a pi(a|s,t) sum_s' P(s'|s,a) (R[t,s,a,s'] + gamma_e v[t+1,s'])
    step = np.einsum("sap,tsap->tsa", P, R) + critic.gamma_e * np.einsum("sap,tp->tsa", P, v[1:])
    target = np.einsum("tsa,tsa->ts", policy, step)
    v[:-1] += critic.lr_e * (target - v[:-1])
    return critic


def exact_critic_snapshot(env: Mdp, policy: np.ndarray, im_config: IMConfig | None,
                          shaper_config: ShaperConfig) -> Critic:
    """A critic holding a fixed policy's exact extrinsic and raw-intrinsic values."""
    ex = exact_critic(env, policy, im_config, shaper_config)
    return Critic(ex.v_e.copy(), ex.v_i.copy(), gamma_e=env.gamma_e, gamma_i=shaper_config.gamma_i)


@dataclass(frozen=True)
class CurveRecord:
    iteration: int
    episode: int
    ext_return: float
    int_return_raw: float
    int_return_shaped: float
    zeta: float
    max_action_prob: float
    greedy_optimal: bool


@dataclass
class LearningCurve:
    seed: int
    records: list[CurveRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)


def _softmax(prefs: np.ndarray, temperature: float) -> np.ndarray:
    z = prefs / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _sample(rng: np.random.Generator, cum: list[float]) -> int:
    """Inverse-CDF draw from cumulative probabilities ``cum``."""
    i = bisect.bisect_right(cum, rng.random() * cum[-1])
    return min(i, len(cum) - 1)


class _Agent:
    """Policy tables plus the action-selection rule."""

    def __init__(self, mdp: Mdp, cfg: TrainConfig):
        rows = mdp.horizon if cfg.time_indexed else 1
        self.cfg = cfg
        self.time_indexed = cfg.time_indexed
        self.prefs = np.zeros((rows, mdp.num_states, mdp.num_actions))
        self.q_e = np.zeros((rows + 1, mdp.num_states, mdp.num_actions))
        self.q_i = np.zeros((rows + 1, mdp.num_states, mdp.num_actions))

    def row(self, t: int) -> int:
        return t if self.time_indexed else 0

    def probs(self, t: int, s: int) -> np.ndarray:
        if self.cfg.policy == "softmax":
            return _softmax(self.prefs[self.row(t), s], self.cfg.temperature)
        A = self.q_e.shape[2]
        p = np.full(A, self.cfg.epsilon / A)
        p[self.greedy(t, s)] += 1.0 - self.cfg.epsilon
        return p

    def greedy(self, t: int, s: int) -> int:
        r = self.row(t)
        if self.cfg.policy == "softmax":
            return int(np.argmax(self.prefs[r, s]))
        return int(np.argmax(self.q_e[r, s] + self.q_i[r, s]))


def _greedy_in_optimal_set(mdp: Mdp, agent: _Agent, opt_mask: np.ndarray) -> bool:
    """Whether every (t, s) the greedy policy can reach picks an optimal action."""
    frontier = {int(s) for s in np.flatnonzero(mdp.start > 0)}
    for t in range(mdp.horizon):
        nxt = set()
        for s in frontier:
            if s in mdp.terminal_states:
                continue
            a = agent.greedy(t, s)
            if not opt_mask[t, s, a]:
                return False
            nxt.update(int(x) for x in np.flatnonzero(mdp.transition[s, a] > 0))
        frontier = nxt
        if not frontier:
            break
    return True


def _check(step: int, **values: float) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise TrainingAborted(step, name, v)


def train(env: Mdp, cfg: TrainConfig) -> LearningCurve:
    """Run one seeded training run and return its learning curve."""
    rng = np.random.default_rng(cfg.seed)
    im = build_im(cfg.im, env)
    shaper = make_shaper(cfg.shaper)
    critic = Critic.zeros(env, cfg)
    agent = _Agent(env, cfg)
    opt_mask = optimal_action_set(value_iteration(env)[1], DEFAULT_TIE_TOLERANCE).mask
    ge, gi = env.gamma_e, cfg.shaper.gamma_i
    needs_critic = cfg.shaper.needs_critic
    egreedy = cfg.policy == "egreedy"
    N = env.horizon
    dec_s, dec_t = env.decision_state
    curve = LearningCurve(cfg.seed)
    step = 0
    episode = 0
    rows = critic.v_e.shape[0]
    cum_start = list(accumulate(env.start.tolist()))
    cum_p = np.cumsum(env.transition, axis=2).tolist()

    def crow(t: int) -> int:
        return t if rows > 1 else 0

    for it in range(cfg.iterations):
        ext = raw = shaped = 0.0
        zeta = shaper.zeta
        for _ in range(cfg.episodes_per_iteration):
            s = _sample(rng, cum_start)
            for t in range(N):
                p = agent.probs(t, s)
                a = _sample(rng, list(accumulate(p.tolist())))
                s2 = _sample(rng, cum_p[s][a])
                r = float(env.reward[t, s, a, s2])
                done = t == N - 1 or s2 in env.terminal_states
                f = im.bonus(s2)
                ct, cn = crow(t), crow(t + 1)
                if egreedy:
                    ar = agent.row(t)
                    g_now = agent.greedy(t, s)
                    v_e = agent.q_e[ar, s, g_now]
                    v_i = agent.q_i[ar, s, g_now]
                    if done:
                        v_e_next = v_i_next = 0.0
                    else:
                        g_next = agent.greedy(t + 1, s2)
                        v_e_next = agent.q_e[agent.row(t + 1), s2, g_next]
                        v_i_next = agent.q_i[agent.row(t + 1), s2, g_next]
                else:
                    v_e, v_i = critic.v_e[ct, s], critic.v_i[ct, s]
                    v_e_next = 0.0 if done else critic.v_e[cn, s2]
                    v_i_next = 0.0 if done else critic.v_i[cn, s2]
                cv = CriticValues(float(v_e), r + ge * float(v_e_next), float(v_i), float(v_i_next)) \
                    if needs_critic else None
                fp = shaper.step(ShapingEvent(t, s, a, s2, f, done, cv))
                if egreedy:
                    ar = agent.row(t)
                    d_e = r + ge * v_e_next - agent.q_e[ar, s, a]
                    d_i = fp + gi * v_i_next - agent.q_i[ar, s, a]
                    _check(step, r_ext=r, f_raw=f, f_shaped=fp, td_error_e=d_e, td_error_i=d_i)
                    agent.q_e[ar, s, a] += cfg.lr_e * d_e
                    agent.q_i[ar, s, a] += cfg.lr_i * d_i
                else:
                    d_e = r + ge * v_e_next - v_e
                    d_i = fp + gi * v_i_next - v_i
                    _check(step, r_ext=r, f_raw=f, f_shaped=fp, td_error_e=d_e, td_error_i=d_i)
                    critic.v_e[ct, s] += cfg.lr_e * d_e
                    critic.v_i[ct, s] += cfg.lr_i * d_i
                    grad = -p
                    grad[a] += 1.0
                    agent.prefs[agent.row(t), s] += cfg.lr_actor * (d_e + d_i) * grad
                ext += r
                raw += f
                shaped += fp
                step += 1
                if done:
                    break
                s = s2
            episode += 1
        shaper.end_iteration()
        if (it + 1) % cfg.cadence == 0:
            k = cfg.episodes_per_iteration
            curve.records.append(CurveRecord(
                it + 1, episode, ext / k, raw / k, shaped / k, zeta,
                float(agent.probs(dec_t, dec_s).max()),
                _greedy_in_optimal_set(env, agent, opt_mask),
            ))
    return curve
