"""Streaming transforms that turn a raw intrinsic stream F_t into F'_t.

Every transform consumes one :class:`ShapingEvent` per environment step and
returns the shaped intrinsic reward for that step. The matching family
(PBIM, GRM) buffers the episode in an :class:`EpisodeLedger` and settles the
outstanding balance on the step flagged ``done``, so that the discounted
shaped return of a whole episode is exactly zero. The action-dependent
family (ADOPS, ADOPES) instead corrects each reward with a term computed from
extrinsic and intrinsic value estimates.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

DEFAULT_GAMMA_I = 0.99
DEFAULT_EPSILON = 1e-7
DEFAULT_ALPHA = 0.05


class ShapingError(ValueError):
    pass


class CriticValues(NamedTuple):
    """Value estimates the action-dependent shapers read at one step."""

    v_e: float
    q_e: float
    v_i: float
    v_i_next: float


@dataclass(frozen=True)
class ShapingEvent:
    t: int
    s: int
    a: int
    s_next: int
    f_raw: float
    done: bool
    critic: CriticValues | None = None

    def __post_init__(self):
        object.__setattr__(self, "f_raw", float(self.f_raw))


@dataclass(frozen=True)
class AdopsInputs:
    v_e: float
    q_e: float
    v_i: float
    v_i_next: float
    gamma_i: float
    f: float
    epsilon: float = DEFAULT_EPSILON


def shaped_reward(r_ext: float, f_shaped: float) -> float:
    return r_ext + f_shaped


# --------------------------------------------------------------------------
# episode ledger and the matching family
# --------------------------------------------------------------------------

@dataclass
class EpisodeLedger:
    """Per-episode buffer shared by the matching transforms.

    ``buffer`` holds the issued (optionally mean-subtracted) rewards waiting
    to be matched, ``emitted`` the shaped rewards handed out so far, and
    ``u`` their running discounted sum. ``f_bar`` is the smoothed per-step
    mean of the raw stream; it is updated once per episode and survives
    :meth:`reset`.
    """

    gamma_i: float = DEFAULT_GAMMA_I
    alpha: float = DEFAULT_ALPHA
    f_bar: float = 0.0
    buffer: list[float] = field(default_factory=list)
    emitted: list[float] = field(default_factory=list)
    raw: list[float] = field(default_factory=list)
    u: float = 0.0
    closed: bool = False

    def reset(self) -> None:
        self.buffer.clear()
        self.emitted.clear()
        self.raw.clear()
        self.u = 0.0
        self.closed = False

    @property
    def next_t(self) -> int:
        return len(self.emitted)

    def _admit(self, ev: ShapingEvent) -> None:
        if self.closed:
            raise ShapingError(f"event at t={ev.t} after the episode ended; call reset() first")
        if ev.t != self.next_t:
            raise ShapingError(f"expected event for t={self.next_t}, got t={ev.t}")
        self.raw.append(float(ev.f_raw))

    def _emit(self, value: float, done: bool) -> float:
        t = len(self.emitted)
        self.emitted.append(value)
        self.u += self.gamma_i ** t * value
        if done:
            self.closed = True
            mean = sum(self.raw) / len(self.raw)
            self.f_bar = (1.0 - self.alpha) * self.f_bar + self.alpha * mean
        return value

    def recompute_u(self) -> float:
        return sum(self.gamma_i ** t * v for t, v in enumerate(self.emitted))

    def digest(self) -> tuple:
        return (self.f_bar, tuple(self.buffer))


def _settle(buffer: list[float], start: int, T: int, gamma: float) -> float:
    total = 0.0
    try:
        for j in range(start, T):
            total -= gamma ** (j - T) * buffer[j]
    except OverflowError:
        # past float range: let the correction become inf (or nan) like numpy
        # arithmetic would, so callers can detect and report it
        with np.errstate(over="ignore", invalid="ignore"):
            total = np.float64(0.0)
            for j in range(start, T):
                total -= np.float64(gamma) ** (j - T) * buffer[j]
        return float(total)
    return total


def pbim_step(ledger: EpisodeLedger, ev: ShapingEvent, gamma_i: float, normalized: bool) -> float:
    """Pass rewards through, then cancel the whole episode on its last step."""
    ledger._admit(ev)
    T = ev.t
    if ev.done:
        return ledger._emit(_settle(ledger.buffer, 0, T, gamma_i), True)
    value = ev.f_raw - ledger.f_bar if normalized else ev.f_raw
    ledger.buffer.append(value)
    return ledger._emit(value, False)


def grm_delay_step(ledger: EpisodeLedger, ev: ShapingEvent, gamma_i: float, d: int, normalized: bool) -> float:
    """Match each reward ``d`` steps later, or at episode end if sooner."""
    if d < 0:
        raise ShapingError(f"delay must be >= 0, got {d}")
    ledger._admit(ev)
    T = ev.t
    if ev.done:
        return ledger._emit(_settle(ledger.buffer, max(0, T - d), T, gamma_i), True)
    value = ev.f_raw - ledger.f_bar if normalized else ev.f_raw
    ledger.buffer.append(value)
    if T < d:
        return ledger._emit(value, False)
    return ledger._emit(value - gamma_i ** (-d) * ledger.buffer[T - d], False)


@dataclass(frozen=True)
class MatchingFunction:
    """Matching weights ``m[t, t']``: the share of the reward issued at t'
    that is subtracted at t.

    ``valid_for`` is set by :meth:`validated` once :func:`check_matching`
    passes for a given horizon.
    """

    m: np.ndarray
    valid_for: int | None = None

    @classmethod
    def from_callable(cls, fn: Callable[[int, int], float], n: int) -> "MatchingFunction":
        return cls(np.array([[fn(t, tp) for tp in range(n)] for t in range(n)], dtype=np.float64))

    def __call__(self, t: int, tp: int) -> float:
        return float(self.m[t, tp])

    def validated(self, n: int) -> "MatchingFunction":
        report = check_matching(self, n)
        if not report.ok:
            raise ShapingError(f"matching function is invalid: {report.summary()}")
        return MatchingFunction(self.m, n)


def delay_matching(d: int, n: int) -> MatchingFunction:
    """The matching function behind :func:`grm_delay_step`."""
    m = np.zeros((n, n))
    for tp in range(n):
        m[min(tp + d, n - 1), tp] = 1.0
    return MatchingFunction(m)


@dataclass
class MatchingReport:
    ok: bool
    fully_matching: list[tuple[int, float]]
    future_agnostic: list[tuple[int, int]]
    out_of_range: list[tuple[int, int]]

    def summary(self) -> str:
        parts = []
        if self.fully_matching:
            parts.append(f"not fully matching at t'={[tp for tp, _ in self.fully_matching]}")
        if self.future_agnostic:
            parts.append(f"matches future rewards at {self.future_agnostic}")
        if self.out_of_range:
            parts.append(f"weights outside [0, 1] at {self.out_of_range}")
        return "; ".join(parts) or "ok"


def check_matching(m: MatchingFunction, n: int, tol: float = 1e-12) -> MatchingReport:
    M = np.asarray(m.m, dtype=np.float64)
    if M.shape[0] < n or M.shape[1] < n:
        raise ShapingError(f"matching matrix {M.shape} smaller than horizon {n}")
    M = M[:n, :n]
    fully = []
    for tp in range(n):
        total = float(M[tp:, tp].sum())
        if abs(total - 1.0) > tol:
            fully.append((tp, total))
    future = [(int(t), int(tp)) for t, tp in zip(*np.nonzero(np.triu(M, k=1)))]
    rng = [(int(t), int(tp)) for t, tp in zip(*np.nonzero((M < 0) | (M > 1)))]
    return MatchingReport(not (fully or future or rng), fully, future, rng)


def grm_general_step(ledger: EpisodeLedger, ev: ShapingEvent, gamma_i: float, m: MatchingFunction) -> float:
    """Subtract ``sum_i gamma**(i - t) * F_i * m(t, i)`` from each reward.

    If the episode stops before the horizon the matching was validated for,
    the ``done`` step settles every still-unmatched share.
    """
    if m.valid_for is None:
        raise ShapingError("matching function has not been validated; use MatchingFunction.validated(n)")
    ledger._admit(ev)
    t = ev.t
    if t >= m.valid_for:
        raise ShapingError(f"t={t} beyond the validated horizon {m.valid_for}")
    ledger.buffer.append(ev.f_raw)
    M = m.m
    early_end = ev.done and t < m.valid_for - 1
    acc = 0.0
    for i in range(t):
        w = 1.0 - float(M[:t, i].sum()) if early_end else M[t, i]
        if w != 0.0:
            acc += gamma_i ** (i - t) * ledger.buffer[i] * w
    own = 1.0 if early_end else M[t, t]
    return ledger._emit(ev.f_raw * (1.0 - own) - acc, ev.done)


# --------------------------------------------------------------------------
# coefficient schedules
# --------------------------------------------------------------------------

@dataclass
class ZetaSchedule:
    """Linear coefficient schedule, one step per training iteration.

    ``down`` (PIES) subtracts 1/C while the previous value exceeds 1/C and
    otherwise drops to 0. ``up`` (ADOPES) adds 1/C and caps at 1. The value
    is tracked in units of 1/C so integer C gives exact spot values.
    """

    c: float
    zeta: float = 1.0
    direction: str = "down"
    updates: int = 0
    _units: float = field(init=False, repr=False)

    def __post_init__(self):
        if not self.c > 0:
            raise ShapingError(f"C must be positive, got {self.c}")
        if not 0.0 <= self.zeta <= 1.0:
            raise ShapingError(f"zeta must lie in [0, 1], got {self.zeta}")
        if self.direction not in ("down", "up"):
            raise ShapingError(f"direction must be 'down' or 'up', got {self.direction!r}")
        self._units = self.zeta * self.c

    def update(self) -> float:
        self.updates += 1
        if self.direction == "down":
            self._units = self._units - 1.0 if self._units > 1.0 else 0.0
            self.zeta = self._units / self.c
        else:
            self._units = min(self.c, self._units + 1.0)
            self.zeta = min(1.0, self._units / self.c)
        return self.zeta


def pies_update(schedule: ZetaSchedule) -> float:
    if schedule.direction != "down":
        raise ShapingError("PIES needs a decaying ('down') schedule")
    return schedule.update()


# --------------------------------------------------------------------------
# action-dependent correction
# --------------------------------------------------------------------------

def omega_decomposition(inp: AdopsInputs) -> tuple[float, int, int, int]:
    """Residual and its three mutually exclusive case indicators."""
    omega = inp.v_e - inp.q_e + inp.v_i - inp.gamma_i * inp.v_i_next - inp.f
    worse = inp.q_e < inp.v_e
    c1 = int(worse and omega > 0)
    c2 = int((not worse) and omega < 0)
    c3 = int(worse and omega <= 0)
    return omega, c1, c2, c3


def adops_f2(inp: AdopsInputs) -> float:
    """Correction added to F.

    For an action worse than the policy's value, F2 pushes the combined
    advantage at least ``epsilon`` below zero; otherwise it lifts a negative
    combined advantage back to zero.
    """
    if not inp.epsilon > 0:
        raise ShapingError(f"epsilon must be positive, got {inp.epsilon}")
    omega = omega_decomposition(inp)[0]
    if inp.q_e < inp.v_e:
        return min(0.0, omega - inp.epsilon)
    return max(0.0, omega)


def adopes_step(schedule: ZetaSchedule, f: float, f2: float) -> float:
    if schedule.direction != "up":
        raise ShapingError("ADOPES needs a rising ('up') schedule")
    return f + schedule.zeta * f2


# --------------------------------------------------------------------------
# configurable shaper objects
# --------------------------------------------------------------------------

SHAPER_KINDS = ("none", "raw", "pbim", "pbim_norm", "grm", "grm_norm", "pies",
                "adops_ideal", "adops", "adopes")


@dataclass(frozen=True)
class ShaperConfig:
    """The ``shaper.*`` config keys.

    ``zeta`` overrides the schedule's starting coefficient (PIES starts at 1
    and ADOPES at 0 by default); ``c`` is the schedule length in iterations.
    """

    kind: str = "raw"
    d: int = 1
    c: float = 1000.0
    epsilon: float = DEFAULT_EPSILON
    gamma_i: float = DEFAULT_GAMMA_I
    alpha: float = DEFAULT_ALPHA
    zeta: float | None = None

    def __post_init__(self):
        if self.kind not in SHAPER_KINDS:
            raise ShapingError(f"shaper.kind must be one of {SHAPER_KINDS}, got {self.kind!r}")
        if self.d < 0:
            raise ShapingError(f"shaper.d must be >= 0, got {self.d}")
        if not self.c > 0:
            raise ShapingError(f"shaper.c must be positive, got {self.c}")
        if not self.epsilon > 0:
            raise ShapingError(f"shaper.epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.gamma_i <= 1.0:
            raise ShapingError(f"shaper.gamma_i must lie in (0, 1], got {self.gamma_i}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ShapingError(f"shaper.alpha must lie in [0, 1], got {self.alpha}")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "ShaperConfig":
        doc = dict(doc or {})
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ShapingError(f"unknown shaper key `shaper.{sorted(unknown)[0]}`")
        return cls(**doc)

    @property
    def needs_critic(self) -> bool:
        return self.kind in ("adops", "adopes", "adops_ideal")


class Shaper:
    """A configured, stateful transform for one training run.

    ``step`` consumes events in episode order and starts a new episode
    automatically when an event with ``t == 0`` follows a finished one.
    ``end_iteration`` advances the coefficient schedule, if any.
    """

    def __init__(self, config: ShaperConfig):
        self.config = config
        self.ledger = EpisodeLedger(config.gamma_i, config.alpha)
        self.schedule: ZetaSchedule | None = None
        if config.kind == "pies":
            self.schedule = ZetaSchedule(config.c, 1.0 if config.zeta is None else config.zeta, "down")
        elif config.kind == "adopes":
            self.schedule = ZetaSchedule(config.c, 0.0 if config.zeta is None else config.zeta, "up")

    @property
    def zeta(self) -> float:
        return 1.0 if self.schedule is None else self.schedule.zeta

    def end_iteration(self) -> None:
        if self.schedule is not None:
            self.schedule.update()

    def adops_inputs(self, ev: ShapingEvent) -> AdopsInputs:
        if ev.critic is None:
            raise ShapingError(f"{self.config.kind} needs critic values on every event")
        c = ev.critic
        return AdopsInputs(c.v_e, c.q_e, c.v_i, c.v_i_next, self.config.gamma_i, ev.f_raw, self.config.epsilon)

    def step(self, ev: ShapingEvent) -> float:
        cfg, ledger = self.config, self.ledger
        if ledger.closed and ev.t == 0:
            ledger.reset()
        kind = cfg.kind
        if kind in ("pbim", "pbim_norm"):
            return pbim_step(ledger, ev, cfg.gamma_i, kind == "pbim_norm")
        if kind in ("grm", "grm_norm"):
            return grm_delay_step(ledger, ev, cfg.gamma_i, cfg.d, kind == "grm_norm")
        ledger._admit(ev)
        if kind == "none":
            value = 0.0
        elif kind == "raw":
            value = ev.f_raw
        elif kind == "pies":
            value = self.schedule.zeta * ev.f_raw
        elif kind == "adopes":
            value = adopes_step(self.schedule, ev.f_raw, adops_f2(self.adops_inputs(ev)))
        else:  # adops, adops_ideal: the caller supplies exact or estimated values
            value = ev.f_raw + adops_f2(self.adops_inputs(ev))
        return ledger._emit(value, ev.done)

    def digest(self) -> tuple:
        """Hashable state that can change future shaped rewards within an episode."""
        if self.config.kind in ("pbim", "pbim_norm", "grm", "grm_norm"):
            return self.ledger.digest()
        if self.schedule is not None:
            return (self.schedule.zeta,)
        return ()

    def copy(self) -> "Shaper":
        return copy.deepcopy(self)


def make_shaper(config: ShaperConfig | dict | str) -> Shaper:
    if isinstance(config, str):
        config = ShaperConfig(kind=config)
    elif isinstance(config, dict):
        config = ShaperConfig.from_dict(config)
    return Shaper(config)


def shape_episode(config: ShaperConfig | dict | str, f: list[float], critic=None) -> list[float]:
    """Run one whole episode of raw rewards through a fresh shaper."""
    shaper = make_shaper(config)
    out = []
    for t, value in enumerate(f):
        c = None if critic is None else critic[t]
        out.append(shaper.step(ShapingEvent(t, 0, 0, 0, value, t == len(f) - 1, c)))
    return out
