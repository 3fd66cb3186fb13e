"""History-dependent intrinsic reward generators.

Each generator is a per-run stateful object: ``bonus(s)`` returns the raw
intrinsic reward for arriving in state ``s`` and then updates the internal
statistics. State persists across episodes and is only cleared by
``reset()``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class IntrinsicConfigError(ValueError):
    pass


@dataclass
class VisitCounts:
    counts: np.ndarray

    @classmethod
    def zeros(cls, num_states: int) -> "VisitCounts":
        return cls(np.zeros(num_states, dtype=np.int64))


def count_bonus(counts: VisitCounts, s: int, beta: float) -> float:
    """``beta / sqrt(n(s) + 1)``, then increment ``n(s)``."""
    value = beta / math.sqrt(counts.counts[s] + 1)
    counts.counts[s] += 1
    return value


@dataclass
class NoveltyModel:
    """Tabular stand-in for random network distillation.

    ``target`` is a fixed random table; ``predictor`` is regressed toward it
    on every visit, so the squared error shrinks with familiarity.
    """

    target: np.ndarray
    predictor: np.ndarray
    lr: float

    @classmethod
    def seeded(cls, num_states: int, seed: int, lr: float) -> "NoveltyModel":
        if not 0.0 < lr <= 1.0:
            raise IntrinsicConfigError(f"im.lr must lie in (0, 1], got {lr}")
        rng = np.random.default_rng(seed)
        target = rng.uniform(0.0, 1.0, size=num_states)
        target.setflags(write=False)
        return cls(target, np.zeros(num_states), lr)


def prediction_error_bonus(model: NoveltyModel, s: int) -> float:
    err = model.target[s] - model.predictor[s]
    model.predictor[s] += model.lr * err
    return float(err * err)


IM_KINDS = ("none", "count", "rnd_tabular", "constant")


@dataclass(frozen=True)
class IMConfig:
    """Intrinsic-motivation settings (the ``im.*`` config keys).

    ``states`` restricts which states emit a bonus at all (``None`` means
    every state). ``noisy_states`` emit a constant ``beta`` that never decays.
    ``scale`` multiplies every raw bonus before shaping.
    """

    kind: str = "count"
    beta: float = 1.0
    lr: float = 0.5
    noisy_states: tuple = ()
    states: tuple | None = None
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in IM_KINDS:
            raise IntrinsicConfigError(f"im.kind must be one of {IM_KINDS}, got {self.kind!r}")
        if self.beta < 0:
            raise IntrinsicConfigError(f"im.beta must be >= 0, got {self.beta}")
        if self.kind == "rnd_tabular" and not 0.0 < self.lr <= 1.0:
            raise IntrinsicConfigError(f"im.lr must lie in (0, 1], got {self.lr}")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "IMConfig":
        doc = dict(doc or {})
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise IntrinsicConfigError(f"unknown im key `im.{sorted(unknown)[0]}`")
        for key in ("noisy_states", "states"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass
class IntrinsicModel:
    """Raw intrinsic-reward stream for one training run."""

    config: IMConfig
    num_states: int
    eligible: frozenset[int]
    noisy: frozenset[int]
    counts: VisitCounts = field(init=False)
    novelty: NoveltyModel | None = field(init=False, default=None)

    def __post_init__(self):
        self.reset()

    def reset(self) -> None:
        self.counts = VisitCounts.zeros(self.num_states)
        if self.config.kind == "rnd_tabular":
            self.novelty = NoveltyModel.seeded(self.num_states, self.config.seed, self.config.lr)

    def bonus(self, s: int) -> float:
        """Raw bonus for arriving in ``s`` (already multiplied by ``scale``)."""
        cfg = self.config
        if cfg.kind == "none":
            return 0.0
        if s in self.noisy:
            return cfg.scale * cfg.beta
        if s not in self.eligible:
            return 0.0
        if cfg.kind == "count":
            return cfg.scale * count_bonus(self.counts, s, cfg.beta)
        if cfg.kind == "rnd_tabular":
            return cfg.scale * prediction_error_bonus(self.novelty, s)
        return cfg.scale * cfg.beta

    def digest(self) -> tuple:
        """Hashable summary of everything that influences future bonuses."""
        kind = self.config.kind
        if kind == "count":
            idx = sorted(self.eligible - self.noisy)
            return tuple(int(self.counts.counts[i]) for i in idx)
        if kind == "rnd_tabular":
            idx = sorted(self.eligible - self.noisy)
            return tuple(float(self.novelty.predictor[i]) for i in idx)
        return ()


def _resolve(states, mdp) -> frozenset[int]:
    out = set()
    for s in states:
        if isinstance(s, str):
            if s not in mdp.state_names:
                raise IntrinsicConfigError(f"unknown state {s!r} in im config")
            out.add(mdp.state_names.index(s))
        else:
            s = int(s)
            if not 0 <= s < mdp.num_states:
                raise IntrinsicConfigError(f"state {s} out of range in im config")
            out.add(s)
    return frozenset(out)


def build_im(config: IMConfig, mdp) -> IntrinsicModel:
    """Instantiate ``config`` against ``mdp``.

    Noisy states come from the config and from the environment's own
    ``noisy_states``.
    """
    eligible = frozenset(range(mdp.num_states)) if config.states is None else _resolve(config.states, mdp)
    noisy = _resolve(config.noisy_states, mdp) | mdp.noisy_states
    return IntrinsicModel(config, mdp.num_states, eligible, noisy)
