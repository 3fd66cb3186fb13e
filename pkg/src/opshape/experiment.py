"""Experiment harness: run configs, per-seed and aggregate CSVs, D sweeps."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .environments import EnvSpec, build_env
from .intrinsic import IMConfig
from .learner import LearningCurve, TrainConfig, train
from .mdp import Mdp, load_mdp
from .shaping import ShaperConfig

RAW_COLUMNS = ("iteration", "episode", "seed", "ext_return", "int_return_raw", "int_return_shaped",
               "zeta", "max_action_prob", "greedy_optimal", "ext_return_smoothed")
METRICS = ("ext_return", "int_return_raw", "int_return_shaped", "zeta", "max_action_prob", "greedy_optimal")
SMOOTHING_WINDOW = 10
TOP_LEVEL_KEYS = ("env", "im", "shaper", "train", "seeds", "output", "verify")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    env: Mdp
    im: IMConfig
    shaper: ShaperConfig
    train: TrainConfig
    seeds: tuple[int, ...]
    output: Path
    verify: dict


# --------------------------------------------------------------------------
# config loading
# --------------------------------------------------------------------------

def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as YAML scalars."""
    doc = dict(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for `{key}`: {exc}") from None
        node = doc
        for p in parts[:-1]:
            child = node.get(p)
            if child is None:
                child = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"`{key}`: `{p}` is not a section")
            node[p] = child = dict(child)
            node = child
        node[parts[-1]] = value
    return doc


def _env_from(doc: Any, base_dir: Path) -> Mdp:
    if isinstance(doc, str):
        doc = {"builtin": doc}
    if not isinstance(doc, dict):
        raise ConfigError("`env` must be a mapping or a builtin name")
    doc = dict(doc)
    if "file" in doc:
        path = Path(doc.pop("file"))
        if doc:
            raise ConfigError(f"unknown env key `env.{sorted(doc)[0]}` next to env.file")
        return load_mdp(path if path.is_absolute() else base_dir / path)
    try:
        return build_env(EnvSpec.from_dict(doc))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(doc: dict, base_dir: Path | str = ".") -> RunConfig:
    """Validate a config document; errors name the first offending key."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    for key in doc:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(f"unknown top-level key `{key}`")
    if "env" not in doc:
        raise ConfigError("missing required key `env`")
    base_dir = Path(base_dir)
    env = _env_from(doc["env"], base_dir)
    try:
        im = IMConfig.from_dict(doc.get("im"))
        shaper = ShaperConfig.from_dict(doc.get("shaper"))
        train_doc = dict(doc.get("train") or {})
        if "seed" in train_doc:
            raise ConfigError("`train.seed` is not allowed; list run seeds under `seeds`")
        train_cfg = TrainConfig.from_dict(train_doc, shaper, im)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    seeds = doc.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("`seeds` must be a nonempty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("`seeds` must be distinct")
    output = Path(doc.get("output", "results"))
    verify = dict(doc.get("verify") or {})
    for key in verify:
        if key not in ("tie_tolerance", "cap"):
            raise ConfigError(f"unknown verify key `verify.{key}`")
    return RunConfig(env, im, shaper, train_cfg, tuple(sorted(seeds)), output, verify)


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return parse_config(apply_overrides(doc, overrides or []), path.parent)


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_raw_csv(path: Path, curve: LearningCurve) -> None:
    """One row per record; the smoothed column is left blank (aggregate only)."""
    _write_csv(path, RAW_COLUMNS, (
        (r.iteration, r.episode, curve.seed, r.ext_return, r.int_return_raw, r.int_return_shaped,
         r.zeta, r.max_action_prob, r.greedy_optimal, None) for r in curve.records))


def aggregate(curves: list[LearningCurve]) -> tuple[list[str], list[list]]:
    """Mean and standard error across seeds, plus a trailing-window smoothed mean return."""
    n = len(curves)
    length = min(len(c.records) for c in curves)
    header = ["iteration", "episode", "n_seeds"]
    for m in METRICS:
        header += [f"{m}_mean", f"{m}_se"]
    header.append("ext_return_smoothed")
    stacks = {m: np.array([c.column(m)[:length] for c in curves]) for m in METRICS}
    rows = []
    ext_means = []
    for k in range(length):
        rec = curves[0].records[k]
        row = [rec.iteration, rec.episode, n]
        for m in METRICS:
            col = stacks[m][:, k]
            mean = float(col.sum() / n)
            se = float(np.std(col, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            row += [mean, se]
        ext_means.append(row[3])
        window = ext_means[-SMOOTHING_WINDOW:]
        row.append(sum(window) / len(window))
        rows.append(row)
    return header, rows


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

def max_workers() -> int:
    raw = os.environ.get("OPSHAPE_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"OPSHAPE_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"OPSHAPE_THREADS must be a positive integer, got {raw!r}")
    return value


def _train_one(args) -> LearningCurve:
    env, cfg = args
    return train(env, cfg)


def train_seeds(env: Mdp, cfg: TrainConfig, seeds) -> list[LearningCurve]:
    """Train one run per seed, in parallel if allowed; results in seed order."""
    jobs = [(env, replace(cfg, seed=s)) for s in sorted(seeds)]
    workers = min(max_workers(), len(jobs))
    if workers <= 1:
        return [_train_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_one, jobs))


@dataclass
class RunSummary:
    output: Path
    files: list[Path]
    final_ext_return: float
    final_greedy_optimal: float


def _final(rows: list[list], header: list[str], column: str) -> float:
    i = header.index(column)
    tail = [r[i] for r in rows[-SMOOTHING_WINDOW:]]
    return sum(tail) / len(tail)


def run_experiment(cfg: RunConfig, output: Path | None = None) -> RunSummary:
    out = Path(output or cfg.output)
    curves = train_seeds(cfg.env, cfg.train, cfg.seeds)
    files = []
    for c in curves:
        path = out / f"seed_{c.seed}.csv"
        write_raw_csv(path, c)
        files.append(path)
    header, rows = aggregate(curves)
    agg = out / "aggregate.csv"
    _write_csv(agg, header, rows)
    files.append(agg)
    return RunSummary(out, files, _final(rows, header, "ext_return_mean"),
                      _final(rows, header, "greedy_optimal_mean"))


@dataclass
class SweepResult:
    ranking: list[tuple[int, float]]  # (D, final mean extrinsic return), best first
    runs: dict[int, RunSummary]


def sweep_d(cfg: RunConfig, d_values: list[int], output: Path | None = None) -> SweepResult:
    """Run the config once per delay D and rank D by final mean extrinsic return."""
    if cfg.shaper.kind not in ("grm", "grm_norm"):
        raise ConfigError(f"sweep-d needs shaper.kind grm or grm_norm, got {cfg.shaper.kind!r}")
    if not d_values:
        raise ConfigError("sweep-d needs at least one D value")
    if len(set(d_values)) != len(d_values):
        raise ConfigError(f"duplicate D values in {list(d_values)}")
    if any(d < 0 for d in d_values):
        raise ConfigError("D values must be >= 0")
    out = Path(output or cfg.output)
    runs = {}
    for d in d_values:
        shaper = replace(cfg.shaper, d=d)
        sub = replace(cfg, shaper=shaper, train=replace(cfg.train, shaper=shaper))
        runs[d] = run_experiment(sub, out / f"d_{d}")
    ranking = sorted(((d, runs[d].final_ext_return) for d in d_values), key=lambda x: (-x[1], x[0]))
    _write_csv(out / "ranking.csv", ("rank", "d", "final_ext_return_mean"),
               ((i + 1, d, v) for i, (d, v) in enumerate(ranking)))
    return SweepResult(ranking, runs)


# --------------------------------------------------------------------------
# blowup arithmetic
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BlowupReport:
    gamma_i: float
    n: int
    f: float
    inverse_discount: float  # 1 / gamma_i**(n - 1)
    magnitude: float  # |F'_{n-1}| for a constant stream f under PBIM
    overflow: bool


def blowup_demo(gamma_i: float, n: int, f: float = 1.0) -> BlowupReport:
    """Size of the final PBIM correction for a constant intrinsic stream."""
    if not 0.0 < gamma_i <= 1.0:
        raise ConfigError(f"gamma_i must lie in (0, 1], got {gamma_i}")
    if n < 2:
        raise ConfigError(f"n must be >= 2, got {n}")
    overflow = False
    try:
        inv = math.pow(gamma_i, -(n - 1))
    except OverflowError:
        inv, overflow = math.inf, True
    if gamma_i == 1.0:
        accumulated = f * (n - 1)
    else:
        accumulated = f * (1.0 - gamma_i ** (n - 1)) / (1.0 - gamma_i)
    magnitude = abs(accumulated) * inv if accumulated else 0.0
    if math.isinf(magnitude):
        overflow = True
    return BlowupReport(gamma_i, n, f, inv, magnitude, overflow)
