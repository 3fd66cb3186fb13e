"""Command-line entry point: ``opshape {run,sweep-d,verify,blowup-demo,solve}``.

Exit codes: 0 success, 1 configuration error, 2 verification verdict
violated, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .environments import EnvError, build_env
from .experiment import (ConfigError, blowup_demo, load_config, max_workers, run_experiment,
                         sweep_d)
from .intrinsic import IntrinsicConfigError
from .learner import TrainConfigError, TrainingAborted
from .mdp import MdpError, load_mdp, value_iteration
from .oracle import OracleError, check_optimality_preserved
from .shaping import ShapingError

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATED, EXIT_ABORT = 0, 1, 2, 3
CONFIG_ERRORS = (ConfigError, MdpError, EnvError, IntrinsicConfigError, ShapingError, TrainConfigError)


def _dump(doc, path: str | None) -> None:
    text = yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    max_workers()
    summary = run_experiment(cfg, Path(args.output) if args.output else None)
    print(f"wrote {len(summary.files)} files to {summary.output}")
    print(f"final mean extrinsic return (last 10): {summary.final_ext_return!r}")
    print(f"final greedy-optimal rate (last 10): {summary.final_greedy_optimal!r}")
    return EXIT_OK


def cmd_sweep_d(args) -> int:
    cfg = load_config(args.config, args.set)
    max_workers()
    result = sweep_d(cfg, args.d, Path(args.output) if args.output else None)
    print("rank  D  final_ext_return_mean")
    for i, (d, v) in enumerate(result.ranking, 1):
        print(f"{i:>4}  {d}  {v!r}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config, args.set)
    report = check_optimality_preserved(cfg.env, cfg.im, cfg.shaper, **cfg.verify)
    _dump(report.to_dict(cfg.env), args.output)
    print(f"verdict: {report.verdict}", file=sys.stderr)
    return EXIT_OK if report.verdict == "preserved" else EXIT_VIOLATED


def cmd_blowup(args) -> int:
    rep = blowup_demo(args.gamma_i, args.n, args.f)
    _dump({"gamma_i": rep.gamma_i, "n": rep.n, "f": rep.f,
           "inverse_discount": rep.inverse_discount, "final_step_magnitude": rep.magnitude,
           "overflow": rep.overflow}, None)
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.mdp.startswith("builtin:"):
        mdp = build_env(args.mdp.split(":", 1)[1])
    else:
        mdp = load_mdp(args.mdp)
    V, Q = value_iteration(mdp)
    doc = {
        "name": mdp.name,
        "states": list(mdp.state_names),
        "actions": list(mdp.action_names),
        "V": [{"t": t, "values": dict(zip(mdp.state_names, map(float, V[t])))} for t in range(mdp.horizon + 1)],
        "Q": [{"t": t, "s": mdp.state_names[s], "values": dict(zip(mdp.action_names, map(float, Q[t, s])))}
              for t in range(mdp.horizon) for s in range(mdp.num_states)],
    }
    _dump(doc, args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opshape", description="Optimality-preserving intrinsic reward shaping.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="YAML experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (dotted path), repeatable")
        sp.add_argument("--output", help="output directory or file (overrides `output`)")

    r = sub.add_parser("run", help="train every seed and write per-seed and aggregate CSVs")
    with_config(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep-d", help="run a GRM config for several delays and rank them")
    with_config(s)
    s.add_argument("--d", type=int, nargs="+", required=True, help="delay values")
    s.set_defaults(func=cmd_sweep_d)

    v = sub.add_parser("verify", help="certify optimal-policy preservation exactly")
    with_config(v)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("blowup-demo", help="size of the final PBIM correction")
    b.add_argument("--gamma-i", type=float, default=0.99)
    b.add_argument("--n", type=int, default=4500)
    b.add_argument("--f", type=float, default=1.0)
    b.set_defaults(func=cmd_blowup)

    so = sub.add_parser("solve", help="dump V* and Q* for an MDP spec file or builtin:<kind>")
    so.add_argument("mdp")
    so.add_argument("--output")
    so.set_defaults(func=cmd_solve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, OracleError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
