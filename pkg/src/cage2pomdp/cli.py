"""Command line interface: train, evaluate, replay, scenario validate."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .adversary import AttackerStrategyId
from .harness import (EVAL_HEADER, TrainConfig, evaluate, replay, train)
from .scenario import ScenarioError, default_scenario, load_scenario_file


def _cmd_train(args) -> int:
    cfg = TrainConfig.from_yaml_file(args.config)
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "seeds": [args.seed]})
    if args.output_dir is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "output_dir": args.output_dir})
    result = train(cfg)
    print(f"run directory: {result.run_dir}")
    print(f"learning curves: {result.curves_csv}")
    for seed, path in result.checkpoints.items():
        print(f"checkpoint (seed {seed}): {path}")
    return 0


def _cmd_evaluate(args) -> int:
    scn = load_scenario_file(args.scenario) if args.scenario else default_scenario()
    trace_dir = Path(args.dump_traces) if args.dump_traces else None
    cell = evaluate(args.checkpoint, AttackerStrategyId(args.attacker),
                    args.horizon, episodes=args.episodes, seed=args.seed,
                    scenario=scn, particles=args.particles,
                    greedy=args.greedy, trace_dir=trace_dir)
    print(f"{cell.attacker.value} T={cell.horizon}: "
          f"{cell.mean_reward:.2f} +- {cell.std_reward:.2f} "
          f"({cell.episodes} episodes)")
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        new = not path.exists()
        with open(path, "a", encoding="utf-8") as fh:
            if new:
                fh.write(EVAL_HEADER + "\n")
            fh.write(cell.csv_row() + "\n")
        print(f"appended to {path}")
    return 0


def _cmd_replay(args) -> int:
    print(replay(args.trace))
    return 0


def _cmd_scenario(args) -> int:
    if args.action != "validate":
        raise ValueError(f"unknown scenario action {args.action!r}")
    try:
        scn = load_scenario_file(args.file)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 1
    print(f"valid scenario: {len(scn.hosts)} hosts, {len(scn.subnets)} subnets, "
          f"{len(scn.services)} services, target {scn.target_host} "
          f"(fingerprint {scn.fingerprint()})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cage2pomdp",
        description="Intrusion-response POMDP simulator with a belief-filter "
                    "PPO defender")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train defender policies")
    p_train.add_argument("--config", required=True, help="YAML training config")
    p_train.add_argument("--seed", type=int, default=None,
                         help="train only this seed")
    p_train.add_argument("--output-dir", default=None,
                         help="override the config's output directory")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--attacker", choices=["bline", "meander"], required=True)
    p_eval.add_argument("--horizon", type=int, choices=[30, 50, 100], required=True)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--particles", type=int, default=1000)
    p_eval.add_argument("--greedy", action="store_true",
                        help="argmax actions instead of sampling")
    p_eval.add_argument("--scenario", default=None, help="scenario YAML file")
    p_eval.add_argument("--out", default=None, help="append the cell to this CSV")
    p_eval.add_argument("--dump-traces", default=None,
                        help="write per-episode trajectory dumps here")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_replay = sub.add_parser("replay", help="render a trajectory dump")
    p_replay.add_argument("trace")
    p_replay.set_defaults(func=_cmd_replay)

    p_scn = sub.add_parser("scenario", help="scenario tooling")
    p_scn.add_argument("action", choices=["validate"])
    p_scn.add_argument("file")
    p_scn.set_defaults(func=_cmd_scenario)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
