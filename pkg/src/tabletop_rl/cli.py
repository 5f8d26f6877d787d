"""Command line entry point: train, evaluate, sweep, aggregate, trajectory."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import (
    RunConfig,
    aggregate_dir,
    final_test,
    plot_success,
    run_config_from_file,
    train,
)
from .envsim import TaskConfig, dump_trajectory, load_task_config
from .numerics import ContractError

log = logging.getLogger("tabletop_rl")


def _hidden(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _add_run_args(p):
    p.add_argument("--task", choices=["push", "slide", "pick"])
    p.add_argument("--algo", choices=["ddpg", "sac", "tqc"])
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--reward", choices=["sparse", "dense"])
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--hidden", type=_hidden, help="hidden layer sizes, e.g. 64,64")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, help="key = value file; flags override it")


def _run_config(args, seed) -> RunConfig:
    overrides = {
        "total_steps": args.steps, "reward_mode": args.reward,
        "eval_interval": args.eval_interval, "eval_episodes": args.eval_episodes,
        "hidden_sizes": args.hidden, "batch_size": args.batch_size,
        "out_dir": args.out, "seed": seed,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config is not None:
        return run_config_from_file(args.config, task_kind=args.task, algorithm=args.algo,
                                    **overrides)
    if args.task is None or args.algo is None:
        raise ContractError("--task and --algo are required without --config")
    return RunConfig.for_task(args.task, args.algo, **overrides)


def _progress(step, rec):
    log.info("step %d  success %.3f  return %.2f", step, rec.success_rate, rec.mean_return)


def _train_one(cfg: RunConfig):
    art = train(cfg, progress=_progress)
    summary = final_test(art.checkpoint_path, cfg.task_config(), 20, cfg.seed,
                         summary_path=cfg.out_dir / "summary.txt")
    print(f"seed {cfg.seed}: final test success {summary}  ({art.wall_seconds:.0f} s)")
    return art


def cmd_train(args):
    _train_one(_run_config(args, args.seed))


def cmd_sweep(args):
    seeds = range(args.first_seed, args.first_seed + args.seeds)
    cfg = None
    for seed in seeds:
        cfg = _run_config(args, seed)
        _train_one(cfg)
    rows = aggregate_dir(args.out, args.out / "aggregate.csv")
    plot_success({cfg.algorithm: rows}, args.out / "aggregate.png",
                 f"{cfg.task_kind.value} / {cfg.algorithm}")
    last = rows[-1]
    print(f"final median success {last.median:.3f} (std {last.std:.3f}) over {last.n_seeds} seeds")


def cmd_evaluate(args):
    env_cfg = load_task_config(args.config) if args.config else TaskConfig.for_task(args.task)
    summary = final_test(args.checkpoint, env_cfg, args.episodes, args.seed,
                         summary_path=args.summary)
    print(f"success {summary}")


def cmd_aggregate(args):
    rows = aggregate_dir(args.in_dir, args.out)
    if args.plot:
        plot_success({args.label or args.in_dir.name: rows}, args.plot)
    print(f"{len(rows)} steps aggregated into {args.out}")


def cmd_trajectory(args):
    env_cfg = load_task_config(args.config) if args.config else TaskConfig.for_task(args.task)
    if args.checkpoint:
        from .agents import load_agent

        agent = load_agent(args.checkpoint)

        def policy(obs):
            return agent.act(obs.observation, obs.desired_goal, False, None)
    else:
        zero = np.zeros(env_cfg.action_dim)

        def policy(obs):
            return zero
    n = dump_trajectory(env_cfg, args.seed, policy, args.out)
    print(f"{n} steps written to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="tabletop-rl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one seed")
    _add_run_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train several seeds and aggregate")
    _add_run_args(p)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--first-seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="final test of a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--task", choices=["push", "slide", "pick"], default="push")
    p.add_argument("--config", type=Path)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--summary", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("aggregate", help="median/std across curve files")
    p.add_argument("--in", dest="in_dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plot", type=Path, help="also render a PNG")
    p.add_argument("--label")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("trajectory", help="dump one episode as CSV")
    p.add_argument("--task", choices=["push", "slide", "pick"], default="push")
    p.add_argument("--config", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_trajectory)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except (ContractError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
