"""Command-line entry point.

Subcommands: run (train an experiment manifest), eval (frozen evaluation of
a checkpoint), gen (sample and dump episodes/frames), check (gradient and
invariant suites), splits (print split pools).  Exit codes: 0 success,
1 usage, 2 configuration, 3 runtime fault.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="langground",
                description="Grounded instruction-following agents in "
                            "procedural grid worlds.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train an experiment manifest")
    run.add_argument("manifest", help="manifest path or built-in name")
    run.add_argument("-o", "--out", default=None, help="output directory")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--budget", type=int, default=None)

    ev = sub.add_parser("eval", help="frozen evaluation of a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--task", required=True)
    ev.add_argument("--split", default=None)
    ev.add_argument("--role", choices=("train", "test"), default="test")
    ev.add_argument("--episodes", type=int, default=200)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--greedy", action="store_true")

    gen = sub.add_parser("gen", help="sample episodes; optionally dump frames")
    gen.add_argument("--task", required=True)
    gen.add_argument("--split", default=None)
    gen.add_argument("--role", choices=("train", "test"), default="train")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("-n", "--episodes", type=int, default=1)
    gen.add_argument("--frames", default=None,
                     help="directory for raw 8-bit RGB frame dumps")

    chk = sub.add_parser("check", help="gradient and invariant suites")
    chk.add_argument("--fast", action="store_true",
                     help="fewer random repetitions")

    sp = sub.add_parser("splits", help="print split pools")
    sp.add_argument("name")
    return p


def cmd_run(args) -> int:
    import dataclasses
    from .config import ConfigError, load_manifest
    try:
        manifest = load_manifest(args.manifest)
        fixes = {}
        if args.seed is not None:
            fixes["seed"] = args.seed
        if args.budget is not None:
            fixes["budget"] = args.budget
        if args.workers is not None:
            fixes["workers"] = args.workers
        if args.out is not None:
            fixes["out_dir"] = args.out
        if fixes:
            manifest = dataclasses.replace(manifest, **fixes)
    except (ConfigError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    from .experiments import run_experiment
    try:
        reports = run_experiment(manifest)
    except Exception as err:
        print(f"runtime fault: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    for r in reports:
        print(f"[eval] split={r.split} step={r.step} "
              f"success={r.success_rate:.3f} +-{r.stderr_band:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np
    from . import checkpoint as ckpt
    from .agent import AgentConfig, param_specs
    from .config import ConfigError, resolve_task
    from .experiments import evaluate, resolve_split
    from .nn.optim import ParamStore
    from .world import task_vocabulary
    try:
        task = resolve_task(args.task)
        constraints = resolve_split(args.split, task)
        if constraints is not None and args.role == "test":
            constraints = constraints.as_test()
        vocab = task_vocabulary(task)
        cfg = AgentConfig(vocab_words=len(vocab), encoder=task.encoder,
                          instr_len=task.max_instr_len)
        store = ParamStore(param_specs(cfg))
        ckpt.load_into(store, args.checkpoint, vocab_words=vocab.words)
    except (ConfigError, ckpt.CheckpointError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = evaluate(store.params, cfg, task, constraints, vocab,
                          args.episodes, args.seed, greedy=args.greedy)
    except Exception as err:
        print(f"runtime fault: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"split={report.split} episodes={report.episodes} "
          f"success={report.success_rate:.3f} +-{report.stderr_band:.3f} "
          f"mean_reward={report.mean_reward:.3f}")
    return EXIT_OK


def cmd_gen(args) -> int:
    from . import world
    from .config import ConfigError, resolve_task
    from .experiments import resolve_split
    from .render import dump_frame, render_raw
    try:
        task = resolve_task(args.task)
        constraints = resolve_split(args.split, task)
        if constraints is not None and args.role == "test":
            constraints = constraints.as_test()
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    frames_dir = Path(args.frames) if args.frames else None
    if frames_dir:
        frames_dir.mkdir(parents=True, exist_ok=True)
    try:
        for k in range(args.episodes):
            ep = world.sample_episode(task, constraints, (args.seed, k))
            objs = "; ".join(
                f"{o.factors.shade} {o.factors.colour} {o.factors.pattern} "
                f"{o.factors.size} {o.factors.shape} at {o.cell} "
                f"reward {o.reward:+.2f}" for o in ep.objects)
            print(f"episode {k}: \"{ep.instruction.string}\" | spawn "
                  f"{ep.agent_spawn} | {objs}")
            if frames_dir:
                state = world.initial_state(ep)
                raw = render_raw(state, ep)
                dump_frame(raw, frames_dir / f"ep{k:04d}_t000.rgb")
    except world.WorldError as err:
        print(f"runtime fault: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_numeric_suite
    ok = run_numeric_suite(fast=args.fast, out=sys.stdout)
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_splits(args) -> int:
    from .splits import SplitError, build_split
    try:
        s = build_split(args.name)
    except SplitError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"split {s.name}")
    for attr in ("train_unigrams", "test_unigrams", "train_shapes",
                 "test_shapes", "train_colours", "test_colours"):
        value = getattr(s, attr)
        if value:
            print(f"  {attr}: {', '.join(value)}")
    if s.train_instructions:
        uni = [i for i in s.train_instructions if i[0] != "bigram"]
        big = [i for i in s.train_instructions if i[0] == "bigram"]
        print(f"  train instructions: {len(uni)} unigrams, {len(big)} bigrams")
    if s.test_instructions:
        print(f"  held-out bigrams ({len(s.test_instructions)}):")
        for item in s.test_instructions:
            print(f"    {item[1]} {item[2]}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    handlers = {"run": cmd_run, "eval": cmd_eval, "gen": cmd_gen,
                "check": cmd_check, "splits": cmd_splits}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
