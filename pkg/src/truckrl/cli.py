"""Command line front end: train, eval, replay, sweep.

Exit codes: 0 success, 1 an operation ran but failed (a replay
diverged, a sweep member crashed), 2 bad usage or bad configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import (ConfigError, RunConfig, apply_overrides, config_from_dict,
                     config_hash, config_to_dict, load_config)
from .evaluate import (aggregate, evaluate_checkpoint, run_rule_based_ego,
                       run_validation, write_table)
from .rewards import reward_components
from .trace import TraceError, load_trace, replay_trace, write_trace
from .training import agent_from_checkpoint, load_checkpoint, resume_single_seed, run_training

USAGE_ERROR = 2
OP_ERROR = 1


def _build_config(args) -> RunConfig:
    data = config_to_dict(load_config(args.config)) if args.config else {}
    if not isinstance(data, dict):
        raise ConfigError(f"{args.config}: top level must be an object")
    apply_overrides(data, args.override or [])
    for attr, dotted in (("seed", "seed"), ("seeds", "training.n_seeds"),
                         ("scale", "training.scale"), ("workers", "training.workers"),
                         ("out", "output_dir"), ("episodes", "eval.n_episodes")):
        value = getattr(args, attr, None)
        if value is not None:
            apply_overrides(data, [f"{dotted}={json.dumps(value)}"])
    if getattr(args, "audit", False):
        apply_overrides(data, ["training.audit_log=true"])
    return config_from_dict(data)


def _cmd_train(args) -> int:
    if args.resume:
        ck = load_checkpoint(args.resume)
        if args.config or args.override:
            cfg = _build_config(args)
        else:
            cfg = config_from_dict(ck["meta"]["config"])
        seed_dir = Path(args.out or cfg.output_dir) / "resumed"
        art = resume_single_seed(cfg, args.resume, seed_dir)
        print(f"resumed seed {art.seed}: final checkpoint {art.final_checkpoint}")
        return 0
    cfg = _build_config(args)
    run = run_training(cfg)
    print(f"run directory: {run.run_dir}")
    for art in run.per_seed:
        print(f"  seed {art.seed}: curve {art.curve_path}, "
              f"final {art.final_checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    out_dir = Path(args.out) if args.out else Path(".")
    ck = None
    if args.rule_based_ego:
        data = config_to_dict(load_config(args.config)) if args.config else {}
    else:
        if not Path(args.checkpoint).exists():
            print(f"error: checkpoint {args.checkpoint} not found", file=sys.stderr)
            return OP_ERROR
        ck = load_checkpoint(args.checkpoint)
        data = (config_to_dict(load_config(args.config)) if args.config
                else ck["meta"]["config"])
    apply_overrides(data, args.override or [])
    if args.episodes is not None:
        apply_overrides(data, [f"eval.n_episodes={args.episodes}"])
    use = config_from_dict(data)
    n_seeds = args.seeds or use.eval.n_seeds
    base = use.seed if args.seed is None else args.seed
    if args.rule_based_ego:
        tables = []
        for j in range(n_seeds):
            t, _ = run_rule_based_ego(use, use.eval.n_episodes, base + j)
            tables.append(t)
        table = aggregate(tables)
        stem = "eval_rule_based"
    else:
        table, tables = evaluate_checkpoint(args.checkpoint, use.eval.n_episodes,
                                            base, n_seeds=n_seeds, cfg=use)
        stem = f"eval_{config_hash(use)}"
        if args.trace:
            agent, _ = agent_from_checkpoint(ck)
            _, _, traces = run_validation(agent, use, use.eval.n_episodes, base,
                                          collect_traces=args.trace)
            for k, (ep_seed, rows) in enumerate(traces):
                p = write_trace(out_dir / f"trace_{k}.csv", use, ep_seed, rows)
                print(f"trace written: {p}")
    for j, t in enumerate(tables):
        write_table(t, out_dir, f"{stem}_seed{base + j}")
    txt, csv = write_table(table, out_dir, stem)
    print(table.to_text())
    print(f"table written: {txt} and {csv} (+{len(tables)} per-seed tables)")
    return 0


def _cmd_replay(args) -> int:
    worst = 0
    for path in args.trace:
        cfg, seed, rows = load_trace(path)
        _, divergence, steps = replay_trace(cfg, seed, rows)
        names = list(reward_components(cfg.reward, steps[0][2])) if steps else []
        print(f"{path}: step action reward | " + " ".join(names))
        for k, (action, reward, summary) in enumerate(steps):
            parts = reward_components(cfg.reward, summary)
            detail = " ".join(f"{v:+.4f}" for v in parts.values())
            print(f"  {k:4d} {action:3d} {reward:+10.4f} | {detail}")
        if divergence is None:
            print(f"{path}: OK ({len(rows)} substeps reproduced exactly)")
        else:
            print(f"{path}: DIVERGED at substep row {divergence}")
            worst = OP_ERROR
    return worst


def _cmd_sweep(args) -> int:
    failures = 0
    for path in args.configs:
        data = config_to_dict(load_config(path))
        apply_overrides(data, args.override or [])
        if args.out is not None:
            apply_overrides(data, [f"output_dir={json.dumps(args.out)}"])
        cfg = config_from_dict(data)
        print(f"=== {path} (config {config_hash(cfg)}) ===")
        try:
            run = run_training(cfg)
        except (ConfigError, OSError) as exc:
            print(f"{path}: FAILED ({exc})", file=sys.stderr)
            failures += 1
            continue
        print(f"run directory: {run.run_dir}")
    return OP_ERROR if failures else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="truckrl",
                                description="Tactical highway driving RL toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one config (n_seeds seeds)")
    t.add_argument("--config", help="JSON config file (defaults apply otherwise)")
    t.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="dotted-path override, repeatable")
    t.add_argument("--seed", type=int, help="base seed")
    t.add_argument("--seeds", type=int, help="number of seeds")
    t.add_argument("--scale", type=float, help="shrink/grow step counts and stage boundaries")
    t.add_argument("--workers", type=int, help="parallel seed processes")
    t.add_argument("--out", help="output root directory")
    t.add_argument("--resume", metavar="CKPT", help="continue from a resume-capable checkpoint")
    t.add_argument("--audit", action="store_true", help="write the per-step reward audit log")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or the rule-based truck")
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint", help="policy checkpoint (.npz)")
    g.add_argument("--rule-based-ego", action="store_true",
                   help="drive the truck with the surrounding-traffic rules")
    e.add_argument("--config", help="override the checkpoint-embedded config")
    e.add_argument("--override", action="append", metavar="KEY=VALUE")
    e.add_argument("--episodes", type=int, help="episodes per evaluation seed")
    e.add_argument("--seeds", type=int, help="number of evaluation seeds")
    e.add_argument("--seed", type=int, help="base evaluation seed")
    e.add_argument("--trace", type=int, default=0, metavar="N",
                   help="record the first N episodes as replayable traces")
    e.add_argument("--out", help="directory for tables and traces")
    e.set_defaults(func=_cmd_eval)

    r = sub.add_parser("replay", help="verify traces reproduce bit for bit")
    r.add_argument("trace", nargs="+", help="trace file(s)")
    r.set_defaults(func=_cmd_replay)

    s = sub.add_parser("sweep", help="train several configs back to back")
    s.add_argument("configs", nargs="+", help="config files")
    s.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="applied to every config")
    s.add_argument("--out", help="output root for all runs")
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, TraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return OP_ERROR


if __name__ == "__main__":
    sys.exit(main())
