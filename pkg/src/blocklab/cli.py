"""Command-line entry point: ``blocklab {train,sweep,eval,oracle,plot,baseline}``."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides, load_config
from .engine import Engine
from .experiments import emit_plots, evaluate_checkpoint, run_sweep, sweep_cells
from .metrics import convergence_iteration, format_convergence, training_reward
from .oracle import ORACLE_PRESETS, Expectimax, preset_engine, random_baseline
from .training import train

log = logging.getLogger("blocklab")


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out-dir", default="runs", help="output directory (default: runs)")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--deterministic", action="store_true",
                   help="single process, no wall-clock values in outputs")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _rule_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("rule overrides")
    g.add_argument("--board-rows", type=int)
    g.add_argument("--board-cols", type=int)
    g.add_argument("--h", type=int, help="holding blocks")
    g.add_argument("--p", type=int, help="preview blocks")
    g.add_argument("--extra-blocks", help="comma-separated pentominoes, e.g. U5,T5 (empty for none)")
    g.add_argument("--reward-cap", type=int)


def _search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, help="simulations per move")
    p.add_argument("--m", type=int, help="root candidates (0 = all legal)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blocklab", description="Block puzzle difficulty lab")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one rule set")
    _shared(p)
    _rule_flags(p)
    _search_flags(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--games", type=int, help="self-play games per iteration")
    p.add_argument("--window", type=int, default=50, help="training-reward window")
    p.add_argument("--eps", type=float, default=0.0, help="convergence tolerance below the cap")

    p = sub.add_parser("sweep", help="train a grid of rule variants")
    _shared(p)
    _rule_flags(p)
    _search_flags(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--games", type=int)

    p = sub.add_parser("eval", help="play N episodes with a frozen checkpoint")
    _shared(p)
    _rule_flags(p)
    _search_flags(p)
    p.add_argument("checkpoint", help=".sgbz file")
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("oracle", help="solve a preset world exactly")
    _shared(p)
    p.add_argument("--preset", choices=sorted(ORACLE_PRESETS), default="oracle-4x4-mixed")

    p = sub.add_parser("plot", help="render stats or sweep CSVs to SVG")
    _shared(p)
    p.add_argument("inputs", nargs="+", help="iteration_stats.csv or sweep_results.csv files")

    p = sub.add_parser("baseline", help="uniformly random placement baseline")
    _shared(p)
    _rule_flags(p)
    p.add_argument("--episodes", type=int, default=1000)
    return ap


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    extras = getattr(args, "extra_blocks", None)
    if extras is not None:
        extras = [b for b in extras.split(",") if b.strip()]
    cfg = apply_overrides(
        cfg, seed=args.seed, board_rows=getattr(args, "board_rows", None),
        board_cols=getattr(args, "board_cols", None), h=getattr(args, "h", None),
        p=getattr(args, "p", None), extra_blocks=extras, reward_cap=getattr(args, "reward_cap", None))
    search_changes = {}
    if getattr(args, "n", None) is not None:
        search_changes["n"] = args.n
    if getattr(args, "m", None) is not None:
        search_changes["m"] = None if args.m == 0 else args.m
    if search_changes:
        cfg.train.search = type(cfg.train.search)(**{**vars(cfg.train.search), **search_changes})
    if getattr(args, "iterations", None) is not None:
        cfg.train.iterations = args.iterations
    if getattr(args, "games", None) is not None:
        cfg.train.games_per_iteration = args.games
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    tcfg = cfg.train_config(threads=args.threads, deterministic=args.deterministic)
    engine = Engine(cfg.rules)
    out = Path(args.out_dir)
    res = train(engine, tcfg, out)
    tr = training_reward(res.stats, args.window)
    conv = convergence_iteration(res.stats, cfg.rules.reward_cap, args.eps)
    (out / "summary.json").write_text(json.dumps({
        "variant_id": cfg.rules.variant_id, "rules": cfg.rules.as_dict(), "seed": cfg.seed,
        "training_reward": tr, "convergence_iteration": format_convergence(conv),
        "window": args.window, "eps": args.eps,
    }, indent=2, sort_keys=True) + "\n")
    print(f"{cfg.rules.variant_id} training_reward={tr:.3f} "
          f"convergence_iteration={format_convergence(conv)} stats={res.stats_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    sw = cfg.sweep
    cells = sweep_cells(cfg.rules, sw.h, sw.p, sw.extra_blocks, sw.seeds)
    tcfg = cfg.train_config(deterministic=args.deterministic)
    workers = 1 if args.deterministic else max(args.threads, sw.workers)
    results = run_sweep(cells, tcfg, args.out_dir, workers, sw.window, sw.eps)
    for r in results:
        tr = "error" if r.failed else f"{r.training_reward:.3f}"
        print(f"{r.variant_id} seed={r.seed} training_reward={tr} "
              f"convergence_iteration={format_convergence(r.convergence_iteration)}"
              + (f" error={r.error}" if r.failed else ""))
    print(f"wrote {Path(args.out_dir) / 'sweep_results.csv'}")
    return 1 if all(r.failed for r in results) else 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    episodes = args.episodes if args.episodes is not None else cfg.eval_episodes
    scores = evaluate_checkpoint(args.checkpoint, cfg.rules, cfg.train.search, episodes, cfg.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "eval_scores.csv", scores, fmt="%d", header="score", comments="")
    print(f"{cfg.rules.variant_id} episodes={episodes} mean={scores.mean():.3f} "
          f"std={scores.std():.3f}")
    return 0


def cmd_oracle(args) -> int:
    engine = preset_engine(args.preset)
    solver = Expectimax(engine)
    openings = list(itertools.product(range(engine.n_shapes), repeat=engine.h + engine.p))
    starts = [engine.initial_state(o[:engine.h], o[engine.h:]) for o in openings]
    weights = [float(np.prod([engine.weights[s] for s in o])) for o in openings]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.preset}.csv"
    solver.export_csv(path, starts)
    expected = sum(w * solver.value(s) for w, s in zip(weights, starts))
    print(f"{args.preset}: expected value from an empty board = {expected:.6f} "
          f"({len(solver.memo)} memo entries) -> {path}")
    return 0


def cmd_plot(args) -> int:
    written = emit_plots(args.inputs, args.out_dir)
    for p in written:
        print(p)
    return 0


def cmd_baseline(args) -> int:
    cfg = _config(args)
    mean, std = random_baseline(Engine(cfg.rules), args.episodes, cfg.seed)
    print(f"{cfg.rules.variant_id} random baseline over {args.episodes} episodes: "
          f"mean={mean:.3f} std={std:.3f}")
    return 0


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "eval": cmd_eval, "oracle": cmd_oracle,
            "plot": cmd_plot, "baseline": cmd_baseline}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"blocklab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
