"""Run configuration: a YAML (or JSON) file plus command-line overrides.

Top-level keys describe the rule set and master seed::

    board_rows: 8
    board_cols: 8
    h: 3
    p: 0
    extra_blocks: []        # any of U5, V5, X5, T5
    reward_cap: 50
    seed: 0
    clear_axes: both        # both | rows | cols
    draw: orientation       # orientation | family

Optional sections tune the rest::

    train:  {iterations, games_per_iteration, train_steps, batch_size, lr,
             momentum, value_weight, buffer_capacity, checkpoint_every, hidden}
    search: {n, m, c_visit, c_scale, max_tree_depth}
    sweep:  {h: [...], p: [...], blocks: [...], pairs: bool,
             extra_blocks: [[...], ...], seeds: [...], workers, eps, window}
    eval:   {episodes}
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .planner import SearchConfig
from .rules import RuleSet, validate_ruleset
from .training import TrainConfig

RULE_KEYS = ("board_rows", "board_cols", "h", "p", "extra_blocks", "reward_cap", "clear_axes", "draw")
TOP_KEYS = set(RULE_KEYS) | {"seed", "train", "search", "sweep", "eval"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"search", "seed", "threads", "deterministic"}
SEARCH_KEYS = {"n", "m", "c_visit", "c_scale", "max_tree_depth"}
SWEEP_KEYS = {"h", "p", "blocks", "pairs", "extra_blocks", "seeds", "workers", "eps", "window"}
EVAL_KEYS = {"episodes"}


class ConfigError(ValueError):
    pass


@dataclass
class SweepSpec:
    h: list[int] = field(default_factory=lambda: [3])
    p: list[int] = field(default_factory=lambda: [0])
    extra_blocks: list[tuple[str, ...]] = field(default_factory=lambda: [()])
    seeds: list[int] = field(default_factory=lambda: [0])
    workers: int = 1
    eps: float = 0.0
    window: int = 50


@dataclass
class RunConfig:
    rules: RuleSet = field(default_factory=RuleSet)
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    eval_episodes: int = 200

    def train_config(self, **overrides) -> TrainConfig:
        """The training config with the master seed filled in."""
        base = {f.name: getattr(self.train, f.name) for f in fields(TrainConfig)}
        base["seed"] = self.seed
        base.update(overrides)
        return TrainConfig(**base)


def block_grid(blocks: list[str], pairs: bool) -> list[tuple[str, ...]]:
    """Cells for a block-addition sweep: the base, each single, then each unordered pair.

    Singles sit on the diagonal of the block×block grid and pairs off it.
    """
    cells: list[tuple[str, ...]] = [()]
    cells += [(b,) for b in blocks]
    if pairs:
        cells += [(a, b) for i, a in enumerate(blocks) for b in blocks[i + 1:]]
    return cells


def _check_keys(section: str, got: dict, allowed: set[str]) -> None:
    unknown = sorted(set(got) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def from_mapping(raw: dict[str, Any] | None) -> RunConfig:
    raw = dict(raw or {})
    _check_keys("config", raw, TOP_KEYS)
    rule_part = {k: raw[k] for k in RULE_KEYS if k in raw}
    defaults = RuleSet().as_dict()
    try:
        rules = validate_ruleset(RuleSet.from_dict({**defaults, **rule_part}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid rule set: {exc}") from None

    search_raw = dict(raw.get("search") or {})
    _check_keys("search", search_raw, SEARCH_KEYS)
    train_raw = dict(raw.get("train") or {})
    _check_keys("train", train_raw, TRAIN_KEYS)
    if train_raw.get("hidden") is not None:
        train_raw["hidden"] = tuple(int(x) for x in train_raw["hidden"])
    try:
        train = TrainConfig(**train_raw, search=SearchConfig(**search_raw))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train/search section: {exc}") from None

    sweep_raw = dict(raw.get("sweep") or {})
    _check_keys("sweep", sweep_raw, SWEEP_KEYS)
    if "extra_blocks" in sweep_raw and "blocks" in sweep_raw:
        raise ConfigError("sweep: give either extra_blocks or blocks, not both")
    if "blocks" in sweep_raw:
        cells = block_grid(list(sweep_raw.pop("blocks")), bool(sweep_raw.pop("pairs", False)))
    else:
        sweep_raw.pop("pairs", None)
        cells = [tuple(c) for c in sweep_raw.pop("extra_blocks", [rules.extra_blocks])]
    sweep = SweepSpec(
        h=[int(x) for x in sweep_raw.get("h", [rules.h])],
        p=[int(x) for x in sweep_raw.get("p", [rules.p])],
        extra_blocks=cells,
        seeds=[int(x) for x in sweep_raw.get("seeds", [raw.get("seed", 0)])],
        workers=int(sweep_raw.get("workers", 1)),
        eps=float(sweep_raw.get("eps", 0.0)),
        window=int(sweep_raw.get("window", 50)),
    )

    eval_raw = dict(raw.get("eval") or {})
    _check_keys("eval", eval_raw, EVAL_KEYS)
    return RunConfig(rules=rules, seed=int(raw.get("seed", 0)), train=train, sweep=sweep,
                     eval_episodes=int(eval_raw.get("episodes", 200)))


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML/JSON config file; ``None`` gives the defaults."""
    if path is None:
        return from_mapping({})
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_mapping(raw)


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Replace rule keys and the seed with any non-None overrides, re-validating the rules."""
    rule_changes = {k: v for k, v in overrides.items() if k in RULE_KEYS and v is not None}
    if rule_changes:
        merged = {**cfg.rules.as_dict(), **rule_changes}
        try:
            cfg.rules = validate_ruleset(RuleSet.from_dict(merged))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid rule set: {exc}") from None
    if overrides.get("seed") is not None:
        cfg.seed = int(overrides["seed"])
    return cfg
