"""Exact expectimax for tiny worlds, plus the random-placement baseline."""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .engine import Action, Engine, GameState
from .rules import Catalog, RuleSet

# Named worlds small enough to solve exactly.
ORACLE_PRESETS: dict[str, tuple[RuleSet, Catalog]] = {
    "oracle-2x2-mono": (
        RuleSet(board_rows=2, board_cols=2, h=1, p=0, reward_cap=1),
        Catalog.from_cells([("mono", [(0, 0)])]),
    ),
    "oracle-4x4-mixed": (
        RuleSet(board_rows=4, board_cols=4, h=1, p=0, reward_cap=3),
        Catalog.from_cells([
            ("dom-h", [(0, 0), (0, 1)]),
            ("dom-v", [(0, 0), (1, 0)]),
            ("square", [(0, 0), (0, 1), (1, 0), (1, 1)]),
        ]),
    ),
}


def preset_engine(name: str) -> Engine:
    try:
        rules, catalog = ORACLE_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown oracle preset {name!r}; choose from {sorted(ORACLE_PRESETS)}") from None
    return Engine(rules, catalog)


class OracleBudgetExceeded(RuntimeError):
    def __init__(self, count: int):
        super().__init__(f"oracle memo exceeded its budget after {count} entries")
        self.count = count


class OracleEntry(NamedTuple):
    key: int
    value: float
    best_action: int | None  # action index, None for terminal states
    action_values: dict[int, float]


@dataclass
class Expectimax:
    """Memoized solver: V(s) = max_a [r(a) + sum_o sigma(o) V(g(as(a), o))], V(terminal) = 0."""

    engine: Engine
    max_entries: int = 10_000_000

    def __post_init__(self):
        self.memo: dict[int, float] = {}
        self._probs = list(self.engine.catalog.draw_weights)
        if sys.getrecursionlimit() < 10_000:
            sys.setrecursionlimit(10_000)

    def value(self, state: GameState) -> float:
        if state.terminal:
            return 0.0
        key = self.engine.hash_state(state)
        v = self.memo.get(key)
        if v is None:
            v = max(self.action_values(state).values())
            if len(self.memo) >= self.max_entries:
                raise OracleBudgetExceeded(len(self.memo))
            self.memo[key] = v
        return v

    def action_values(self, state: GameState) -> dict[int, float]:
        eng = self.engine
        out = {}
        for a in eng.legal_indices(state):
            after, reward = eng.apply_index(state, a)
            out[a] = reward + sum(
                p * self.value(eng.apply_chance(after, o)) for o, p in enumerate(self._probs)
            )
        return out

    def solve(self, state: GameState) -> OracleEntry:
        key = self.engine.hash_state(state)
        if state.terminal:
            return OracleEntry(key, 0.0, None, {})
        qs = self.action_values(state)
        best = max(qs, key=lambda a: (qs[a], -a))
        return OracleEntry(key, qs[best], best, qs)

    def export_csv(self, path, states: list[GameState]) -> None:
        """One row per given state: state_hash, value, best_slot, best_row, best_col."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state_hash", "value", "best_slot", "best_row", "best_col"])
            for s in states:
                e = self.solve(s)
                if e.best_action is None:
                    w.writerow([f"{e.key:016x}", repr(e.value), "", "", ""])
                else:
                    a = self.engine.action_of(e.best_action)
                    w.writerow([f"{e.key:016x}", repr(e.value), a.slot, a.row, a.col])


def expectimax(state: GameState, engine: Engine, memo: Expectimax | None = None) -> OracleEntry:
    return (memo or Expectimax(engine)).solve(state)


def brute_force_value(engine: Engine, state: GameState) -> float:
    """Plain recursive enumeration: no memo, no hashing. Exponential; tiny inputs only."""
    if state.terminal:
        return 0.0
    best = -1.0
    for slot in range(len(state.holding)):
        for r in range(engine.rows):
            for c in range(engine.cols):
                a = Action(slot, r, c)
                if not _fits(engine, state, a):
                    continue
                after, reward = engine.apply_action(state, a)
                total = float(reward)
                for o in engine.chance_outcomes(after):
                    total += o.probability * brute_force_value(engine, engine.apply_chance(after, o))
                best = max(best, total)
    return best


def _fits(engine: Engine, state: GameState, a: Action) -> bool:
    shape = engine.catalog.shapes[state.holding[a.slot]]
    for dr, dc in shape.cells:
        r, c = a.row + dr, a.col + dc
        if r >= engine.rows or c >= engine.cols or state.board >> (r * engine.cols + c) & 1:
            return False
    return True


def play_random(engine: Engine, seed: int) -> tuple[int, int]:
    """One episode of uniformly random legal placements; returns (score, length)."""
    rng = np.random.default_rng(seed)
    state, chance_rng = engine.start(rng)
    moves = 0
    while not state.terminal:
        legal = engine.legal_indices(state)
        state, _, _ = engine.step(state, legal[int(rng.integers(len(legal)))], chance_rng)
        moves += 1
    return state.score, moves


def random_baseline(engine: Engine, episodes: int, seed: int) -> tuple[float, float]:
    """Mean and (population) std of final scores under uniformly random play."""
    if episodes < 1:
        raise ValueError("episodes must be ≥ 1")
    seeds = np.random.SeedSequence(seed).generate_state(episodes, dtype=np.uint64)
    scores = np.array([play_random(engine, int(s))[0] for s in seeds], dtype=np.float64)
    return float(scores.mean()), float(scores.std())
