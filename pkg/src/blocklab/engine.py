"""Exact game dynamics on an integer bitboard.

Cell ``(r, c)`` is bit ``r * cols + c``. Every placement of every shape is
precomputed as a mask, together with the lines (rows/columns) it touches, so
legality is one AND and clearing only inspects the touched lines.

A move is split the way stochastic planners want it:

    GameState --apply_action--> Afterstate --apply_chance(outcome)--> GameState

The afterstate is the board after placement and clearing with the queues
shifted; exactly one fresh block is owed to it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .rules import Catalog, RuleSet, build_catalog, validate_ruleset

MASK64 = (1 << 64) - 1


class IllegalActionError(ValueError):
    """Raised when a placement overlaps, leaves the board, or names a bad slot."""


class Action(NamedTuple):
    slot: int
    row: int
    col: int


class GameState(NamedTuple):
    board: int
    holding: tuple[int, ...]
    preview: tuple[int, ...]
    score: int
    terminal: bool


class Afterstate(NamedTuple):
    board: int
    holding: tuple[int, ...]
    preview: tuple[int, ...]
    score: int
    pending_draws: int = 1


class ChanceOutcome(NamedTuple):
    shape_id: int
    probability: float


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _zobrist_key(kind: int, a: int, b: int = 0) -> int:
    return splitmix64(splitmix64(splitmix64(kind) ^ a) ^ b)


class Engine:
    """Pure transition functions for one (rules, catalog) pair.

    Instances hold only precomputed tables and are safe to share between
    threads; states are immutable tuples.
    """

    def __init__(self, rules: RuleSet, catalog: Catalog | None = None):
        if catalog is None:
            catalog = build_catalog(rules.extra_blocks, rules.draw)
        self.rules = validate_ruleset(rules, catalog)
        self.catalog = catalog
        R, C = rules.board_rows, rules.board_cols
        self.rows, self.cols = R, C
        self.area = R * C
        self.full = (1 << self.area) - 1
        self.h, self.p = rules.h, rules.p
        self.cap = rules.reward_cap
        self.n_shapes = len(catalog)
        self.n_actions = self.h * self.area
        self.feature_size = self.area + (self.h + self.p) * self.n_shapes

        row_masks = [((1 << C) - 1) << (r * C) for r in range(R)]
        col_masks = [sum(1 << (r * C + c) for r in range(R)) for c in range(C)]
        self.row_masks, self.col_masks = row_masks, col_masks
        lines: list[int] = []
        if rules.clear_axes in ("both", "rows"):
            lines += row_masks
        if rules.clear_axes in ("both", "cols"):
            lines += col_masks
        self.line_masks = tuple(lines)

        # placements[s] = [(cell, mask, touched_lines)], in row-major anchor order
        self.placements: list[list[tuple[int, int, tuple[int, ...]]]] = []
        self.placement_at: list[list[tuple[int, tuple[int, ...]] | None]] = []
        for shape in catalog.shapes:
            plist = []
            at: list[tuple[int, tuple[int, ...]] | None] = [None] * self.area
            for r in range(R - shape.height + 1):
                for c in range(C - shape.width + 1):
                    mask = 0
                    for dr, dc in shape.cells:
                        mask |= 1 << ((r + dr) * C + c + dc)
                    touched = tuple(lm for lm in self.line_masks if lm & mask)
                    plist.append((r * C + c, mask, touched))
                    at[r * C + c] = (mask, touched)
            self.placements.append(plist)
            self.placement_at.append(at)

        self.weights = np.asarray(catalog.draw_weights, dtype=np.float64)
        self.cum_weights = np.cumsum(self.weights)
        self.cum_weights[-1] = 1.0
        self.uniform_draw = len(set(catalog.draw_weights)) == 1
        self._nbytes = (self.area + 7) // 8

        # zobrist tables: one per board byte, plus slot/score keys
        self._z_board = [
            [self._byte_key(i, v) for v in range(256)] for i in range(self._nbytes)
        ]
        self._z_hold = [[_zobrist_key(2, i, s) for s in range(self.n_shapes)] for i in range(self.h)]
        self._z_prev = [[_zobrist_key(3, i, s) for s in range(self.n_shapes)] for i in range(self.p)]

    # ------------------------------------------------------------------ setup

    def new_game(self, seed: int) -> GameState:
        """Empty board with h + p independent seeded draws."""
        return self.start(seed)[0]

    def start(self, seed: int | np.random.Generator) -> tuple[GameState, np.random.Generator]:
        """Like new_game, but also returns the chance generator the episode keeps drawing from."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        draws = [self.draw(rng) for _ in range(self.h + self.p)]
        state = GameState(0, tuple(draws[: self.h]), tuple(draws[self.h:]), 0, False)
        return state, rng

    def initial_state(self, holding: Sequence[int], preview: Sequence[int] = (), board: int = 0,
                      score: int = 0) -> GameState:
        """Build a state from explicit contents (tests, replays)."""
        holding, preview = tuple(holding), tuple(preview)
        if len(holding) != self.h or len(preview) != self.p:
            raise ValueError(f"expected {self.h} holding and {self.p} preview blocks")
        for s in holding + preview:
            if not 0 <= s < self.n_shapes:
                raise ValueError(f"shape id {s} not in catalog")
        if board & ~self.full:
            raise ValueError("board has bits outside the grid")
        state = GameState(board, holding, preview, min(score, self.cap), False)
        return state._replace(terminal=self.is_terminal(state))

    def draw(self, rng: np.random.Generator) -> int:
        if self.uniform_draw:
            return int(rng.integers(self.n_shapes))
        return int(np.searchsorted(self.cum_weights, rng.random(), side="right"))

    # ---------------------------------------------------------------- actions

    def action_index(self, a: Action) -> int:
        return a.slot * self.area + a.row * self.cols + a.col

    def action_of(self, index: int) -> Action:
        slot, cell = divmod(index, self.area)
        return Action(slot, *divmod(cell, self.cols))

    def legal_indices(self, state: GameState) -> list[int]:
        board, area = state.board, self.area
        out = []
        for slot, shape in enumerate(state.holding):
            base = slot * area
            out.extend(base + cell for cell, mask, _ in self.placements[shape] if not board & mask)
        return out

    def legal_actions(self, state: GameState) -> list[Action]:
        if state.terminal:
            return []
        return [self.action_of(i) for i in self.legal_indices(state)]

    def has_legal_action(self, board: int, holding: Iterable[int]) -> bool:
        for shape in set(holding):
            for _, mask, _ in self.placements[shape]:
                if not board & mask:
                    return True
        return False

    def is_terminal(self, state: GameState) -> bool:
        return state.score >= self.cap or not self.has_legal_action(state.board, state.holding)

    # ------------------------------------------------------------ transitions

    def apply_index(self, state: GameState, index: int) -> tuple[Afterstate, int]:
        slot, cell = divmod(index, self.area)
        if not 0 <= slot < len(state.holding):
            raise IllegalActionError(f"slot {slot} out of range for {len(state.holding)} holding blocks")
        placed = self.placement_at[state.holding[slot]][cell]
        if placed is None:
            raise IllegalActionError(f"action {self.action_of(index)} leaves the board")
        mask, touched = placed
        board = state.board
        if board & mask:
            raise IllegalActionError(f"action {self.action_of(index)} overlaps occupied cells")
        board |= mask
        cleared = 0
        lines = 0
        for lm in touched:
            if board & lm == lm:
                cleared |= lm
                lines += 1
        board &= ~cleared
        reward = min(lines, self.cap - state.score)
        holding = state.holding[:slot] + state.holding[slot + 1:]
        preview = state.preview
        if preview:
            holding += preview[:1]
            preview = preview[1:]
        return Afterstate(board, holding, preview, state.score + reward), reward

    def apply_action(self, state: GameState, a: Action) -> tuple[Afterstate, int]:
        if state.terminal:
            raise IllegalActionError("state is terminal")
        if not (0 <= a.row < self.rows and 0 <= a.col < self.cols):
            raise IllegalActionError(f"anchor {a} outside the board")
        return self.apply_index(state, self.action_index(a))

    def chance_outcomes(self, after: Afterstate) -> list[ChanceOutcome]:
        if after.pending_draws != 1:
            raise ValueError("afterstate has no pending draw")
        return [ChanceOutcome(i, w) for i, w in enumerate(self.catalog.draw_weights)]

    def apply_chance(self, after: Afterstate, shape_id: int | ChanceOutcome) -> GameState:
        if isinstance(shape_id, ChanceOutcome):
            shape_id = shape_id.shape_id
        if not 0 <= shape_id < self.n_shapes:
            raise ValueError(f"shape id {shape_id} not in catalog")
        if self.p:
            holding, preview = after.holding, after.preview + (shape_id,)
        else:
            holding, preview = after.holding + (shape_id,), after.preview
        terminal = after.score >= self.cap or not self.has_legal_action(after.board, holding)
        return GameState(after.board, holding, preview, after.score, terminal)

    def step(self, state: GameState, index: int, rng: np.random.Generator) -> tuple[GameState, int, int]:
        """Play one full move; returns (next state, reward, drawn shape id)."""
        after, reward = self.apply_index(state, index)
        drawn = self.draw(rng)
        return self.apply_chance(after, drawn), reward, drawn

    # --------------------------------------------------------------- encoding

    def board_bits(self, board: int) -> np.ndarray:
        raw = np.frombuffer(board.to_bytes(self._nbytes, "little"), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[: self.area]

    def encode_features(self, state: GameState | Afterstate, out: np.ndarray | None = None) -> np.ndarray:
        """Board occupancy, then a one-hot catalog vector per holding and preview slot."""
        x = np.zeros(self.feature_size) if out is None else out
        if out is not None:
            x[:] = 0.0
        x[: self.area] = self.board_bits(state.board)
        base, k = self.area, self.n_shapes
        for i, s in enumerate(state.holding):
            x[base + i * k + s] = 1.0
        base += self.h * k
        for i, s in enumerate(state.preview):
            x[base + i * k + s] = 1.0
        return x

    def legal_mask(self, state: GameState) -> np.ndarray:
        mask = np.zeros(self.n_actions, dtype=bool)
        mask[self.legal_indices(state)] = True
        return mask

    # ---------------------------------------------------------------- hashing

    @staticmethod
    def _byte_key(i: int, v: int) -> int:
        key = 0
        for bit in range(8):
            if v >> bit & 1:
                key ^= _zobrist_key(1, i * 8 + bit)
        return key

    def hash_state(self, state: GameState) -> int:
        """64-bit Zobrist key over board cells, slot contents (ordered) and score.

        Keys come from splitmix64, so for the few million states an oracle
        visits the chance of any collision is below 1e-6.
        """
        key = _zobrist_key(4, state.score)
        board = state.board
        zb = self._z_board
        for i in range(self._nbytes):
            key ^= zb[i][board & 0xFF]
            board >>= 8
        for i, s in enumerate(state.holding):
            key ^= self._z_hold[i][s]
        for i, s in enumerate(state.preview):
            key ^= self._z_prev[i][s]
        return key

    # ---------------------------------------------------------------- display

    def render(self, board: int) -> str:
        return "\n".join(
            "".join("#" if board >> (r * self.cols + c) & 1 else "." for c in range(self.cols))
            for r in range(self.rows)
        )

    @staticmethod
    def popcount(board: int) -> int:
        return bin(board).count("1")


# ------------------------------------------------------------ episode records


@dataclass(frozen=True)
class EpisodeMove:
    slot: int
    row: int
    col: int
    drawn_shape_id: int
    reward: int


@dataclass(frozen=True)
class Episode:
    rules: RuleSet
    seed: int
    catalog_digest: str
    holding: tuple[int, ...]
    preview: tuple[int, ...]
    moves: tuple[EpisodeMove, ...]

    @property
    def score(self) -> int:
        return sum(m.reward for m in self.moves)

    def dumps(self) -> str:
        lines = [
            "# blocklab episode v1",
            "rules " + json.dumps(self.rules.as_dict(), sort_keys=True),
            f"seed {self.seed}",
            f"catalog {self.catalog_digest}",
            "holding " + ",".join(map(str, self.holding)),
            "preview " + ",".join(map(str, self.preview)),
            "slot,row,col,drawn_shape_id,reward",
        ]
        lines += [f"{m.slot},{m.row},{m.col},{m.drawn_shape_id},{m.reward}" for m in self.moves]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Episode":
        lines = text.splitlines()
        if not lines or lines[0] != "# blocklab episode v1":
            raise ValueError("not a blocklab episode file")
        header: dict[str, str] = {}
        i = 1
        while i < len(lines) and lines[i] != "slot,row,col,drawn_shape_id,reward":
            key, _, value = lines[i].partition(" ")
            header[key] = value
            i += 1
        if i == len(lines):
            raise ValueError("episode file has no move table")

        def ids(s: str) -> tuple[int, ...]:
            return tuple(int(t) for t in s.split(",")) if s else ()

        moves = []
        for ln in lines[i + 1:]:
            f = ln.split(",")
            if len(f) != 5:
                raise ValueError(f"bad move line {ln!r}")
            moves.append(EpisodeMove(*map(int, f)))
        return cls(
            RuleSet.from_dict(json.loads(header["rules"])),
            int(header["seed"]),
            header["catalog"],
            ids(header.get("holding", "")),
            ids(header.get("preview", "")),
            tuple(moves),
        )

    def replay(self, engine: Engine) -> list[GameState]:
        """Re-simulate the recorded moves and check every recorded reward."""
        if engine.catalog.digest() != self.catalog_digest:
            raise ValueError("catalog does not match the episode header")
        state = engine.initial_state(self.holding, self.preview)
        states = [state]
        for m in self.moves:
            after, reward = engine.apply_action(state, Action(m.slot, m.row, m.col))
            if reward != m.reward:
                raise ValueError(f"recorded reward {m.reward} but engine gives {reward}")
            state = engine.apply_chance(after, m.drawn_shape_id)
            states.append(state)
        return states
