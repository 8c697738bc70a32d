"""Slow reference game simulator on a list-of-lists grid.

Written independently of the bitboard engine: it only borrows the shape
cell lists from the catalog and re-derives legality, clearing, scoring and
the queue shift cell by cell.
"""

from __future__ import annotations

import numpy as np


class NaiveGame:
    def __init__(self, rules, catalog):
        self.R, self.C = rules.board_rows, rules.board_cols
        self.h, self.p = rules.h, rules.p
        self.cap = rules.reward_cap
        self.axes = rules.clear_axes
        self.shapes = [s.cells for s in catalog.shapes]

    def grid(self, board_bits: int) -> list[list[int]]:
        return [[(board_bits >> (r * self.C + c)) & 1 for c in range(self.C)] for r in range(self.R)]

    def bits(self, grid) -> int:
        out = 0
        for r in range(self.R):
            for c in range(self.C):
                if grid[r][c]:
                    out |= 1 << (r * self.C + c)
        return out

    def fits(self, grid, shape_id, r, c) -> bool:
        for dr, dc in self.shapes[shape_id]:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < self.R and 0 <= cc < self.C) or grid[rr][cc]:
                return False
        return True

    def legal(self, grid, holding) -> list[tuple[int, int, int]]:
        return [(slot, r, c) for slot, s in enumerate(holding)
                for r in range(self.R) for c in range(self.C) if self.fits(grid, s, r, c)]

    def place(self, grid, holding, preview, score, slot, r, c):
        """Returns (grid, holding, preview, score, reward, cells_cleared)."""
        g = [row[:] for row in grid]
        for dr, dc in self.shapes[holding[slot]]:
            g[r + dr][c + dc] = 1
        full_rows = [i for i in range(self.R) if all(g[i])] if self.axes in ("both", "rows") else []
        full_cols = [j for j in range(self.C) if all(g[i][j] for i in range(self.R))] \
            if self.axes in ("both", "cols") else []
        cleared = 0
        for i in range(self.R):
            for j in range(self.C):
                if (i in full_rows or j in full_cols) and g[i][j]:
                    g[i][j] = 0
                    cleared += 1
        lines = len(full_rows) + len(full_cols)
        reward = min(lines, self.cap - score)
        hold = list(holding)
        del hold[slot]
        prev = list(preview)
        if prev:
            hold.append(prev.pop(0))
        return g, hold, prev, score + reward, reward, cleared

    def draw_into(self, holding, preview, shape_id):
        if self.p:
            return list(holding), list(preview) + [shape_id]
        return list(holding) + [shape_id], list(preview)

    def terminal(self, grid, holding, score) -> bool:
        return score >= self.cap or not self.legal(grid, holding)


def check_episode(engine, seed, max_moves=400):
    """Play random moves, comparing every transition with the naive simulator."""
    naive = NaiveGame(engine.rules, engine.catalog)
    rng = np.random.default_rng(seed)
    state, chance_rng = engine.start(rng)
    grid, hold, prev, score = naive.grid(0), list(state.holding), list(state.preview), 0
    moves = 0
    total_reward = 0
    while not state.terminal and moves < max_moves:
        legal = engine.legal_actions(state)
        assert [tuple(a) for a in legal] == naive.legal(grid, hold)
        a = legal[int(rng.integers(len(legal)))]
        before = engine.popcount(state.board)
        after, reward = engine.apply_action(state, a)
        grid, hold, prev, score, nreward, cleared = naive.place(grid, hold, prev, score, *a)
        assert reward == nreward
        assert after.board == naive.bits(grid)
        size = engine.catalog.shapes[state.holding[a.slot]].size
        assert engine.popcount(after.board) == before + size - cleared
        assert after.holding == tuple(hold) and after.preview == tuple(prev)
        for line in engine.line_masks:  # no full line survives on a clearing axis
            assert after.board & line != line
        drawn = engine.draw(chance_rng)
        state = engine.apply_chance(after, drawn)
        hold, prev = naive.draw_into(hold, prev, drawn)
        assert state.holding == tuple(hold) and state.preview == tuple(prev)
        assert len(state.holding) == engine.h and len(state.preview) == engine.p
        assert state.terminal == naive.terminal(grid, hold, score)
        total_reward += reward
        moves += 1
    assert state.score == total_reward == score <= engine.cap
    return moves
