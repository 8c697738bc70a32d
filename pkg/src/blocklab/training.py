"""Self-play, replay buffer and the optimization loop.

Seed derivation (``rng_scheme = "seedseq-v1"``): every random stream is a
``numpy.random.SeedSequence(master_seed, spawn_key=...)`` with

    (0, iteration, game)   self-play game; child 0 draws blocks, child 1 drives search
    (1, iteration)         replay sampling for the optimizer
    (2,)                   network initialization
    (3, episode)           evaluation episodes (shared across variants, so runs pair up)

so results do not depend on how games are spread over workers.
"""

from __future__ import annotations

import csv
import io
import logging
import struct
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import Engine, Episode, EpisodeMove
from .evaluator import MLP, Arch, TrainBatch, UniformEvaluator, default_hidden, init_evaluator
from .planner import SearchConfig, search

log = logging.getLogger(__name__)


def seed_sequence(master_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=key)


def game_rngs(master_seed: int, iteration: int, game: int) -> tuple[np.random.Generator, np.random.Generator]:
    chance, planning = seed_sequence(master_seed, 0, iteration, game).spawn(2)
    return np.random.default_rng(chance), np.random.default_rng(planning)


@dataclass
class GameRecord:
    variant_id: str
    seed: int
    holding: tuple[int, ...]
    preview: tuple[int, ...]
    actions: np.ndarray  # action indices, int32
    drawn: np.ndarray  # shape id drawn after each move, int32
    rewards: np.ndarray  # int32
    features: np.ndarray  # (T, F) float32
    policy_targets: np.ndarray  # (T, A) float32
    masks: np.ndarray  # (T, A) bool

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def final_score(self) -> int:
        return int(self.rewards.sum())

    def to_bytes(self) -> bytes:
        head = f"{self.variant_id}|{self.seed}|{self.holding}|{self.preview}".encode()
        parts = [struct.pack("<I", len(head)), head]
        for arr in (self.actions, self.drawn, self.rewards, self.features, self.policy_targets, self.masks):
            parts.append(struct.pack("<2I", *(arr.shape + (1,))[:2]))
            parts.append(np.ascontiguousarray(arr).tobytes())
        return b"".join(parts)

    def to_episode(self, engine: Engine) -> Episode:
        moves = []
        for a, d, r in zip(self.actions, self.drawn, self.rewards):
            act = engine.action_of(int(a))
            moves.append(EpisodeMove(act.slot, act.row, act.col, int(d), int(r)))
        return Episode(engine.rules, self.seed, engine.catalog.digest(), self.holding,
                       self.preview, tuple(moves))


def self_play_game(evaluator, engine: Engine, cfg: SearchConfig, master_seed: int,
                   iteration: int = 0, game: int = 0) -> GameRecord:
    """Play one episode to the end, always taking the search's chosen action."""
    chance_rng, search_rng = game_rngs(master_seed, iteration, game)
    state, chance_rng = engine.start(chance_rng)
    start = state
    acts, drawn, rewards, feats, pols, masks = [], [], [], [], [], []
    while not state.terminal:
        res = search(state, evaluator, engine, cfg, search_rng)
        feats.append(engine.encode_features(state).astype(np.float32))
        pols.append(res.policy_target.astype(np.float32))
        mask = np.zeros(engine.n_actions, dtype=bool)
        mask[res.legal] = True
        masks.append(mask)
        state, reward, shape = engine.step(state, res.chosen_index, chance_rng)
        acts.append(res.chosen_index)
        drawn.append(shape)
        rewards.append(reward)
    A, F = engine.n_actions, engine.feature_size
    return GameRecord(
        variant_id=engine.rules.variant_id,
        seed=master_seed,
        holding=start.holding,
        preview=start.preview,
        actions=np.asarray(acts, dtype=np.int32),
        drawn=np.asarray(drawn, dtype=np.int32),
        rewards=np.asarray(rewards, dtype=np.int32),
        features=np.asarray(feats, dtype=np.float32).reshape(-1, F),
        policy_targets=np.asarray(pols, dtype=np.float32).reshape(-1, A),
        masks=np.asarray(masks, dtype=bool).reshape(-1, A),
    )


def value_targets(rewards: Sequence[int], reward_cap: int) -> np.ndarray:
    """Remaining return from each move (suffix sums) over the cap, clipped to [0, 1]."""
    r = np.asarray(rewards, dtype=np.float64)
    suffix = np.cumsum(r[::-1])[::-1]
    return np.clip(suffix / reward_cap, 0.0, 1.0)


def make_targets(rec: GameRecord, reward_cap: int) -> TrainBatch:
    return TrainBatch(
        rec.features.astype(np.float64),
        rec.masks,
        rec.policy_targets.astype(np.float64),
        value_targets(rec.rewards, reward_cap),
    )


class ReplayBuffer:
    """Bounded FIFO of finished games; positions are sampled uniformly."""

    def __init__(self, capacity: int = 500):
        if capacity < 1:
            raise ValueError("capacity must be ≥ 1")
        self.capacity = capacity
        self.games: deque[tuple[GameRecord, np.ndarray]] = deque()
        self.total_added = 0

    def __len__(self) -> int:
        return len(self.games)

    @property
    def n_positions(self) -> int:
        return sum(rec.length for rec, _ in self.games)

    def add(self, rec: GameRecord, reward_cap: int) -> None:
        self.games.append((rec, value_targets(rec.rewards, reward_cap)))
        self.total_added += 1
        while len(self.games) > self.capacity:
            self.games.popleft()

    def sample_positions(self, size: int, rng: np.random.Generator) -> list[tuple[int, int]]:
        lengths = np.array([rec.length for rec, _ in self.games])
        total = int(lengths.sum())
        if total == 0:
            raise ValueError("replay buffer holds no positions")
        ends = np.cumsum(lengths)
        flat = rng.integers(total, size=size)
        gi = np.searchsorted(ends, flat, side="right")
        offs = flat - (ends[gi] - lengths[gi])
        return list(zip(gi.tolist(), offs.tolist()))

    def sample(self, size: int, rng: np.random.Generator) -> TrainBatch:
        picks = self.sample_positions(size, rng)
        games = self.games
        return TrainBatch(
            np.stack([games[g][0].features[t] for g, t in picks]).astype(np.float64),
            np.stack([games[g][0].masks[t] for g, t in picks]),
            np.stack([games[g][0].policy_targets[t] for g, t in picks]).astype(np.float64),
            np.array([games[g][1][t] for g, t in picks]),
        )


@dataclass
class TrainConfig:
    iterations: int = 30
    games_per_iteration: int = 40
    train_steps: int = 100
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    value_weight: float = 1.0
    buffer_capacity: int = 500
    checkpoint_every: int = 0  # 0 = only the final checkpoint
    hidden: tuple[int, ...] | None = None
    seed: int = 0
    threads: int = 1
    deterministic: bool = False
    search: SearchConfig = field(default_factory=SearchConfig)

    def arch(self, engine: Engine) -> Arch:
        hidden = default_hidden(engine.feature_size) if self.hidden is None else tuple(self.hidden)
        return Arch(engine.feature_size, hidden, engine.n_actions)


@dataclass
class IterationStats:
    iteration: int
    games: int
    mean_reward: float | None
    std_reward: float | None
    mean_length: float | None
    policy_loss: float | None
    value_loss: float | None
    seconds: float


STATS_COLUMNS = [f.name for f in fields(IterationStats)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_stats_csv(path, stats: Iterable[IterationStats]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(stats_csv_text(stats))


def stats_csv_text(stats: Iterable[IterationStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_COLUMNS)
    for s in stats:
        w.writerow([_fmt(getattr(s, c)) for c in STATS_COLUMNS])
    return buf.getvalue()


def read_stats_csv(path) -> list[IterationStats]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != STATS_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(STATS_COLUMNS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(STATS_COLUMNS):
            raise ValueError(f"{path}:{lineno}: expected {len(STATS_COLUMNS)} columns, got {len(row)}")
        vals = {}
        for col, cell in zip(STATS_COLUMNS, row):
            try:
                if col in ("iteration", "games"):
                    vals[col] = int(cell)
                elif col == "seconds":
                    vals[col] = float(cell)
                else:
                    vals[col] = float(cell) if cell != "" else None
            except ValueError:
                raise ValueError(f"{path}:{lineno}: column {col!r} has bad value {cell!r}") from None
        out.append(IterationStats(**vals))
    return out


def _play_chunk(args) -> list[GameRecord]:
    evaluator, rules, catalog, cfg, seed, iteration, games = args
    engine = Engine(rules, catalog)
    return [self_play_game(evaluator, engine, cfg, seed, iteration, g) for g in games]


def play_games(evaluator, engine: Engine, cfg: TrainConfig, iteration: int,
               pool: ProcessPoolExecutor | None = None) -> list[GameRecord]:
    G = cfg.games_per_iteration
    if pool is None or cfg.deterministic or cfg.threads <= 1 or G <= 1:
        return [self_play_game(evaluator, engine, cfg.search, cfg.seed, iteration, g) for g in range(G)]
    chunks = [list(range(i, G, cfg.threads)) for i in range(cfg.threads)]
    jobs = [(evaluator, engine.rules, engine.catalog, cfg.search, cfg.seed, iteration, c) for c in chunks if c]
    by_game: dict[int, GameRecord] = {}
    for chunk, recs in zip([c for c in chunks if c], pool.map(_play_chunk, jobs)):
        by_game.update(zip(chunk, recs))
    return [by_game[g] for g in range(G)]


def run_iteration(cfg: TrainConfig, model: MLP, buffer: ReplayBuffer, engine: Engine,
                  iteration: int, pool: ProcessPoolExecutor | None = None) -> tuple[MLP, IterationStats]:
    """Self-play G games with a frozen snapshot, then S optimizer steps on the buffer."""
    t0 = time.perf_counter()
    if cfg.train_steps > 0 and cfg.games_per_iteration == 0 and buffer.n_positions == 0:
        raise ValueError("optimization requested on an empty replay buffer")
    snapshot = model.snapshot()
    records = play_games(snapshot, engine, cfg, iteration, pool)
    for rec in records:
        buffer.add(rec, engine.cap)

    scores = np.array([r.final_score for r in records], dtype=np.float64)
    lengths = np.array([r.length for r in records], dtype=np.float64)
    policy_losses, value_losses = [], []
    if cfg.train_steps > 0:
        rng = np.random.default_rng(seed_sequence(cfg.seed, 1, iteration))
        model = model.copy()
        for _ in range(cfg.train_steps):
            out = model.train_batch(buffer.sample(cfg.batch_size, rng), cfg.lr)
            policy_losses.append(out["policy_loss"])
            value_losses.append(out["value_loss"])

    stats = IterationStats(
        iteration=iteration,
        games=len(records),
        mean_reward=float(scores.mean()) if len(records) else None,
        std_reward=float(scores.std()) if len(records) else None,
        mean_length=float(lengths.mean()) if len(records) else None,
        policy_loss=float(np.mean(policy_losses)) if policy_losses else None,
        value_loss=float(np.mean(value_losses)) if value_losses else None,
        seconds=0.0 if cfg.deterministic else round(time.perf_counter() - t0, 3),
    )
    return model, stats


@dataclass
class TrainResult:
    model: MLP
    stats: list[IterationStats]
    stats_path: Path | None = None
    checkpoint_path: Path | None = None


def train(engine: Engine, cfg: TrainConfig, out_dir: str | Path | None = None,
          on_iteration=None) -> TrainResult:
    """Full run: init the network, iterate, write ``iteration_stats.csv`` and checkpoints."""
    model = init_evaluator(cfg.arch(engine), int(seed_sequence(cfg.seed, 2).generate_state(1)[0]),
                           cfg.momentum, cfg.value_weight)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    stats: list[IterationStats] = []
    pool = None
    if cfg.threads > 1 and not cfg.deterministic:
        pool = ProcessPoolExecutor(cfg.threads)
    try:
        for it in range(1, cfg.iterations + 1):
            model, st = run_iteration(cfg, model, buffer, engine, it, pool)
            stats.append(st)
            log.info("iter %d games=%d mean=%s len=%s pl=%s vl=%s %.1fs", it, st.games,
                     st.mean_reward, st.mean_length, st.policy_loss, st.value_loss, st.seconds)
            if out is not None:
                write_stats_csv(out / "iteration_stats.csv", stats)
                if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                    model.save(out / f"checkpoint_{it:04d}.sgbz")
            if on_iteration is not None:
                on_iteration(st)
    finally:
        if pool is not None:
            pool.shutdown()
    result = TrainResult(model, stats)
    if out is not None:
        result.stats_path = out / "iteration_stats.csv"
        result.checkpoint_path = out / "final.sgbz"
        model.save(result.checkpoint_path)
    return result


def evaluate_policy(evaluator, engine: Engine, cfg: SearchConfig, episodes: int,
                    seed: int) -> np.ndarray:
    """Final scores of ``episodes`` search-driven games; episode i uses stream (3, i)."""
    scores = np.zeros(episodes)
    for i in range(episodes):
        chance, planning = seed_sequence(seed, 3, i).spawn(2)
        chance_rng, search_rng = np.random.default_rng(chance), np.random.default_rng(planning)
        state, chance_rng = engine.start(chance_rng)
        while not state.terminal:
            res = search(state, evaluator, engine, cfg, search_rng)
            state, _, _ = engine.step(state, res.chosen_index, chance_rng)
        scores[i] = state.score
    return scores


def uniform_evaluator(engine: Engine) -> UniformEvaluator:
    return UniformEvaluator(engine.n_actions)

