"""Stochastic Gumbel AlphaZero search over exact afterstates.

The tree alternates decision nodes (states, one edge per legal placement)
and chance nodes (afterstates, one edge per drawn block). At the root a
Gumbel-Top-m sample picks candidate placements and sequential halving splits
the simulation budget among them; below the root actions are chosen by the
deterministic visit-matching rule

    argmax_a  pi'(a) - N(a) / (1 + sum_b N(b)),
    pi' = softmax(logits + sigma(completed_q))

and chance nodes sample the true block distribution. Values are in units of
``reward_cap`` (gamma = 1), so a leaf's value is its predicted remaining
score divided by the cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .engine import Action, Afterstate, Engine, GameState


class EngineContractError(RuntimeError):
    """The engine handed the planner a state it cannot search."""


class Evaluator(Protocol):
    needs_features: bool

    def evaluate(self, features): ...


@dataclass
class SearchConfig:
    n: int = 16
    m: int | None = 4  # None searches every legal action at the root
    c_visit: float = 50.0
    c_scale: float = 1.0
    max_tree_depth: int | None = None  # default 10 * board area
    zero_gumbel: bool = False  # test hook: noise-free root ranking
    trace: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be ≥ 1")
        if self.m is not None and not 1 <= self.m <= self.n:
            raise ValueError("need n ≥ m ≥ 1")
        if self.c_visit <= 0 or self.c_scale <= 0:
            raise ValueError("c_visit and c_scale must be positive")


class MinMax:
    """Running range of every value seen in one tree."""

    __slots__ = ("lo", "hi")

    def __init__(self):
        self.lo = math.inf
        self.hi = -math.inf

    def update(self, v: float) -> None:
        if v < self.lo:
            self.lo = v
        if v > self.hi:
            self.hi = v

    def normalize(self, q):
        if self.hi > self.lo:
            return np.clip((q - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return np.clip(q, 0.0, 1.0)


class ChanceNode:
    __slots__ = ("after", "reward", "reward_norm", "children", "n", "value_sum")

    def __init__(self, after: Afterstate, reward: int, cap: int):
        self.after = after
        self.reward = reward
        self.reward_norm = reward / cap
        self.children: dict[int, DecisionNode] = {}
        self.n = 0
        self.value_sum = 0.0


class DecisionNode:
    __slots__ = ("state", "actions", "logits", "value", "children", "child_n", "child_w",
                 "n", "value_sum", "depth")

    def __init__(self, state: GameState, depth: int):
        self.state = state
        self.depth = depth
        self.actions = _EMPTY_INT
        self.logits = _EMPTY_FLOAT
        self.value = 0.0
        self.children: list[ChanceNode | None] = []
        self.child_n = _EMPTY_FLOAT
        self.child_w = _EMPTY_FLOAT
        self.n = 0
        self.value_sum = 0.0

    @property
    def terminal(self) -> bool:
        return self.state.terminal

    def q(self) -> np.ndarray:
        """Mean backed-up value per action; NaN where unvisited."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.child_n > 0, self.child_w / np.maximum(self.child_n, 1), np.nan)


_EMPTY_INT = np.zeros(0, dtype=np.int64)
_EMPTY_FLOAT = np.zeros(0)


@dataclass
class SearchResult:
    chosen_action: Action
    chosen_index: int
    policy_target: np.ndarray  # over all h*R*C actions, zero where illegal
    root_value: float
    legal: np.ndarray
    visits: np.ndarray
    q: np.ndarray  # raw mean values per legal action, NaN if unvisited
    completed_q: np.ndarray  # normalized to [0, 1]
    gumbel: np.ndarray
    logits: np.ndarray
    schedule: list[tuple[int, int]]
    leaf_evaluations: int
    evaluator_calls: int
    trace: list[str] = field(default_factory=list)
    tree: "SearchTree | None" = field(default=None, repr=False)


# ------------------------------------------------------------ root machinery


def gumbel_top_m(masked_logits: np.ndarray, m: int, rng: np.random.Generator | None,
                 ) -> tuple[list[int], np.ndarray]:
    """Sample ``min(m, #legal)`` distinct actions by Gumbel-perturbed logits.

    Entries equal to ``-inf`` are illegal. Returns the chosen indices in
    descending order of ``g + logit`` together with the full Gumbel vector
    (``-inf`` at illegal entries). ``rng=None`` uses zero noise.
    """
    masked_logits = np.asarray(masked_logits, dtype=np.float64)
    legal = np.flatnonzero(np.isfinite(masked_logits))
    if legal.size == 0:
        raise ValueError("every action is masked")
    g = np.full(masked_logits.shape, -np.inf)
    g[legal] = 0.0 if rng is None else rng.gumbel(size=legal.size)
    k = min(m, legal.size)
    score = g[legal] + masked_logits[legal]
    # stable sort on -score: ties go to the lowest index
    order = np.argsort(-score, kind="stable")[:k]
    return legal[order].tolist(), g


def sequential_halving_schedule(n: int, m: int) -> list[tuple[int, int]]:
    """Phases ``(surviving_count, visits_per_candidate)``.

    ``ceil(log2 m)`` phases, each giving ``floor(n / (phases * count))``
    visits (at least 1) to every survivor, survivors halving (rounded up)
    between phases. Leftover budget tops up the final phase. When the
    minimum of one visit would overspend ``n``, the phases that no longer
    fit are dropped and the final choice is made among the survivors of the
    last phase that ran.
    """
    if not n >= m >= 1:
        raise ValueError(f"need n >= m >= 1, got n={n}, m={m}")
    if m == 1:
        return [(1, n)]
    n_phases = math.ceil(math.log2(m))
    phases: list[list[int]] = []
    count, total = m, 0
    for _ in range(n_phases):
        visits = max(1, n // (n_phases * count))
        if total + count * visits > n:
            break
        phases.append([count, visits])
        total += count * visits
        count = (count + 1) // 2
    last = phases[-1]
    last[1] += (n - total) // last[0]
    return [tuple(p) for p in phases]


def sigma_transform(q_norm, max_child_visits: float, cfg: SearchConfig):
    """(c_visit + max N) * c_scale * q, the map from normalized value to logit scale."""
    return (cfg.c_visit + max_child_visits) * cfg.c_scale * q_norm


def completed_q(node: DecisionNode, value_estimate: float, minmax: MinMax) -> np.ndarray:
    """Backed-up Q for visited actions, ``value_estimate`` elsewhere, min-max normalized."""
    q = np.where(node.child_n > 0, node.child_w / np.maximum(node.child_n, 1), value_estimate)
    return minmax.normalize(q)


def improved_policy(node: DecisionNode, minmax: MinMax, cfg: SearchConfig) -> np.ndarray:
    cq = completed_q(node, node.value, minmax)
    z = node.logits + sigma_transform(cq, node.child_n.max(initial=0.0), cfg)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def select_child_nonroot(node: DecisionNode, minmax: MinMax, cfg: SearchConfig) -> int:
    """Position (into ``node.actions``) maximizing pi'(a) - N(a) / (1 + sum N)."""
    pi = improved_policy(node, minmax, cfg)
    score = pi - node.child_n / (1.0 + node.child_n.sum())
    return int(np.argmax(score))


# ----------------------------------------------------------------- the tree


class SearchTree:
    def __init__(self, engine: Engine, evaluator: Evaluator, cfg: SearchConfig,
                 rng: np.random.Generator, record_backups: bool = False):
        self.engine = engine
        self.evaluator = evaluator
        self.cfg = cfg
        self.rng = rng
        self.minmax = MinMax()
        self.root: DecisionNode | None = None
        self.max_depth = cfg.max_tree_depth or 10 * engine.area
        self.leaf_evaluations = 0
        self.evaluator_calls = 0
        self.backups: list[tuple[int, float]] | None = [] if record_backups else None
        self._k = engine.n_shapes
        self._uniform = engine.uniform_draw

    def expand(self, state: GameState, depth: int) -> DecisionNode:
        node = DecisionNode(state, depth)
        node.n = 1
        if state.terminal:
            return node
        legal = self.engine.legal_indices(state)
        if not legal:
            raise EngineContractError("non-terminal state has no legal action")
        ev = self.evaluator
        feats = self.engine.encode_features(state) if ev.needs_features else None
        logits, value = ev.evaluate(feats)
        self.evaluator_calls += 1
        node.actions = np.asarray(legal, dtype=np.int64)
        node.logits = np.asarray(logits, dtype=np.float64)[node.actions]
        # remaining return can never exceed the headroom left under the cap
        node.value = min(float(value), (self.engine.cap - state.score) / self.engine.cap)
        node.value_sum = node.value
        node.children = [None] * len(legal)
        node.child_n = np.zeros(len(legal))
        node.child_w = np.zeros(len(legal))
        self.minmax.update(node.value)
        return node

    def sample_outcome(self, chance: ChanceNode) -> int:
        if self._uniform:
            return int(self.rng.random() * self._k)
        return int(np.searchsorted(self.engine.cum_weights, self.rng.random(), side="right"))

    def simulate(self, root: DecisionNode, pos: int) -> None:
        """One simulation forced through root action ``pos``."""
        engine = self.engine
        path: list[tuple[DecisionNode, int, ChanceNode]] = []
        node = root
        while True:
            chance = node.children[pos]
            if chance is None:
                after, reward = engine.apply_index(node.state, int(node.actions[pos]))
                chance = node.children[pos] = ChanceNode(after, reward, engine.cap)
            path.append((node, pos, chance))
            outcome = self.sample_outcome(chance)
            child = chance.children.get(outcome)
            if child is None:
                child = self.expand(engine.apply_chance(chance.after, outcome), node.depth + 1)
                chance.children[outcome] = child
                leaf = child.value  # 0 for terminal; expansion visit already counted
                break
            if child.terminal or child.depth >= self.max_depth:
                leaf = child.value
                child.n += 1
                child.value_sum += leaf
                break
            node = child
            pos = select_child_nonroot(node, self.minmax, self.cfg)
        self.leaf_evaluations += 1

        g = leaf
        backups = self.backups
        if backups is not None:
            backups.append((id(child), g))
        for node, pos, chance in reversed(path):
            g = chance.reward_norm + g
            chance.n += 1
            chance.value_sum += g
            node.child_n[pos] += 1
            node.child_w[pos] += g
            node.n += 1
            node.value_sum += g
            self.minmax.update(g)
            if backups is not None:
                backups.append((id(chance), g))
                backups.append((id(node), g))

    def iter_nodes(self, root: DecisionNode):
        todo: list[DecisionNode | ChanceNode] = [root]
        while todo:
            nd = todo.pop()
            yield nd
            if isinstance(nd, DecisionNode):
                todo.extend(c for c in nd.children if c is not None)
            else:
                todo.extend(nd.children.values())


def search(state: GameState, evaluator: Evaluator, engine: Engine, cfg: SearchConfig,
           rng: np.random.Generator, keep_tree: bool = False,
           record_backups: bool = False) -> SearchResult:
    """Run one Gumbel search from ``state`` and return the chosen action and targets."""
    if state.terminal:
        raise EngineContractError("cannot search a terminal state")
    tree = SearchTree(engine, evaluator, cfg, rng, record_backups)
    root = tree.expand(state, 0)
    n_legal = len(root.actions)
    trace: list[str] = []

    # "all" still cannot exceed the budget: every candidate needs one visit
    m = min(n_legal, cfg.n) if cfg.m is None else min(cfg.m, n_legal)
    candidates, gumbel = gumbel_top_m(root.logits, m, None if cfg.zero_gumbel else rng)
    schedule = sequential_halving_schedule(cfg.n, len(candidates))
    if cfg.trace:
        trace.append(f"root value={root.value:.6f} legal={n_legal} schedule={schedule}")
        trace.append("candidates " + " ".join(
            f"{engine.action_of(int(root.actions[c]))}:g={gumbel[c]:.4f}" for c in candidates))

    def root_scores(cands: list[int]) -> np.ndarray:
        cq = completed_q(root, root.value, tree.minmax)
        sig = sigma_transform(cq[cands], root.child_n.max(initial=0.0), cfg)
        return gumbel[cands] + root.logits[cands] + sig

    survivors = list(candidates)
    for phase, (count, visits) in enumerate(schedule):
        survivors = survivors[:count]
        for _ in range(visits):
            for pos in survivors:
                tree.simulate(root, pos)
        scores = root_scores(survivors)
        order = sorted(range(len(survivors)), key=lambda i: (-scores[i], survivors[i]))
        survivors = [survivors[i] for i in order]
        if cfg.trace:
            trace.append(f"phase {phase} visits={visits} " + " ".join(
                f"{engine.action_of(int(root.actions[s]))}:{sc:.4f}"
                for s, sc in zip(survivors, scores[order])))
    best = survivors[0]

    cq = completed_q(root, root.value, tree.minmax)
    pi = improved_policy(root, tree.minmax, cfg)
    policy = np.zeros(engine.n_actions)
    policy[root.actions] = pi
    raw_completed = np.where(root.child_n > 0, root.child_w / np.maximum(root.child_n, 1), root.value)
    chosen_index = int(root.actions[best])
    if cfg.trace:
        trace.append(f"chosen {engine.action_of(chosen_index)}")
    tree.root = root
    return SearchResult(
        chosen_action=engine.action_of(chosen_index),
        chosen_index=chosen_index,
        policy_target=policy,
        root_value=float(pi @ raw_completed),
        legal=root.actions,
        visits=root.child_n.copy(),
        q=root.q(),
        completed_q=cq,
        gumbel=gumbel,
        logits=root.logits,
        schedule=schedule,
        leaf_evaluations=tree.leaf_evaluations,
        evaluator_calls=tree.evaluator_calls,
        trace=trace,
        tree=tree if keep_tree else None,
    )
