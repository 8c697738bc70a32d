"""Acceptance checks, one test per criterion, each at its stated tolerance.

Every test records a one-line verdict (printed in the terminal summary and
immediately, so ``-s`` shows it too). The training-based checks share
cached runs through session fixtures; they are marked ``slow`` but are part
of the default run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blocklab.cli import main as cli_main
from blocklab.engine import Engine
from blocklab.evaluator import Arch, MLP, gradient_check, init_evaluator
from blocklab.experiments import (SweepCell, SweepResult, evaluate_checkpoint, paired_greater,
                                  run_sweep)
from blocklab.metrics import convergence_iteration, training_reward
from blocklab.oracle import Expectimax, preset_engine, random_baseline
from blocklab.planner import SearchConfig, search, sequential_halving_schedule
from blocklab.rules import CLASSIC, RuleSet
from blocklab.training import TrainConfig, read_stats_csv, train, uniform_evaluator

from conftest import ACCEPTANCE_LINES
from naive import check_episode
from test_evaluator import FaultyBiasGradient, random_batch

# Learning budget shared by the training-based criteria.
CAP = 50
BUDGET = TrainConfig(iterations=30, games_per_iteration=40, search=SearchConfig(16, 4),
                     deterministic=True)
SEEDS = (0, 1, 2, 3, 4)
EVAL_EPISODES = 200
EVAL_SEED = 2024
ALPHA = 0.05


def report(key: str, ok: bool, detail: str) -> None:
    line = f"criterion {key}: {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)


# ---------------------------------------------------------------- 1

def test_engine_matches_naive_resimulation():
    rulesets = [
        CLASSIC.with_(reward_cap=CAP),
        CLASSIC.with_(reward_cap=CAP, extra_blocks=("U5", "V5", "X5", "T5")),
        RuleSet(4, 4, 1, 1, (), 20),
        RuleSet(4, 4, 2, 0, ("U5", "V5", "X5", "T5"), 20),
    ]
    engines = [Engine(r) for r in rulesets]
    per_rules = [0] * len(engines)
    seed = 0
    while min(per_rules) < 2500:
        for i, eng in enumerate(engines):
            per_rules[i] += check_episode(eng, seed)
        seed += 1
    total = sum(per_rules)
    ok = total >= 10_000
    report("1", ok, f"{total} transitions matched exactly across {len(rulesets)} rule sets "
                    f"({', '.join(map(str, per_rules))})")
    assert ok


# ---------------------------------------------------------------- 2

def decisive_states(engine, solver, count, seed):
    """Non-terminal states from random play where the action choice changes the value."""
    rng = np.random.default_rng(seed)
    out, seen = [], set()
    while len(out) < count:
        state, crng = engine.start(rng)
        while not state.terminal:
            key = engine.hash_state(state)
            qs = solver.action_values(state)
            if key not in seen and max(qs.values()) - min(qs.values()) > 1e-9:
                seen.add(key)
                out.append((state, qs))
                if len(out) == count:
                    break
            legal = engine.legal_indices(state)
            state, _, _ = engine.step(state, legal[int(rng.integers(len(legal)))], crng)
    return out


def test_planner_agrees_with_expectimax():
    world = preset_engine("oracle-4x4-mixed")
    solver = Expectimax(world)
    samples = decisive_states(world, solver, 200, seed=0)
    rng = np.random.default_rng(1)
    cfg = SearchConfig(n=512, m=None)
    optimal, errors = 0, []
    for state, qs in samples:
        res = search(state, uniform_evaluator(world), world, cfg, rng)
        best = max(qs.values())
        optimal += qs[res.chosen_index] >= best - 1e-9
        pos = int(np.flatnonzero(res.legal == res.chosen_index)[0])
        errors.append(abs(res.q[pos] - best / world.cap))
    errors = np.array(errors)
    frac = optimal / len(samples)
    mae = float(errors.mean())
    ok = frac >= 0.90 and mae <= 0.1
    report("2", ok, f"optimal action in {frac:.1%} of {len(samples)} states (need >= 90%); "
                    f"chosen completed-Q error mean {mae:.4f} (need <= 0.1), "
                    f"{np.mean(errors <= 0.1):.1%} of states within 0.1, max {errors.max():.3f}")
    assert ok


# ---------------------------------------------------------------- 3

BUDGETS = [(4, 2), (8, 4), (16, 4), (32, 8), (200, 16)]
_budget_checks: list[str] = []


@settings(max_examples=40, deadline=None)
@given(nm=st.sampled_from(BUDGETS), seed=st.integers(0, 10_000), moves=st.integers(0, 8))
def check_budget(nm, seed, moves):
    n, m = nm
    eng = Engine(CLASSIC.with_(reward_cap=CAP))
    rng = np.random.default_rng(seed)
    state, crng = eng.start(rng)
    for _ in range(moves):
        if state.terminal:
            break
        legal = eng.legal_indices(state)
        state, _, _ = eng.step(state, legal[int(rng.integers(len(legal)))], crng)
    if state.terminal:
        return
    ev = init_evaluator(Arch(eng.feature_size, (16,), eng.n_actions), seed)
    res = search(state, ev, eng, SearchConfig(n, m), rng)
    sched = sequential_halving_schedule(n, min(m, len(res.legal)))
    scheduled = sum(c * v for c, v in sched)
    assert res.schedule == sched
    assert res.leaf_evaluations == scheduled == int(res.visits.sum())
    assert scheduled <= n
    _budget_checks.append(f"{n},{m}")


def test_search_spends_scheduled_budget():
    totals = {nm: sum(c * v for c, v in sequential_halving_schedule(*nm)) for nm in BUDGETS}
    try:
        check_budget()
        ok = all(totals[nm] == nm[0] for nm in BUDGETS)
        detail = (f"leaf-evaluation counter equals the schedule in {len(_budget_checks)} "
                  f"searches; schedule totals {totals}")
    except AssertionError as exc:
        ok, detail = False, f"counter mismatch: {exc}"
    report("3", ok, detail)
    assert ok


# ---------------------------------------------------------------- 4

def test_gradient_fidelity():
    worst = 0.0
    for hidden in [(), (16,), (32, 24), (128, 128)]:
        arch = Arch(121 if hidden == (128, 128) else 30, hidden, 192 if hidden == (128, 128) else 12)
        model = init_evaluator(arch, 3, value_weight=2.0)
        worst = max(worst, gradient_check(model, random_batch(arch, 6, 3), eps=1e-5, n_params=600))
    good = init_evaluator(Arch(20, (10,), 8), 0)
    bad = FaultyBiasGradient(good.arch, good.layers, good.momentum, good.value_weight)
    fault = gradient_check(bad, random_batch(good.arch, 4, 0), eps=1e-5, n_params=10_000)
    ok = worst <= 1e-4 and fault > 1e-2
    report("4", ok, f"max relative error {worst:.2e} (need <= 1e-4); injected fault gives "
                    f"{fault:.2e} (need > 1e-2)")
    assert ok


# ------------------------------------------------------------- shared runs

@dataclass
class Run:
    stats: list
    checkpoint: Path


@pytest.fixture(scope="session")
def runs_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance_runs")


@pytest.fixture(scope="session")
def classic_runs(runs_dir):
    """Criterion-6 training runs, one per master seed."""
    eng = Engine(CLASSIC.with_(reward_cap=CAP))
    out = {}
    for seed in SEEDS:
        cfg = TrainConfig(**{**BUDGET.__dict__, "seed": seed})
        res = train(eng, cfg, runs_dir / f"classic-s{seed}")
        out[seed] = Run(res.stats, res.checkpoint_path)
    return out


class CellCache:
    """Sweep cells trained once per session, plus their frozen-checkpoint evaluations."""

    def __init__(self, root: Path):
        self.root = root
        self.results: dict[tuple[str, int], SweepResult] = {}
        self.scores: dict[tuple[str, int], np.ndarray] = {}

    def result(self, rules: RuleSet, seed: int) -> SweepResult:
        key = (rules.variant_id, seed)
        if key not in self.results:
            [res] = run_sweep([SweepCell(rules, seed)], BUDGET,
                              self.root / f"{rules.variant_id}-s{seed}", window=10)
            if res.failed:
                raise RuntimeError(f"cell {key} failed: {res.error}")
            self.results[key] = res
        return self.results[key]

    def evaluate(self, rules: RuleSet, seed: int) -> np.ndarray:
        key = (rules.variant_id, seed)
        if key not in self.scores:
            res = self.result(rules, seed)
            ckpt = Path(res.stats_path).parent / "final.sgbz"
            self.scores[key] = evaluate_checkpoint(ckpt, rules, BUDGET.search, EVAL_EPISODES,
                                                   EVAL_SEED)
        return self.scores[key]


@pytest.fixture(scope="session")
def cells(runs_dir):
    return CellCache(runs_dir / "cells")


# ---------------------------------------------------------------- 5

@pytest.mark.slow
def test_deterministic_training_is_byte_identical(tmp_path):
    args = ["train", "--reward-cap", str(CAP), "--iterations", "30", "--games", "40",
            "--n", "16", "--m", "4", "--seed", "0", "--deterministic"]
    assert cli_main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "iteration_stats.csv").read_bytes()
    b = (tmp_path / "b" / "iteration_stats.csv").read_bytes()
    ok = a == b and len(a.splitlines()) == 31
    report("5", ok, f"two deterministic 30-iteration runs wrote {'identical' if a == b else 'different'} "
                    f"iteration_stats.csv ({len(a)} bytes)")
    assert ok


# ---------------------------------------------------------------- 6

@pytest.mark.slow
def test_learning_progress(classic_runs):
    baseline, _ = random_baseline(Engine(CLASSIC.with_(reward_cap=CAP)), 1000, 0)
    passed, parts = 0, []
    for seed, run in classic_runs.items():
        tr = training_reward(run.stats, window=10)
        first = run.stats[0].mean_reward
        good = tr >= 2 * baseline and tr >= 2 * first
        passed += good
        parts.append(f"s{seed} tr={tr:.2f} it1={first:.2f}")
    ok = passed >= 4
    report("6", ok, f"{passed}/5 seeds reach training_reward(10) >= 2x random ({baseline:.3f}) "
                    f"and >= 2x iteration 1; " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_last_iteration_doubles_first(classic_runs):
    passed, parts = 0, []
    for seed, run in classic_runs.items():
        first, last = run.stats[0].mean_reward, run.stats[-1].mean_reward
        passed += last >= 2 * first
        parts.append(f"s{seed} {first:.2f}->{last:.2f}")
    ok = passed >= 4
    report("6b", ok, f"{passed}/5 seeds have iteration-30 mean >= 2x iteration-1 mean; "
                     + "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 7

def base_rules(**kw) -> RuleSet:
    return CLASSIC.with_(reward_cap=CAP, p=0, **kw)


@pytest.mark.slow
def test_more_holding_blocks_score_higher(cells):
    scores = {h: cells.evaluate(base_rules(h=h), 0) for h in (1, 2, 3)}
    p21 = paired_greater(scores[2], scores[1])
    p32 = paired_greater(scores[3], scores[2])
    means = {h: s.mean() for h, s in scores.items()}
    ok = means[3] > means[2] > means[1] and p21 < ALPHA and p32 < ALPHA
    report("7", ok, f"eval means over {EVAL_EPISODES} episodes h1={means[1]:.2f} "
                    f"h2={means[2]:.2f} h3={means[3]:.2f}; p(h2>h1)={p21:.2g}, "
                    f"p(h3>h2)={p32:.2g} (need < {ALPHA})")
    assert ok


# ---------------------------------------------------------------- 8

@pytest.mark.slow
def test_preview_helps_single_holding_block(cells):
    s0 = cells.evaluate(base_rules(h=1), 0)
    s2 = cells.evaluate(CLASSIC.with_(reward_cap=CAP, h=1, p=2), 0)
    pval = paired_greater(s2, s0)
    ok = s2.mean() > s0.mean() and pval < ALPHA
    report("8", ok, f"h=1 eval means p0={s0.mean():.2f} p2={s2.mean():.2f}; "
                    f"p(p2>p0)={pval:.2g} (need < {ALPHA})")
    assert ok


# ---------------------------------------------------------------- 9

SINGLES = ("U5", "V5", "X5", "T5")


def block_trend_holds(cells, seed) -> tuple[bool, str]:
    base = cells.evaluate(base_rules(h=2), seed).mean()
    means, convs = {}, {}
    for b in SINGLES:
        rules = base_rules(h=2, extra_blocks=(b,))
        means[b] = cells.evaluate(rules, seed).mean()
        convs[b] = cells.result(rules, seed).convergence_iteration
    all_lower = all(means[b] < base for b in SINGLES)
    lowest = all(means["T5"] < means[b] for b in SINGLES if b != "T5")
    key = {b: math.inf if c is None else c for b, c in convs.items()}
    # convergence only discriminates when the singles do not all tie (e.g. all absent)
    slowest = len(set(key.values())) > 1 and all(key["T5"] >= key[b] for b in SINGLES)
    good = all_lower and (lowest or slowest)
    conv_txt = ",".join("-" if convs[b] is None else str(convs[b]) for b in SINGLES)
    return good, (f"s{seed} base={base:.2f} " + " ".join(f"{b}={means[b]:.2f}" for b in SINGLES)
                  + f" conv=({conv_txt})")


@pytest.mark.slow
def test_pentomino_trend(cells):
    results = [block_trend_holds(cells, s) for s in SEEDS]
    passed = sum(g for g, _ in results)
    detail = f"{passed}/5 seeds"
    if passed < 4:
        # one documented rerun on fresh seeds
        retry = [block_trend_holds(cells, s + 100) for s in SEEDS]
        rpassed = sum(g for g, _ in retry)
        detail += f", rerun on seeds 100-104: {rpassed}/5"
        results += retry
        passed = rpassed
    ok = passed >= 4
    report("9", ok, detail + " (need >= 4); " + "; ".join(t for _, t in results))
    assert ok


# ---------------------------------------------------------------- 10

def test_metric_examples():
    checks = {
        "constant 39.0": training_reward([39.0] * 80) == 39.0,
        "window 1": training_reward([0.0] * 9 + [100.0], window=1) == 100.0,
        "1..100 window 50": training_reward([float(i) for i in range(1, 101)], 50) == 75.5,
        "cap from 61": convergence_iteration([0.0] * 60 + [CAP] * 3, CAP) == 61,
        "never": convergence_iteration([CAP - 1.0] * 100, CAP) is None,
        "first run of three": convergence_iteration([CAP, CAP, 0, CAP, CAP, CAP], CAP) == 4,
    }
    from blocklab.metrics import format_convergence
    checks["dash"] = format_convergence(None) == "-"
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    report("10", ok, f"{sum(checks.values())}/{len(checks)} metric examples exact"
                     + (f"; failed: {failed}" if failed else ""))
    assert ok
