"""Variant sweeps, their CSV table, frozen-checkpoint evaluation and SVG plots."""

from __future__ import annotations

import csv
import io
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .engine import Engine
from .evaluator import MLP
from .metrics import convergence_iteration, format_convergence, parse_convergence, training_reward
from .planner import SearchConfig
from .rules import RuleSet, validate_ruleset
from .training import IterationStats, TrainConfig, evaluate_policy, read_stats_csv, train

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ["variant_id", "h", "p", "extra_blocks", "training_reward",
                 "convergence_iteration", "seed", "stats_path", "error"]


@dataclass(frozen=True)
class SweepResult:
    variant_id: str
    h: int
    p: int
    extra_blocks: tuple[str, ...]
    training_reward: float | None  # None only for failed cells
    convergence_iteration: int | None
    seed: int  # master seed; the cell trains with cell_seed(seed, rules)
    stats_path: str
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass(frozen=True)
class SweepCell:
    rules: RuleSet
    master_seed: int

    @property
    def seed(self) -> int:
        return cell_seed(self.master_seed, self.rules)


def cell_seed(master_seed: int, rules: RuleSet) -> int:
    """Training seed of a sweep cell, a function of the master seed and the cell's rules only."""
    tag = zlib.crc32(rules.variant_id.encode())
    return int(np.random.SeedSequence([master_seed, tag]).generate_state(1)[0])


def sweep_cells(base: RuleSet, hs: Sequence[int], ps: Sequence[int],
                extra_blocks: Sequence[Sequence[str]], seeds: Sequence[int]) -> list[SweepCell]:
    cells = []
    for seed in seeds:
        for extras in extra_blocks:
            for h in hs:
                for p in ps:
                    rules = validate_ruleset(base.with_(h=h, p=p, extra_blocks=tuple(extras)))
                    cells.append(SweepCell(rules, seed))
    return cells


def _join_blocks(blocks: Sequence[str]) -> str:
    return "+".join(blocks) if blocks else "none"


def _split_blocks(text: str) -> tuple[str, ...]:
    return () if text in ("", "none") else tuple(text.split("+"))


def run_cell(cell: SweepCell, cfg: TrainConfig, out_dir: Path, window: int = 50,
             eps: float = 0.0) -> SweepResult:
    """Train one cell in its own directory and compute both metrics; errors become a marker."""
    rules = cell.rules
    seed = cell.seed
    cell_dir = Path(out_dir) / "cells" / f"{rules.variant_id}-s{cell.master_seed}"
    try:
        cell_cfg = TrainConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(TrainConfig)},
                                  "seed": seed})
        result = train(Engine(rules), cell_cfg, cell_dir)
        stats = result.stats
        return SweepResult(rules.variant_id, rules.h, rules.p, rules.extra_blocks,
                           training_reward(stats, window),
                           convergence_iteration(stats, rules.reward_cap, eps),
                           cell.master_seed, str(result.stats_path))
    except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the sweep
        log.warning("cell %s failed: %s", rules.variant_id, exc)
        return SweepResult(rules.variant_id, rules.h, rules.p, rules.extra_blocks, None, None,
                           cell.master_seed, str(cell_dir / "iteration_stats.csv"),
                           f"{type(exc).__name__}: {exc}")


def _run_cell_job(args) -> SweepResult:
    return run_cell(*args)


def run_sweep(cells: Sequence[SweepCell], cfg: TrainConfig, out_dir: str | Path,
              workers: int = 1, window: int = 50, eps: float = 0.0) -> list[SweepResult]:
    """Train every cell, write ``sweep_results.csv``; results come back in cell order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # Each cell trains single-process; parallelism lives at the cell level.
    cell_cfg = TrainConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(TrainConfig)},
                              "threads": 1})
    jobs = [(c, cell_cfg, out, window, eps) for c in cells]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_cell_job, jobs))
    else:
        results = [_run_cell_job(j) for j in jobs]
    write_sweep_csv(out / "sweep_results.csv", results)
    return results


def sweep_csv_text(results: Sequence[SweepResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in results:
        w.writerow([r.variant_id, r.h, r.p, _join_blocks(r.extra_blocks),
                    "" if r.training_reward is None else repr(r.training_reward),
                    format_convergence(r.convergence_iteration), r.seed, r.stats_path, r.error])
    return buf.getvalue()


def write_sweep_csv(path, results: Sequence[SweepResult]) -> None:
    Path(path).write_text(sweep_csv_text(results))


def read_sweep_csv(path) -> list[SweepResult]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != SWEEP_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(SWEEP_COLUMNS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(SWEEP_COLUMNS):
            raise ValueError(f"{path}:{lineno}: expected {len(SWEEP_COLUMNS)} columns, got {len(row)}")
        rec = dict(zip(SWEEP_COLUMNS, row))
        col = ""
        try:
            col = "h"
            h = int(rec["h"])
            col = "p"
            p = int(rec["p"])
            col = "training_reward"
            tr = float(rec["training_reward"]) if rec["training_reward"] != "" else None
            col = "convergence_iteration"
            conv = parse_convergence(rec["convergence_iteration"])
            col = "seed"
            seed = int(rec["seed"])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: column {col!r} has bad value {rec[col]!r}") from None
        out.append(SweepResult(rec["variant_id"], h, p, _split_blocks(rec["extra_blocks"]), tr, conv,
                               seed, rec["stats_path"], rec["error"]))
    return out


def recompute_metrics(result: SweepResult, reward_cap: int, window: int = 50,
                      eps: float = 0.0) -> tuple[float, int | None]:
    """Both metrics straight from the cell's stats file."""
    stats = read_stats_csv(result.stats_path)
    return training_reward(stats, window), convergence_iteration(stats, reward_cap, eps)


# Frozen-checkpoint evaluation

def evaluate_checkpoint(path, rules: RuleSet, search_cfg: SearchConfig, episodes: int,
                        seed: int) -> np.ndarray:
    """Scores of ``episodes`` games played by a saved network with the given search settings."""
    engine = Engine(rules)
    model = MLP.load(path)
    if model.arch.input_size != engine.feature_size or model.arch.n_actions != engine.n_actions:
        raise ValueError(f"{path}: checkpoint does not match rule set {rules.variant_id}")
    return evaluate_policy(model.snapshot(), engine, search_cfg, episodes, seed)


def paired_greater(a: Sequence[float], b: Sequence[float]) -> float:
    """One-sided p-value for mean(a) > mean(b), pairing episode i of each run."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples need equal length")
    d = a - b
    if np.all(d == d[0]):
        return 0.0 if d[0] > 0 else 1.0
    return float(sps.ttest_rel(a, b, alternative="greater").pvalue)


# SVG plots

_W, _H, _PAD = 640, 400, 50


def _comment(text: str) -> str:
    return "<!--\n" + text.replace("--", "- -") + "-->\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def curve_svg(stats: Sequence[IterationStats], title: str, reward_cap: float | None = None) -> str:
    """Mean reward against iteration; one polyline vertex per iteration that played games."""
    pts = [(s.iteration, s.mean_reward) for s in stats if s.mean_reward is not None]
    n_it = max((s.iteration for s in stats), default=1)
    top = max([r for _, r in pts] + ([reward_cap] if reward_cap else []) + [1.0])
    sx = (_W - 2 * _PAD) / max(n_it - 1, 1)
    sy = (_H - 2 * _PAD) / top

    def xy(it, r):
        return f"{_PAD + (it - 1) * sx:.2f},{_H - _PAD - r * sy:.2f}"

    data = "iteration,mean_reward\n" + "".join(f"{it},{r!r}\n" for it, r in pts)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">\n',
        _comment(data),
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>\n',
        f'<text x="{_W // 2}" y="24" text-anchor="middle" font-size="16">{_esc(title)}</text>\n',
        f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>\n',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>\n',
        f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle" font-size="12">iteration</text>\n',
        f'<text x="14" y="{_H // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {_H // 2})">mean reward</text>\n',
        f'<text x="{_PAD - 4}" y="{_PAD + 4}" text-anchor="end" font-size="10">{top:g}</text>\n',
        f'<text x="{_PAD - 4}" y="{_H - _PAD + 4}" text-anchor="end" font-size="10">0</text>\n',
        f'<text x="{_W - _PAD}" y="{_H - _PAD + 14}" text-anchor="end" font-size="10">{n_it}</text>\n',
    ]
    if reward_cap:
        y = _H - _PAD - reward_cap * sy
        parts.append(f'<line x1="{_PAD}" y1="{y:.2f}" x2="{_W - _PAD}" y2="{y:.2f}" '
                     f'stroke="gray" stroke-dasharray="4 4"/>\n')
    parts.append(f'<polyline fill="none" stroke="steelblue" stroke-width="2" '
                 f'points="{" ".join(xy(it, r) for it, r in pts)}"/>\n')
    parts.append("</svg>\n")
    return "".join(parts)


def _shade(frac: float) -> str:
    frac = min(max(frac, 0.0), 1.0)
    r = int(round(255 - 200 * frac))
    g = int(round(255 - 120 * frac))
    return f"#{r:02x}{g:02x}ff"


def heatmap_svg(row_labels: Sequence[str], col_labels: Sequence[str],
                cells: dict[tuple[int, int], str | None], title: str, row_name: str,
                col_name: str, values: dict[tuple[int, int], float] | None = None) -> str:
    """Grid of labelled cells. A cell whose text is None is drawn with an ``X``."""
    cw, ch, left, topm = 90, 50, 110, 60
    w = left + cw * len(col_labels) + 20
    h = topm + ch * len(row_labels) + 40
    nums = [v for v in (values or {}).values() if v is not None]
    lo, hi = (min(nums), max(nums)) if nums else (0.0, 1.0)
    data = io.StringIO()
    data.write(f"{row_name},{col_name},value\n")
    for i, rl in enumerate(row_labels):
        for j, cl in enumerate(col_labels):
            if (i, j) in cells:
                text = cells[(i, j)]
                data.write(f"{rl},{cl},{'X' if text is None else text}\n")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">\n',
        _comment(data.getvalue()),
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>\n',
        f'<text x="{w // 2}" y="22" text-anchor="middle" font-size="15">{_esc(title)}</text>\n',
        f'<text x="{left + cw * len(col_labels) // 2}" y="{topm - 22}" text-anchor="middle" '
        f'font-size="12">{_esc(col_name)}</text>\n',
        f'<text x="12" y="{topm - 22}" font-size="12">{_esc(row_name)}</text>\n',
    ]
    for j, cl in enumerate(col_labels):
        parts.append(f'<text x="{left + j * cw + cw // 2}" y="{topm - 6}" text-anchor="middle" '
                     f'font-size="11">{_esc(cl)}</text>\n')
    for i, rl in enumerate(row_labels):
        y = topm + i * ch
        parts.append(f'<text x="{left - 8}" y="{y + ch // 2 + 4}" text-anchor="end" '
                     f'font-size="11">{_esc(rl)}</text>\n')
        for j in range(len(col_labels)):
            x = left + j * cw
            if (i, j) not in cells:
                parts.append(f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="#eeeeee" '
                             f'stroke="white"/>\n')
                continue
            text = cells[(i, j)]
            v = (values or {}).get((i, j))
            fill = _shade((v - lo) / (hi - lo) if v is not None and hi > lo else 0.5) \
                if v is not None else "#f4cccc"
            parts.append(f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}" '
                         f'stroke="white"/>\n')
            label = "X" if text is None else _esc(text)
            parts.append(f'<text x="{x + cw // 2}" y="{y + ch // 2 + 5}" text-anchor="middle" '
                         f'font-size="14">{label}</text>\n')
    parts.append("</svg>\n")
    return "".join(parts)


def _hp_heatmaps(results: Sequence[SweepResult], stem: str) -> dict[str, str]:
    """h×p grids of both metrics, one pair per (seed, extra blocks) slice."""
    out = {}
    slices = sorted({(r.seed, r.extra_blocks) for r in results})
    for seed, extras in slices:
        rows = [r for r in results if (r.seed, r.extra_blocks) == (seed, extras)]
        hs = sorted({r.h for r in rows})
        ps = sorted({r.p for r in rows})
        tr_cells, tr_vals, cv_cells, cv_vals = {}, {}, {}, {}
        for r in rows:
            key = (hs.index(r.h), ps.index(r.p))
            if r.failed:
                tr_cells[key] = "error"
                cv_cells[key] = "error"
                continue
            tr_cells[key] = f"{r.training_reward:.1f}"
            tr_vals[key] = r.training_reward
            cv_cells[key] = None if r.convergence_iteration is None else str(r.convergence_iteration)
            if r.convergence_iteration is not None:
                cv_vals[key] = float(r.convergence_iteration)
        tag = f"{stem}_s{seed}_{_join_blocks(extras)}"
        hl, pl = [f"h={h}" for h in hs], [f"p={p}" for p in ps]
        out[f"{tag}_training_reward.svg"] = heatmap_svg(
            hl, pl, tr_cells, f"training reward ({_join_blocks(extras)}, seed {seed})", "h", "p",
            tr_vals)
        out[f"{tag}_convergence.svg"] = heatmap_svg(
            hl, pl, cv_cells, f"convergence iteration ({_join_blocks(extras)}, seed {seed})", "h",
            "p", cv_vals)
    return out


def _block_heatmaps(results: Sequence[SweepResult], stem: str) -> dict[str, str]:
    """Block×block grids: single additions on the diagonal, pairs off it."""
    out = {}
    for seed, h, p in sorted({(r.seed, r.h, r.p) for r in results}):
        rows = [r for r in results if (r.seed, r.h, r.p) == (seed, h, p) and 1 <= len(r.extra_blocks) <= 2]
        blocks = sorted({b for r in rows for b in r.extra_blocks})
        if len(rows) < 2:
            continue
        tr_cells, tr_vals, cv_cells, cv_vals = {}, {}, {}, {}
        for r in rows:
            a = blocks.index(r.extra_blocks[0])
            b = blocks.index(r.extra_blocks[-1])
            for key in {(a, b), (b, a)}:
                if r.failed:
                    tr_cells[key] = cv_cells[key] = "error"
                    continue
                tr_cells[key] = f"{r.training_reward:.1f}"
                tr_vals[key] = r.training_reward
                cv_cells[key] = None if r.convergence_iteration is None else str(r.convergence_iteration)
                if r.convergence_iteration is not None:
                    cv_vals[key] = float(r.convergence_iteration)
        tag = f"{stem}_s{seed}_h{h}_p{p}_blocks"
        out[f"{tag}_training_reward.svg"] = heatmap_svg(
            blocks, blocks, tr_cells, f"training reward, added blocks (h={h}, p={p})", "block",
            "block", tr_vals)
        out[f"{tag}_convergence.svg"] = heatmap_svg(
            blocks, blocks, cv_cells, f"convergence iteration, added blocks (h={h}, p={p})",
            "block", "block", cv_vals)
    return out


def _cap_of(variant_id: str) -> float | None:
    tail = variant_id.rsplit("-cap", 1)
    try:
        return float(tail[1]) if len(tail) == 2 else None
    except ValueError:
        return None


def emit_plots(paths: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    """Write SVGs for each stats or sweep CSV; returns the files written, sorted."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    for path in map(Path, paths):
        with open(path, newline="") as fh:
            header = fh.readline().strip().split(",")
        if header == SWEEP_COLUMNS:
            results = read_sweep_csv(path)
            files.update(_hp_heatmaps(results, path.stem))
            files.update(_block_heatmaps(results, path.stem))
            for r in results:
                sp = Path(r.stats_path)
                if not r.failed and sp.exists():
                    files[f"{path.stem}_{r.variant_id}_s{r.seed}_curve.svg"] = curve_svg(
                        read_stats_csv(sp), r.variant_id, _cap_of(r.variant_id))
        else:
            stats = read_stats_csv(path)
            name = path.parent.name or path.stem
            files[f"{name}_{path.stem}_curve.svg"] = curve_svg(stats, name)
    written = []
    for name in sorted(files):
        target = out / name
        target.write_text(files[name])
        written.append(target)
    return written
