"""The two difficulty metrics, computed from a per-iteration reward series."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .training import IterationStats

NOT_CONVERGED = "-"


def _series(stats: Sequence[IterationStats] | Sequence[float]) -> list[tuple[int, float]]:
    """(1-based iteration, mean reward) pairs; iterations without games are skipped."""
    out = []
    for i, s in enumerate(stats, start=1):
        if isinstance(s, IterationStats):
            if s.mean_reward is not None:
                out.append((s.iteration, s.mean_reward))
        elif s is not None:
            out.append((i, float(s)))
    return out


def training_reward(stats: Sequence[IterationStats] | Sequence[float], window: int = 50) -> float:
    """Mean of the per-iteration mean reward over the last ``window`` iterations."""
    if window < 1:
        raise ValueError("window must be ≥ 1")
    series = _series(stats)
    if not series:
        raise ValueError("empty reward series")
    tail = [r for _, r in series[-window:]]
    return float(np.mean(tail))


def convergence_iteration(stats: Sequence[IterationStats] | Sequence[float], max_reward: float,
                          eps: float = 0.0, run: int = 3) -> int | None:
    """First iteration starting ``run`` consecutive iterations at ``max_reward - eps`` or above.

    ``None`` means the run never converged (rendered as ``-``).
    """
    if max_reward <= 0:
        raise ValueError("max_reward must be positive")
    series = _series(stats)
    streak = 0
    for k, (it, r) in enumerate(series):
        streak = streak + 1 if r >= max_reward - eps else 0
        if streak == run:
            return series[k - run + 1][0]
    return None


def format_convergence(it: int | None) -> str:
    return NOT_CONVERGED if it is None else str(it)


def parse_convergence(text: str) -> int | None:
    return None if text.strip() == NOT_CONVERGED else int(text)
