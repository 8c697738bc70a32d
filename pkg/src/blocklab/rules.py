"""Block shapes, the oriented block catalog, and rule-set configuration.

Catalog order is canonical so that shape ids (and therefore feature and
action encodings) are stable across runs:

    families  I4, O4, T4, S4, Z4, J4, L4, U5, V5, X5, T5
    rotations 0, 90, 180, 270 degrees clockwise, duplicates dropped

Pentomino cell tables (row, col), drawn with ``#`` as filled::

    U5   #.#      V5   #..      X5   .#.      T5   ###
         ###           #..           ###           .#.
                       ###           .#.           .#.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

Cells = tuple[tuple[int, int], ...]

STANDARD_FAMILIES: dict[str, Cells] = {
    "I4": ((0, 0), (0, 1), (0, 2), (0, 3)),
    "O4": ((0, 0), (0, 1), (1, 0), (1, 1)),
    "T4": ((0, 0), (0, 1), (0, 2), (1, 1)),
    "S4": ((0, 1), (0, 2), (1, 0), (1, 1)),
    "Z4": ((0, 0), (0, 1), (1, 1), (1, 2)),
    "J4": ((0, 0), (1, 0), (1, 1), (1, 2)),
    "L4": ((0, 2), (1, 0), (1, 1), (1, 2)),
}

PENTOMINO_FAMILIES: dict[str, Cells] = {
    "U5": ((0, 0), (0, 2), (1, 0), (1, 1), (1, 2)),
    "V5": ((0, 0), (1, 0), (2, 0), (2, 1), (2, 2)),
    "X5": ((0, 1), (1, 0), (1, 1), (1, 2), (2, 1)),
    "T5": ((0, 0), (0, 1), (0, 2), (1, 1), (2, 1)),
}

EXTRA_BLOCKS = tuple(PENTOMINO_FAMILIES)
DRAW_SCHEMES = ("orientation", "family")
CLEAR_AXES = ("both", "rows", "cols")

CLASSIC_REWARD_CAP = 6750


class RuleError(ValueError):
    """A rule set or catalog violates one of its constraints."""


def normalize(cells: Iterable[tuple[int, int]]) -> Cells:
    cells = list(cells)
    r0 = min(r for r, _ in cells)
    c0 = min(c for _, c in cells)
    return tuple(sorted((r - r0, c - c0) for r, c in cells))


def rotate90(cells: Iterable[tuple[int, int]]) -> Cells:
    """Rotate clockwise by 90 degrees and renormalize."""
    return normalize((c, -r) for r, c in cells)


def is_connected(cells: Cells) -> bool:
    todo = [cells[0]]
    seen = {cells[0]}
    pool = set(cells)
    while todo:
        r, c = todo.pop()
        for nb in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if nb in pool and nb not in seen:
                seen.add(nb)
                todo.append(nb)
    return len(seen) == len(pool)


@dataclass(frozen=True)
class Shape:
    id: int
    name: str
    cells: Cells

    def __post_init__(self):
        if not self.cells:
            raise RuleError(f"shape {self.name} has no cells")
        if len(set(self.cells)) != len(self.cells):
            raise RuleError(f"shape {self.name} has duplicate cells")
        if normalize(self.cells) != tuple(sorted(self.cells)):
            raise RuleError(f"shape {self.name} is not normalized")
        if not is_connected(self.cells):
            raise RuleError(f"shape {self.name} is not 4-connected")

    @property
    def size(self) -> int:
        return len(self.cells)

    @property
    def height(self) -> int:
        return 1 + max(r for r, _ in self.cells)

    @property
    def width(self) -> int:
        return 1 + max(c for _, c in self.cells)

    def render(self) -> str:
        filled = set(self.cells)
        return "\n".join(
            "".join("#" if (r, c) in filled else "." for c in range(self.width))
            for r in range(self.height)
        )


@dataclass(frozen=True)
class Catalog:
    shapes: tuple[Shape, ...]
    draw_weights: tuple[float, ...]
    families: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.shapes:
            raise RuleError("catalog is empty")
        if len(self.draw_weights) != len(self.shapes):
            raise RuleError("one draw weight per shape required")
        if any(w <= 0 for w in self.draw_weights):
            raise RuleError("draw weights must be strictly positive")
        if abs(sum(self.draw_weights) - 1.0) > 1e-12:
            raise RuleError("draw weights must sum to 1")
        if len({s.cells for s in self.shapes}) != len(self.shapes):
            raise RuleError("catalog contains duplicate cell sets")
        if [s.id for s in self.shapes] != list(range(len(self.shapes))):
            raise RuleError("shape ids must equal catalog positions")

    def __len__(self) -> int:
        return len(self.shapes)

    def by_name(self, name: str) -> Shape:
        for s in self.shapes:
            if s.name == name:
                return s
        raise KeyError(name)

    def digest(self) -> str:
        """Short content hash identifying this catalog in episode files."""
        h = hashlib.sha256()
        for s, w in zip(self.shapes, self.draw_weights):
            h.update(f"{s.id}:{s.name}:{s.cells}:{w!r};".encode())
        return h.hexdigest()[:16]

    @classmethod
    def from_cells(cls, named_cells: Sequence[tuple[str, Iterable[tuple[int, int]]]]) -> "Catalog":
        """Uniform catalog over explicitly given shapes (test and oracle worlds)."""
        shapes = tuple(
            Shape(i, name, normalize(cells)) for i, (name, cells) in enumerate(named_cells)
        )
        k = len(shapes)
        return cls(shapes, _uniform(k), tuple(name for name, _ in named_cells))


def _uniform(k: int) -> tuple[float, ...]:
    # exact float 1/k for every entry; fsum of k copies is within 1e-12 of 1
    return (1.0 / k,) * k


def orientations(cells: Cells) -> list[Cells]:
    out: list[Cells] = []
    cur = normalize(cells)
    for _ in range(4):
        if cur not in out:
            out.append(cur)
        cur = rotate90(cur)
    return out


def build_catalog(extra_blocks: Iterable[str] = (), draw: str = "orientation") -> Catalog:
    """All distinct orientations of the tetrominoes plus requested pentominoes.

    ``draw="orientation"`` weights every oriented shape equally;
    ``draw="family"`` picks a family uniformly, then one of its orientations.
    """
    extras = canonical_extras(extra_blocks)
    if draw not in DRAW_SCHEMES:
        raise RuleError(f"unknown draw scheme {draw!r}")
    families = list(STANDARD_FAMILIES) + list(extras)
    table = {**STANDARD_FAMILIES, **PENTOMINO_FAMILIES}

    shapes: list[Shape] = []
    family_of: list[str] = []
    for fam in families:
        rots = orientations(table[fam])
        for cells in rots:
            name = fam if len(rots) == 1 else f"{fam}-rot{90 * _rotation_index(table[fam], cells)}"
            shapes.append(Shape(len(shapes), name, cells))
            family_of.append(fam)

    if draw == "orientation":
        weights = _uniform(len(shapes))
    else:
        per_family = {f: family_of.count(f) for f in families}
        weights = tuple(1.0 / (len(families) * per_family[f]) for f in family_of)
        # renormalize to kill accumulated rounding
        total = sum(weights)
        weights = tuple(w / total for w in weights)
    return Catalog(tuple(shapes), weights, tuple(families))


def _rotation_index(base: Cells, target: Cells) -> int:
    cur = normalize(base)
    for k in range(4):
        if cur == target:
            return k
        cur = rotate90(cur)
    raise AssertionError("target is not a rotation of base")


def canonical_extras(extra_blocks: Iterable[str]) -> tuple[str, ...]:
    extras = set()
    for name in extra_blocks:
        key = name.strip().upper()
        if key in ("U", "V", "X", "T"):
            key += "5"
        if key not in PENTOMINO_FAMILIES:
            raise RuleError(f"unknown extra block {name!r}; expected a subset of {EXTRA_BLOCKS}")
        extras.add(key)
    return tuple(f for f in EXTRA_BLOCKS if f in extras)


@dataclass(frozen=True)
class RuleSet:
    board_rows: int = 8
    board_cols: int = 8
    h: int = 3
    p: int = 0
    extra_blocks: tuple[str, ...] = ()
    reward_cap: int = CLASSIC_REWARD_CAP
    rng_scheme: str = "seedseq-v1"
    clear_axes: str = "both"
    draw: str = "orientation"

    @property
    def variant_id(self) -> str:
        blocks = "+".join(self.extra_blocks) if self.extra_blocks else "none"
        return f"r{self.board_rows}x{self.board_cols}-h{self.h}-p{self.p}-{blocks}-cap{self.reward_cap}"

    def with_(self, **changes) -> "RuleSet":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {
            "board_rows": self.board_rows,
            "board_cols": self.board_cols,
            "h": self.h,
            "p": self.p,
            "extra_blocks": list(self.extra_blocks),
            "reward_cap": self.reward_cap,
            "rng_scheme": self.rng_scheme,
            "clear_axes": self.clear_axes,
            "draw": self.draw,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleSet":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "extra_blocks" in known:
            known["extra_blocks"] = canonical_extras(known["extra_blocks"])
        return cls(**known)


CLASSIC = RuleSet()


def validate_ruleset(raw: RuleSet, catalog: Catalog | None = None) -> RuleSet:
    """Return ``raw`` with extra_blocks canonicalized, or raise RuleError.

    The board is checked against the catalog built from ``raw.extra_blocks``
    unless an explicit ``catalog`` is given (oracle and test worlds).
    """
    for name in ("board_rows", "board_cols", "h", "p", "reward_cap"):
        if not isinstance(getattr(raw, name), int) or isinstance(getattr(raw, name), bool):
            raise RuleError(f"{name} must be an integer")
    if raw.board_rows < 1 or raw.board_cols < 1:
        raise RuleError("board dimensions must be ≥ 1")
    if raw.h < 1:
        raise RuleError("h must be ≥ 1")
    if raw.p < 0:
        raise RuleError("p must be ≥ 0")
    if raw.reward_cap < 1:
        raise RuleError("reward_cap must be ≥ 1")
    if raw.clear_axes not in CLEAR_AXES:
        raise RuleError(f"clear_axes must be one of {CLEAR_AXES}")
    if raw.draw not in DRAW_SCHEMES:
        raise RuleError(f"draw must be one of {DRAW_SCHEMES}")
    if raw.board_rows * raw.board_cols > 4096:
        raise RuleError("board larger than 4096 cells is not supported")
    rules = replace(raw, extra_blocks=canonical_extras(raw.extra_blocks))
    if catalog is None:
        catalog = build_catalog(rules.extra_blocks, rules.draw)
    for s in catalog.shapes:
        if s.height > rules.board_rows or s.width > rules.board_cols:
            raise RuleError(
                f"shape {s.name} ({s.height}x{s.width}) does not fit the "
                f"{rules.board_rows}x{rules.board_cols} board"
            )
    return rules
