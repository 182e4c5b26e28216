"""Scored candidates and the nondominated front over (complexity, loss)."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable

from keplersr.expr import Expr, to_text

LOSS_KEYS = ("dl", "mse")


@dataclass(frozen=True)
class ScoredExpr:
    """An expression with fitted constants and its scores on one dataset.

    ``index`` is the position in the search stream and only serves to keep
    ordering decisions reproducible.
    """

    expr: Expr
    constants: tuple[float, ...]
    complexity: float
    mse: float
    dl: float
    index: int = 0

    def loss(self, key: str = "dl") -> float:
        if key == "dl":
            return self.dl
        if key == "mse":
            return self.mse
        raise ValueError(f"unknown loss key {key!r}")

    @property
    def text(self) -> str:
        return to_text(self.expr, self.constants)


def dominates(a: ScoredExpr, b: ScoredExpr, loss_key: str = "dl") -> bool:
    """True when ``a`` is no worse on both axes and strictly better on one."""
    la, lb = a.loss(loss_key), b.loss(loss_key)
    return a.complexity <= b.complexity and la <= lb and (a.complexity < b.complexity or la < lb)


@dataclass
class ParetoFront:
    """Members sorted by ascending complexity with strictly descending loss.

    Candidates with infinite or undefined loss are never admitted. A
    candidate that exactly ties a member on both axes is rejected, so the
    earlier one stays.
    """

    loss_key: str = "dl"
    members: list[ScoredExpr] = field(default_factory=list)

    def __post_init__(self):
        if self.loss_key not in LOSS_KEYS:
            raise ValueError(f"loss_key must be one of {LOSS_KEYS}")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i):
        return self.members[i]

    def insert(self, s: ScoredExpr) -> bool:
        """Insert ``s`` if nondominated; return whether it was kept."""
        loss = s.loss(self.loss_key)
        if not math.isfinite(loss) or not math.isfinite(s.complexity):
            return False
        keys = [m.complexity for m in self.members]
        pos = bisect.bisect_right(keys, s.complexity)
        # the member just before pos has the lowest loss among those no more complex
        if pos > 0 and self.members[pos - 1].loss(self.loss_key) <= loss:
            return False
        start = pos
        while start > 0 and self.members[start - 1].complexity == s.complexity:
            start -= 1
        end = start
        while end < len(self.members) and self.members[end].loss(self.loss_key) >= loss:
            end += 1
        self.members[start:end] = [s]
        return True

    def extend(self, items: Iterable[ScoredExpr]) -> int:
        return sum(self.insert(s) for s in items)

    def copy(self) -> ParetoFront:
        return ParetoFront(self.loss_key, list(self.members))

    def best(self) -> ScoredExpr | None:
        """Lowest-loss member (the most complex one)."""
        return self.members[-1] if self.members else None

    def check(self) -> None:
        """Raise AssertionError if the ordering invariant is broken."""
        for a, b in zip(self.members, self.members[1:]):
            if not (a.complexity < b.complexity and a.loss(self.loss_key) > b.loss(self.loss_key)):
                raise AssertionError(f"front order broken between {a.text!r} and {b.text!r}")


def pareto_insert(front: ParetoFront, s: ScoredExpr, loss_key: str | None = None) -> ParetoFront:
    """Functional insert: a new front, ``front`` itself is left untouched."""
    out = ParetoFront(loss_key or front.loss_key, list(front.members))
    if loss_key is not None and loss_key != front.loss_key:
        out = ParetoFront(loss_key)
        out.extend(front.members)
    out.insert(s)
    return out
