"""Exhaustive enumeration of canonical expression shapes by node count.

Shapes are produced level by level (one level per node count) so the stream
is ordered by structural complexity. Each canonical form appears once.
Besides commutative ordering and constant folding, a few rewrite-equivalent
shapes are skipped because a smaller or equally small shape in the stream
covers the same function family once constants are fitted; none of these
can reach the Pareto front ahead of the shape that covers them.
"""

from __future__ import annotations

import math
from typing import Iterator

from keplersr.expr import Binary, Const, Expr, Feature, GrammarSet, Unary, distinct_slots

# (outer, inner) pairs whose composition is the identity (on its domain)
_CANCEL = {
    ("negate", "negate"), ("inverse", "inverse"),
    ("exp", "log"), ("log", "exp"),
    ("sin", "arcsin"), ("cos", "arccos"), ("tan", "arctan"),
    ("square", "sqrt"),
}


def _const_child(node: Expr) -> bool:
    return isinstance(node, Binary) and (isinstance(node.left, Const) or isinstance(node.right, Const))


def _ok_unary(op: str, a: Expr) -> bool:
    if not a.has_feature:
        return False
    if isinstance(a, Unary):
        if (op, a.op) in _CANCEL:
            return False
        if op in ("inverse", "square", "cube") and a.op == "negate":
            return False
    if isinstance(a, Binary):
        if op == "negate" and (a.op == "-" or (a.op in ("*", "/") and _const_child(a))):
            return False
        if op == "inverse" and (a.op == "/" or (a.op in ("*", "pow") and isinstance(a.right, Const))
                                or (a.op == "*" and isinstance(a.left, Const))):
            return False
        if op in ("square", "cube", "sqrt", "inverse") and a.op == "pow" and isinstance(a.right, Const):
            return False
    return True


_GROUP = {"+": ("+", "-"), "-": ("+", "-"), "*": ("*", "/"), "/": ("*", "/")}


def _ok_binary(op: str, a: Expr, b: Expr, grammar: GrammarSet) -> bool:
    if not (a.has_feature or b.has_feature):
        return False
    if a.n_free + b.n_free > grammar.max_constants:
        return False
    if op in ("+", "-", "*", "/"):
        for child in (a, b):
            if isinstance(child, Unary) and (
                child.op == "negate" or (child.op == "inverse" and op in ("*", "/"))
            ):
                return False
        if op in ("-", "/") and isinstance(b, Const):
            return False
        if a.n_free == 0 and b.n_free == 0 and a.shape == b.shape:
            if op in ("-", "/"):
                return False
            if op == "*" and "square" in grammar.unary:
                return False
        group = _GROUP[op]
        for c, other in ((a, b), (b, a)):
            if isinstance(c, Const) and isinstance(other, Binary) and other.op in group and _const_child(other):
                return False
    return True


def max_nodes_for(grammar: GrammarSet, arity: int, max_bits: float | None) -> int:
    """Largest node count whose structural bits fit in ``max_bits``."""
    limits = []
    if max_bits is not None:
        limits.append(int(math.floor(max_bits / grammar.bits_per_node(arity) + 1e-9)))
    if grammar.max_nodes is not None:
        limits.append(grammar.max_nodes)
    if not limits:
        raise ValueError("need max_bits or grammar.max_nodes to bound the enumeration")
    return max(0, min(limits))


def _levels(grammar: GrammarSet, arity: int, max_nodes: int) -> Iterator[list[Expr]]:
    levels: list[list[Expr]] = [[]]
    leaves: list[Expr] = [Feature(i) for i in range(arity)]
    if grammar.max_constants > 0:
        leaves.insert(0, Const(0))
    for n in range(1, max_nodes + 1):
        if n == 1:
            level = list(leaves)
        else:
            level = []
            for op in grammar.unary:
                level.extend(Unary(op, a) for a in levels[n - 1] if _ok_unary(op, a))
            for op in grammar.binary:
                commutative = op in ("+", "*")
                for i in range(1, n - 1):
                    j = n - 1 - i
                    if commutative and i > j:
                        continue
                    left, right = levels[i], levels[j]
                    for p, a in enumerate(left):
                        start = p if (commutative and i == j) else 0
                        for b in right[start:]:
                            if _ok_binary(op, a, b, grammar):
                                level.append(Binary(op, a, b))
        level.sort(key=lambda e: e.shape)
        levels.append(level)
        yield level


def enumerate_candidates(
    grammar: GrammarSet,
    arity: int,
    max_bits: float | None = None,
    max_nodes: int | None = None,
) -> Iterator[Expr]:
    """Yield canonical shapes with constant slots numbered in pre-order.

    Ordered by node count, then by shape text; deterministic and exhaustive
    up to the structural budget.
    """
    if arity not in (1, 2):
        raise ValueError("arity must be 1 or 2")
    limit = max_nodes_for(grammar, arity, max_bits) if max_nodes is None else max_nodes
    for level in _levels(grammar, arity, limit):
        for shape in level:
            yield distinct_slots(shape) if shape.n_free > 1 else shape
