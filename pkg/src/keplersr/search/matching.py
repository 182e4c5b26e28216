"""Family-level comparison of expressions, constants treated as wildcards.

Two expressions match when they normalize to the same shape after
rewriting subtraction and division as sums and products, collapsing every
feature-free subtree to a wildcard ``K``, and absorbing wildcard scales
that a refit can always reproduce. In particular ``c0/(1 + c1*cos(x))``,
``1/(c0 - c1*cos(x))`` and ``c0/(c1 + cos(x))`` all land in one family.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from keplersr.expr import Binary, Expr, Feature, Literal, Unary, evaluate, parse

K = ("K",)

_TEMPLATE_TEXT = "c0/(1 + c1*cos(x0))"


def _product(factors: list) -> tuple:
    flat = []
    for f in factors:
        flat.extend(f[1] if f[0] == "*" else [f])
    has_k = any(f == K for f in flat)
    rest = [f for f in flat if f != K]
    if not rest:
        return K
    if has_k and any(_scalable(f) for f in rest):
        has_k = False
    if len(rest) == 1 and not has_k:
        return rest[0]
    if has_k:
        rest.append(K)
    return ("*", tuple(sorted(rest, key=repr)))


def _sum(terms: list) -> tuple:
    flat = []
    for t in terms:
        flat.extend(t[1] if t[0] == "+" else [t])
    has_k = any(t == K for t in flat)
    scaled = sorted({_product([t, K]) for t in flat if t != K}, key=repr)
    if not scaled:
        return K
    if has_k:
        scaled.append(K)
    if len(scaled) == 1:
        return scaled[0]
    return ("+", tuple(sorted(scaled, key=repr)))


def _scalable(node: tuple) -> bool:
    """Whether a constant factor on ``node`` can be absorbed by its own constants."""
    if node == K:
        return True
    if node[0] == "*":
        return K in node[1]
    if node[0] == "+":
        return all(_scalable(t) for t in node[1])
    if node[0] == "inverse":
        return _scalable(node[1])
    return False


def _norm(node: Expr) -> tuple:
    if not node.has_feature:
        return K
    if isinstance(node, Feature):
        return ("x", node.index)
    if isinstance(node, Unary):
        a = _norm(node.child)
        if node.op == "negate":
            return _product([a, K])
        if node.op == "inverse":
            if a[0] == "inverse":
                return a[1]
            if a[0] == "*":
                return _product([_inv(f) for f in a[1]])
            return ("inverse", a)
        return (node.op, a)
    a, b = _norm(node.left), _norm(node.right)
    if node.op == "+":
        return _sum([a, b])
    if node.op == "-":
        return _sum([a, _product([b, K])])
    if node.op == "*":
        return _product([a, b])
    if node.op == "/":
        return _product([a, _inv(b)])
    if isinstance(node.right, Literal) and node.right.value == -1.0:
        return _inv(a)
    return ("pow", a, b)


def _inv(a: tuple) -> tuple:
    if a == K:
        return K
    if a[0] == "inverse":
        return a[1]
    return ("inverse", a)


def family_key(expr: Expr) -> tuple:
    """Hashable normal form of ``expr`` with constants as wildcards."""
    return _norm(expr)


def structural_match(expr: Expr, template: Expr) -> bool:
    """True when both expressions normalize to the same wildcard family."""
    return family_key(expr) == family_key(template)


def orbit_template() -> Expr:
    """The conic family ``c0/(1 + c1*cos(x0))`` in the true anomaly."""
    return parse(_TEMPLATE_TEXT)[0]


def lift_to_angle(expr: Expr, observational: bool) -> Expr:
    """Rewrite an expression in terms of the angle feature x0.

    With observational bias the features are (cos, sin) of the angle, so
    x0 becomes cos(x0) and x1 becomes sin(x0). Without it the expression
    is already in the angle.
    """
    if not observational:
        return expr
    return _replace_features(expr, {0: Unary("cos", Feature(0)), 1: Unary("sin", Feature(0))})


def _replace_features(node: Expr, repl: dict[int, Expr]) -> Expr:
    if isinstance(node, Feature):
        return repl.get(node.index, node)
    if isinstance(node, Unary):
        return Unary(node.op, _replace_features(node.child, repl))
    if isinstance(node, Binary):
        return Binary(node.op, _replace_features(node.left, repl), _replace_features(node.right, repl))
    return node


def matches_orbit(expr: Expr, observational: bool) -> bool:
    """Whether a found expression belongs to the conic family in the angle."""
    return structural_match(lift_to_angle(expr, observational), orbit_template())


def conic_parameters(expr: Expr, constants: Sequence[float], observational: bool) -> tuple[float, float] | None:
    """Semi-latus rectum and signed eccentricity implied by a conic-family fit.

    A conic r = p/(1 + e cos t) has 1/r(0) = (1 + e)/p and 1/r(pi) = (1 - e)/p,
    so both follow from the model evaluated at t = 0 and t = pi. Returns
    ``None`` when the model is undefined there or the result is not a conic.
    """
    lifted = lift_to_angle(expr, observational)
    t = np.array([[0.0], [math.pi]])
    r0, rpi = evaluate(lifted, constants, t)
    if not (np.isfinite(r0) and np.isfinite(rpi)) or r0 == 0 or rpi == 0:
        return None
    u0, upi = 1.0 / r0, 1.0 / rpi
    if u0 + upi == 0:
        return None
    return float(2.0 / (u0 + upi)), float((u0 - upi) / (u0 + upi))
