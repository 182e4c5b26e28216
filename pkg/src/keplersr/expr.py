"""Expression trees: representation, evaluation, complexity, canonical form.

Trees are immutable. Leaves are input features ``x0, x1, ...``, free constant
slots (fitted later) and fixed literals (produced by rational snapping).
Interior nodes apply a named unary or binary operator.

Evaluation never raises on bad numeric domains. Points where any subtree is
undefined (log of a non-positive value, arccos outside [-1, 1], division by
zero, non-finite intermediate results) come back as ``nan`` at the root.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from keplersr.errors import ArityMismatch, ParseError

#: Code length charged for every free (fitted) constant, in bits.
C_CONST = 30.0

UNARY_OPS: dict[str, callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "arcsin": np.arcsin,
    "arccos": np.arccos,
    "arctan": np.arctan,
    "sqrt": np.sqrt,
    "square": np.square,
    "cube": lambda a: a * a * a,
    "inverse": lambda a: 1.0 / a,
    "negate": np.negative,
    "exp": np.exp,
    "log": np.log,
}

BINARY_OPS: dict[str, callable] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "pow": np.power,
}

COMMUTATIVE = frozenset({"+", "*"})


# --------------------------------------------------------------------------
# Nodes


@dataclass(frozen=True, eq=False)
class Expr:
    """Base node. ``shape`` is a text key that ignores constant slot numbers."""

    shape: str = field(init=False, repr=False)
    size: int = field(init=False, repr=False)
    n_free: int = field(init=False, repr=False)
    has_feature: bool = field(init=False, repr=False)

    def _set(self, shape: str, size: int, n_free: int, has_feature: bool) -> None:
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "n_free", n_free)
        object.__setattr__(self, "has_feature", has_feature)

    def _ident(self) -> tuple:
        raise NotImplementedError

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Expr) and self._ident() == other._ident()

    def __hash__(self) -> int:
        return hash(self._ident())

    def __str__(self) -> str:
        return to_text(self, None)

    def walk(self) -> Iterator[Expr]:
        """Pre-order traversal."""
        yield self


@dataclass(frozen=True, eq=False)
class Feature(Expr):
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("feature index must be non-negative")
        self._set(f"x{self.index}", 1, 0, True)

    def _ident(self):
        return ("x", self.index)


@dataclass(frozen=True, eq=False)
class Const(Expr):
    """Free constant; its value is supplied at evaluation time."""

    slot: int = 0

    def __post_init__(self):
        self._set("c", 1, 1, False)

    def _ident(self):
        return ("c", self.slot)


@dataclass(frozen=True, eq=False)
class Literal(Expr):
    """Fixed number baked into the tree. ``ratio`` keeps a snapped p/q."""

    value: float
    ratio: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        label = f"{self.ratio[0]}/{self.ratio[1]}" if self.ratio else repr(self.value)
        self._set(f"#{label}", 1, 0, False)

    def _ident(self):
        return ("#", self.value)


@dataclass(frozen=True, eq=False)
class Unary(Expr):
    op: str
    child: Expr

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary op {self.op!r}")
        c = self.child
        self._set(f"{self.op}({c.shape})", c.size + 1, c.n_free, c.has_feature)

    def _ident(self):
        return ("u", self.op, self.child._ident())

    def walk(self):
        yield self
        yield from self.child.walk()


@dataclass(frozen=True, eq=False)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary op {self.op!r}")
        a, b = self.left, self.right
        self._set(
            f"{self.op}({a.shape},{b.shape})",
            a.size + b.size + 1,
            a.n_free + b.n_free,
            a.has_feature or b.has_feature,
        )

    def _ident(self):
        return ("b", self.op, self.left._ident(), self.right._ident())

    def walk(self):
        yield self
        yield from self.left.walk()
        yield from self.right.walk()


# --------------------------------------------------------------------------
# Grammar


FULL_UNARY = (
    "sin", "cos", "tan", "arcsin", "arccos", "arctan",
    "sqrt", "square", "cube", "inverse", "negate", "exp", "log",
)
FULL_BINARY = ("+", "-", "*", "/", "pow")
NON_PHYSICAL = frozenset({"exp", "log"})


@dataclass(frozen=True)
class GrammarSet:
    """Operators a search may use.

    ``coding_ops`` fixes how many operator symbols the complexity code
    assumes; by default it is the number of operators actually allowed.
    A restricted grammar keeps the coding alphabet of the grammar it was
    restricted from, so restriction only removes candidates and never
    changes the price of the ones that remain.
    """

    unary: tuple[str, ...] = FULL_UNARY
    binary: tuple[str, ...] = FULL_BINARY
    max_constants: int = 3
    max_nodes: int | None = None
    coding_ops: int | None = None

    def __post_init__(self):
        for op in self.unary:
            if op not in UNARY_OPS:
                raise ValueError(f"unknown unary op {op!r}")
        for op in self.binary:
            if op not in BINARY_OPS:
                raise ValueError(f"unknown binary op {op!r}")

    def n_symbols(self, arity: int) -> int:
        ops = self.coding_ops if self.coding_ops is not None else len(self.unary) + len(self.binary)
        return ops + arity + (1 if self.max_constants > 0 else 0)

    def bits_per_node(self, arity: int) -> float:
        return math.log2(max(self.n_symbols(arity), 2))

    def uses(self, op: str) -> bool:
        return op in self.unary or op in self.binary


def full_grammar() -> GrammarSet:
    return GrammarSet()


def restricted_grammar() -> GrammarSet:
    """Full grammar minus exp and log (the inductive-bias grammar)."""
    full = full_grammar()
    return GrammarSet(
        unary=tuple(op for op in full.unary if op not in NON_PHYSICAL),
        binary=full.binary,
        max_constants=full.max_constants,
        coding_ops=len(full.unary) + len(full.binary),
    )


# --------------------------------------------------------------------------
# Structure queries


def feature_indices(expr: Expr) -> set[int]:
    return {n.index for n in expr.walk() if isinstance(n, Feature)}


def constant_slots(expr: Expr) -> list[int]:
    """Distinct slot indices in first-occurrence pre-order."""
    seen: dict[int, None] = {}
    for n in expr.walk():
        if isinstance(n, Const):
            seen.setdefault(n.slot, None)
    return list(seen)


def n_constants(expr: Expr) -> int:
    """Number of constant values an evaluation needs (max slot + 1)."""
    slots = constant_slots(expr)
    return max(slots) + 1 if slots else 0


def uses_op(expr: Expr, op: str) -> bool:
    return any(isinstance(n, (Unary, Binary)) and n.op == op for n in expr.walk())


def complexity(expr: Expr, grammar: GrammarSet, arity: int) -> float:
    """Description length of the tree in bits.

    ``n_nodes * log2(n_symbols) + C_CONST * n_free_constants``.
    """
    return expr.size * grammar.bits_per_node(arity) + C_CONST * expr.n_free


def structural_bits(expr: Expr, grammar: GrammarSet, arity: int) -> float:
    """Complexity without the per-constant charge."""
    return expr.size * grammar.bits_per_node(arity)


# --------------------------------------------------------------------------
# Evaluation


def _finite(out):
    if np.isscalar(out) or np.ndim(out) == 0:
        return out if np.isfinite(out) else np.nan
    return np.where(np.isfinite(out), out, np.nan)


def _ev(node: Expr, C, X):
    if isinstance(node, Feature):
        return X[:, node.index]
    if isinstance(node, Const):
        return C[node.slot]
    if isinstance(node, Literal):
        return np.float64(node.value)
    if isinstance(node, Unary):
        return _finite(UNARY_OPS[node.op](_ev(node.child, C, X)))
    a = _ev(node.left, C, X)
    b = _ev(node.right, C, X)
    out = _finite(BINARY_OPS[node.op](a, b))
    if node.op == "pow":
        # power(nan, 0) and power(1, nan) are 1.0 in IEEE; failures must stick.
        out = out + 0.0 * a + 0.0 * b
    return out


def evaluate(expr: Expr, constants: Sequence[float] | np.ndarray, features: np.ndarray) -> np.ndarray:
    """Evaluate ``expr`` row-wise over ``features`` (shape ``(n, d)``).

    ``constants`` has one entry per slot. A 2-D ``constants`` array of shape
    ``(k, m)`` evaluates ``m`` constant vectors at once and returns ``(m, n)``.
    Undefined points are ``nan``.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ArityMismatch("features must be a 2-D (n, d) array")
    feats = feature_indices(expr)
    if feats and max(feats) >= X.shape[1]:
        raise ArityMismatch(f"expression uses x{max(feats)} but only {X.shape[1]} feature columns given")
    C = np.asarray(constants, dtype=float)
    k = n_constants(expr)
    if (C.shape[0] if C.ndim >= 1 else 0) != k:
        raise ArityMismatch(f"expression has {k} constant slots, got {C.shape[0] if C.ndim else 0} values")
    n = X.shape[0]
    if C.ndim == 2:
        Cb = C[:, :, None]
        shape = (C.shape[1], n)
    else:
        Cb = C
        shape = (n,)
    with np.errstate(all="ignore"):
        out = _ev(expr, Cb, X)
    return np.array(np.broadcast_to(out, shape), dtype=float)


# --------------------------------------------------------------------------
# Canonical form


def _fold(node: Expr) -> Expr:
    """Fold literal-only subtrees and sort commutative operands."""
    if isinstance(node, Unary):
        child = _fold(node.child)
        if isinstance(child, Literal):
            with np.errstate(all="ignore"):
                v = float(UNARY_OPS[node.op](np.float64(child.value)))
            if math.isfinite(v):
                return Literal(v)
        return node if child is node.child else Unary(node.op, child)
    if isinstance(node, Binary):
        a, b = _fold(node.left), _fold(node.right)
        if isinstance(a, Literal) and isinstance(b, Literal):
            with np.errstate(all="ignore"):
                v = float(BINARY_OPS[node.op](np.float64(a.value), np.float64(b.value)))
            if math.isfinite(v):
                return Literal(v)
        if node.op in COMMUTATIVE and _order_key(b) < _order_key(a):
            a, b = b, a
        if a is node.left and b is node.right:
            return node
        return Binary(node.op, a, b)
    return node


def _order_key(node: Expr) -> tuple:
    return (node.size, node.shape)


def renumber(expr: Expr) -> tuple[Expr, list[int]]:
    """Renumber constant slots 0..k-1 in pre-order.

    Returns the new tree and, for each new slot, the old slot it came from.
    """
    mapping: dict[int, int] = {}

    def go(node):
        if isinstance(node, Const):
            if node.slot not in mapping:
                mapping[node.slot] = len(mapping)
            new = mapping[node.slot]
            return node if new == node.slot else Const(new)
        if isinstance(node, Unary):
            c = go(node.child)
            return node if c is node.child else Unary(node.op, c)
        if isinstance(node, Binary):
            a = go(node.left)
            b = go(node.right)
            return node if (a is node.left and b is node.right) else Binary(node.op, a, b)
        return node

    out = go(expr)
    order = sorted(mapping, key=mapping.get)
    return out, order


def distinct_slots(expr: Expr) -> Expr:
    """Give every constant leaf its own slot, numbered 0..k-1 in pre-order."""
    counter = iter(range(expr.n_free))

    def go(node: Expr) -> Expr:
        if isinstance(node, Const):
            return Const(next(counter))
        if isinstance(node, Unary):
            return Unary(node.op, go(node.child))
        if isinstance(node, Binary):
            return Binary(node.op, go(node.left), go(node.right))
        return node

    return go(expr)


def canonicalize_with_constants(expr: Expr, constants: Sequence[float]) -> tuple[Expr, tuple[float, ...]]:
    """Canonical tree plus the constants permuted to its slot numbering."""
    folded = _fold(expr)
    out, order = renumber(folded)
    consts = tuple(float(constants[i]) for i in order)
    return out, consts


def canonicalize(expr: Expr) -> Expr:
    """Canonical form: literal folding, sorted commutative operands,
    constant slots renumbered in pre-order. Idempotent."""
    return renumber(_fold(expr))[0]


# --------------------------------------------------------------------------
# Constant substitution and rational snapping


def substitute(expr: Expr, replace: dict[int, Expr]) -> Expr:
    """Replace constant slots by subtrees (typically literals)."""
    if isinstance(expr, Const):
        return replace.get(expr.slot, expr)
    if isinstance(expr, Unary):
        return Unary(expr.op, substitute(expr.child, replace))
    if isinstance(expr, Binary):
        return Binary(expr.op, substitute(expr.left, replace), substitute(expr.right, replace))
    return expr


def bind_constants(expr: Expr, constants: Sequence[float]) -> Expr:
    """Turn every free slot into a literal with its value."""
    return substitute(expr, {i: Literal(float(v)) for i, v in enumerate(constants)})


def snap_rational(value: float, max_num: int = 9, max_den: int = 9, rel_tol: float = 1e-4) -> tuple[int, int] | None:
    """Nearby small rational p/q (|p| <= max_num, q <= max_den), if any.

    Smallest denominator wins; zero is never snapped.
    """
    if not math.isfinite(value) or value == 0.0:
        return None
    for q in range(1, max_den + 1):
        p = round(value * q)
        if p == 0 or abs(p) > max_num:
            continue
        if Fraction(p, q).denominator != q:
            continue
        if abs(value - p / q) <= rel_tol * abs(value):
            return p, q
    return None


def snap_constants(expr: Expr, constants: Sequence[float], **kw) -> tuple[Expr, tuple[float, ...], int]:
    """Replace constants lying near small rationals by literals.

    Returns (new expr, remaining constants, number snapped).
    """
    replace: dict[int, Expr] = {}
    for i, v in enumerate(constants):
        r = snap_rational(float(v), **kw)
        if r is not None:
            replace[i] = Literal(r[0] / r[1], r)
    if not replace:
        return expr, tuple(float(c) for c in constants), 0
    out, order = renumber(substitute(expr, replace))
    return out, tuple(float(constants[i]) for i in order), len(replace)


# --------------------------------------------------------------------------
# Text format

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5

_FUNC_NAMES = {"sin", "cos", "tan", "arcsin", "arccos", "arctan", "sqrt", "exp", "log"}
_FUNC_ALIASES = {
    "asin": "arcsin", "acos": "arccos", "atan": "arctan", "ln": "log",
    "inv": "inverse", "inverse": "inverse", "neg": "negate", "negate": "negate",
    "square": "square", "cube": "cube",
}


def _num(v: float, sig: int | None) -> str:
    if sig is None:
        v = float(v)
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return f"{v:.{sig}g}"


def _wrap(t: tuple[str, int], min_prec: int) -> str:
    text, prec = t
    return text if prec >= min_prec else f"({text})"


def _render(node: Expr, C: Sequence[float] | None, sig: int | None) -> tuple[str, int]:
    if isinstance(node, Feature):
        return f"x{node.index}", _PREC_ATOM
    if isinstance(node, (Const, Literal)):
        if isinstance(node, Literal) and node.ratio is not None:
            p, q = node.ratio
            if q == 1:
                return (str(p), _PREC_ATOM) if p >= 0 else (str(p), _PREC_NEG)
            return f"({p}/{q})", _PREC_ATOM
        if isinstance(node, Const):
            if C is None:
                return f"c{node.slot}", _PREC_ATOM
            v = float(C[node.slot])
        else:
            v = node.value
        text = _num(v, sig)
        return text, (_PREC_NEG if text.startswith("-") else _PREC_ATOM)
    if isinstance(node, Unary):
        inner = _render(node.child, C, sig)
        op = node.op
        if op in _FUNC_NAMES:
            return f"{op}({inner[0]})", _PREC_ATOM
        if op == "negate":
            return "-" + _wrap(inner, _PREC_POW), _PREC_NEG
        if op == "inverse":
            return "1/" + _wrap(inner, _PREC_POW), _PREC_MUL
        if op == "square":
            return _wrap(inner, _PREC_ATOM) + "^2", _PREC_POW
        if op == "cube":
            return _wrap(inner, _PREC_ATOM) + "^3", _PREC_POW
        raise AssertionError(op)
    a = _render(node.left, C, sig)
    b = _render(node.right, C, sig)
    op = node.op
    if op == "+":
        if b[1] >= _PREC_MUL and b[0].startswith("-"):
            return f"{a[0]} - {b[0][1:]}", _PREC_ADD
        return f"{a[0]} + {_wrap(b, _PREC_MUL)}", _PREC_ADD
    if op == "-":
        return f"{a[0]} - {_wrap(b, _PREC_MUL)}", _PREC_ADD
    if op == "*":
        return f"{_wrap(a, _PREC_MUL)}*{_wrap(b, _PREC_NEG)}", _PREC_MUL
    if op == "/":
        return f"{_wrap(a, _PREC_MUL)}/{_wrap(b, _PREC_NEG)}", _PREC_MUL
    if op == "pow":
        return f"{_wrap(a, _PREC_ATOM)}^{_wrap(b, _PREC_ATOM)}", _PREC_POW
    raise AssertionError(op)


def to_text(expr: Expr, constants: Sequence[float] | None = None, sig: int | None = None) -> str:
    """Infix text. ``constants=None`` prints slots as ``c0, c1, ...``.

    ``sig`` limits constants to that many significant digits; the default
    prints full precision so that parsing the text reproduces the values.
    """
    return _render(expr, constants, sig)[0]


_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()×÷−])"
    r")"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN_RE.match(text, pos)
            if not m or m.end() == pos:
                bad = len(text) - len(text[pos:].lstrip())
                raise ParseError(f"unexpected character {text[bad]!r}", bad)
            kind = m.lastgroup
            val = m.group(kind)
            start = m.start(kind)
            if kind == "op":
                val = {"**": "^", "×": "*", "÷": "/", "−": "-"}.get(val, val)
            self.tokens.append((kind, val, start))
            pos = m.end()
        self.i = 0
        self.constants: list[float] = []

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, val):
        tok = self.take()
        if tok[1] != val:
            raise ParseError(f"expected {val!r}, found {tok[1] or 'end of input'!r}", tok[2])

    def const(self, value: float) -> Const:
        self.constants.append(float(value))
        return Const(len(self.constants) - 1)

    def parse(self) -> Expr:
        if not self.tokens:
            raise ParseError("empty expression", 0)
        e = self.sum()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected token {tok[1]!r}", tok[2])
        return e

    def sum(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            e = Binary(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            e = Binary(op, e, self.unary())
        return e

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            kind, val, _ = self.peek()
            if kind == "num":
                # a signed literal binds tighter than '^' only when no '^' follows
                save = self.i
                self.take()
                if self.peek()[1] != "^":
                    return self.const(-float(val))
                self.i = save
            return Unary("negate", self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Binary("pow", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return self.const(float(val))
        if kind == "name":
            m = re.fullmatch(r"x_?(\d+)", val)
            if m:
                return Feature(int(m.group(1)))
            if val == "pi":
                return self.const(math.pi)
            if re.fullmatch(r"c\d+", val):
                return self.const(math.nan)
            name = _FUNC_ALIASES.get(val, val)
            if name in _FUNC_NAMES or name in ("inverse", "negate", "square", "cube"):
                self.expect("(")
                inner = self.sum()
                self.expect(")")
                return Unary(name, inner)
            raise ParseError(f"unknown name {val!r}", pos)
        if val == "(":
            e = self.sum()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {val or 'end of input'!r}", pos)


def parse(text: str) -> tuple[Expr, tuple[float, ...]]:
    """Parse infix text; every numeric literal becomes a constant slot.

    Names ``c0``, ``c1``, ... are unvalued slots (value nan), for templates.
    """
    p = _Parser(text)
    expr = p.parse()
    return expr, tuple(p.constants)
