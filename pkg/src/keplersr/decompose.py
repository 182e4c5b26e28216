"""Additive and multiplicative separability of two-feature problems.

A smooth surrogate of the data is probed on a grid; for a separable
function the mixed second difference of f (additive) or of log|f|
(multiplicative) vanishes on every grid cell. A separable problem is split
into two one-feature problems whose solutions are recombined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from keplersr.bias import BiasConfig
from keplersr.dataset import FeatureMatrix
from keplersr.errors import BudgetExhausted, InsufficientData, SurrogateFailure
from keplersr.expr import Binary, Const, Expr, Feature, Unary, complexity, full_grammar
from keplersr.fitters import fit_constants
from keplersr.search.engine import SearchBudget, run_search, score
from keplersr.search.pareto import ScoredExpr

KINDS = ("none", "additive", "multiplicative")
DEFAULT_THRESHOLD = 1e-3
MIN_SAMPLES = 30
_PROBE_LEVELS = 9
_NEIGHBOURS = 8
_CORNER_TOL = 0.5
_FLAT_RATIO = 0.05


@dataclass(frozen=True, eq=False)
class SeparabilityReport:
    """Outcome of a separability test.

    ``score`` is the violation of the reported kind, or the smaller of the
    two violations when ``kind`` is none (``inf`` if nothing was probed).
    ``split`` holds the two one-feature sub-datasets when ``kind`` is not
    none; the second one is expressed in its own feature, renamed x0.
    """

    kind: str
    score: float
    additive_score: float
    multiplicative_score: float
    n_probes: int
    threshold: float
    split: tuple[FeatureMatrix, FeatureMatrix] | None = None
    reason: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.kind != "none" and (self.split is None or not self.score < self.threshold):
            raise ValueError("a separable report needs a split and a score below threshold")

    def to_dict(self) -> dict:
        def num(v: float):
            return v if math.isfinite(v) else None

        return {
            "kind": self.kind,
            "score": num(self.score),
            "additive_score": num(self.additive_score),
            "multiplicative_score": num(self.multiplicative_score),
            "n_probes": self.n_probes,
            "threshold": self.threshold,
            "reason": self.reason,
        }


class IDWSurrogate:
    """Inverse-distance-weighted interpolation over the k nearest samples.

    Exact at sample points. Coordinates are scaled per feature by their
    spread so both axes count equally.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, k: int = _NEIGHBOURS, power: float = 2.0):
        self.scale = np.where(np.ptp(X, axis=0) > 0, np.ptp(X, axis=0), 1.0)
        self.tree = cKDTree(X / self.scale)
        self.y = np.asarray(y, dtype=float)
        self.k = min(k, len(self.y))
        self.power = power

    def distance(self, Q: np.ndarray) -> np.ndarray:
        """Scaled distance from each query point to its nearest sample."""
        return self.tree.query(np.atleast_2d(Q) / self.scale, k=1)[0]

    def __call__(self, Q: np.ndarray) -> np.ndarray:
        d, idx = self.tree.query(np.atleast_2d(Q) / self.scale, k=self.k)
        d = d.reshape(len(d), -1)
        idx = idx.reshape(len(idx), -1)
        exact = d[:, 0] == 0.0
        with np.errstate(divide="ignore"):
            w = 1.0 / d ** self.power
        w[exact] = 0.0
        w[exact, 0] = 1.0
        return np.sum(w * self.y[idx], axis=1) / np.sum(w, axis=1)


def _is_flat(X: np.ndarray, k: int = _NEIGHBOURS) -> bool:
    """True when local neighbourhoods are essentially one-dimensional."""
    Xs = X / np.where(np.ptp(X, axis=0) > 0, np.ptp(X, axis=0), 1.0)
    _, idx = cKDTree(Xs).query(Xs, k=min(k, len(Xs)))
    ratios = []
    for nb in idx:
        P = Xs[nb] - Xs[nb].mean(axis=0)
        sv = np.linalg.svd(P, compute_uv=False)
        ratios.append(sv[1] / sv[0] if sv[0] > 0 else 0.0)
    return float(np.median(ratios)) < _FLAT_RATIO


def probe_grid(X: np.ndarray, levels: int = _PROBE_LEVELS) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature probe coordinates taken at observed values (marginal quantiles)."""
    q = np.linspace(0.05, 0.95, levels)
    g0 = np.unique(np.quantile(X[:, 0], q, method="nearest"))
    g1 = np.unique(np.quantile(X[:, 1], q, method="nearest"))
    return g0, g1


def _mixed_differences(F: np.ndarray, valid: np.ndarray) -> np.ndarray:
    d = F[1:, 1:] - F[1:, :-1] - F[:-1, 1:] + F[:-1, :-1]
    return np.abs(d[valid])


def _probe(data: FeatureMatrix, surrogate: IDWSurrogate):
    X = data.X
    if _is_flat(X):
        raise SurrogateFailure("samples lie on a one-dimensional curve; no interior probes")
    g0, g1 = probe_grid(X)
    if len(g0) < 2 or len(g1) < 2:
        raise SurrogateFailure("a feature takes a single value; no probe cells")
    G0, G1 = np.meshgrid(g0, g1, indexing="ij")
    pts = np.column_stack([G0.ravel(), G1.ravel()])
    side = min(np.min(np.diff(g0)) / surrogate.scale[0], np.min(np.diff(g1)) / surrogate.scale[1])
    near = (surrogate.distance(pts) <= _CORNER_TOL * side).reshape(G0.shape)
    valid = near[1:, 1:] & near[1:, :-1] & near[:-1, 1:] & near[:-1, :-1]
    if not valid.any():
        raise SurrogateFailure("no probe cell lies inside the sampled region")
    F = surrogate(pts).reshape(G0.shape)
    return g0, g1, F, valid


def test_separability(data: FeatureMatrix, threshold: float = DEFAULT_THRESHOLD) -> SeparabilityReport:
    """Check whether f(x0, x1) splits as g(x0) + h(x1) or g(x0) * h(x1).

    The additive score is the largest mixed second difference of the
    surrogate over probe cells inside the sampled region, divided by the
    output range. The multiplicative score is the same on log|f|, over
    cells whose corners all keep |f| away from zero. Data on
    a one-dimensional curve has no interior cells and reports none.
    """
    if data.arity != 2:
        raise ValueError("separability needs exactly two features")
    if len(data) < MIN_SAMPLES:
        raise InsufficientData(f"need at least {MIN_SAMPLES} samples, got {len(data)}")
    X = np.asarray(data.X, dtype=float)
    y = np.asarray(data.y, dtype=float)
    surrogate = IDWSurrogate(X, y)
    try:
        g0, g1, F, valid = _probe(data, surrogate)
    except SurrogateFailure as exc:
        return SeparabilityReport("none", math.inf, math.inf, math.inf, 0, threshold, None, str(exc))

    scale = float(np.ptp(y)) or float(np.max(np.abs(y))) or 1.0
    add = float(np.max(_mixed_differences(F, valid))) / scale
    mult = math.inf
    away = np.abs(F) > 1e-3 * float(np.max(np.abs(y)))
    mvalid = valid & away[1:, 1:] & away[1:, :-1] & away[:-1, 1:] & away[:-1, :-1]
    if mvalid.any():
        with np.errstate(divide="ignore"):
            mult = float(np.max(_mixed_differences(np.log(np.abs(F)), mvalid)))
    n_probes = int(valid.sum())

    if add < threshold:
        kind, best = "additive", add
    elif mult < threshold:
        kind, best = "multiplicative", mult
    else:
        return SeparabilityReport("none", min(add, mult), add, mult, n_probes, threshold)
    split = _split(data, surrogate, kind, g0, g1)
    return SeparabilityReport(kind, best, add, mult, n_probes, threshold, split)


def _split(data: FeatureMatrix, surrogate: IDWSurrogate, kind: str, g0, g1) -> tuple[FeatureMatrix, FeatureMatrix]:
    X = data.X
    ref0 = float(g0[len(g0) // 2])
    ref1 = float(g1[len(g1) // 2])
    u0 = np.unique(X[:, 0])
    u1 = np.unique(X[:, 1])
    g = surrogate(np.column_stack([u0, np.full_like(u0, ref1)]))
    h = surrogate(np.column_stack([np.full_like(u1, ref0), u1]))
    base = float(surrogate(np.array([[ref0, ref1]]))[0])
    h = h - base if kind == "additive" else h / base
    first = FeatureMatrix((data.names[0],), u0[:, None], g)
    second = FeatureMatrix((data.names[1],), u1[:, None], h)
    return first, second


# --------------------------------------------------------------------------
# Recursive split


@dataclass(frozen=True)
class SplitResult:
    """Composed model, scored as composed and after a joint refit."""

    expr: Expr
    constants: tuple[float, ...]
    mse: float
    dl: float
    joint_constants: tuple[float, ...]
    joint_mse: float
    parts: tuple[ScoredExpr, ScoredExpr]


Solver = Callable[[FeatureMatrix], ScoredExpr]


def search_solver(budget: SearchBudget | None = None, inductive: bool = False, **kw) -> Solver:
    """One-feature solver backed by run_search; returns the lowest-loss front member."""

    def solve(sub: FeatureMatrix) -> ScoredExpr:
        result = run_search(sub, BiasConfig(False, inductive), budget, keep_audit=False, **kw)
        best = result.front.best()
        if best is None:
            raise BudgetExhausted("sub-search ended with an empty front")
        return best

    return solve


def _shift(node: Expr, feature: int, offset: int) -> Expr:
    if isinstance(node, Feature):
        return Feature(feature)
    if isinstance(node, Const):
        return Const(node.slot + offset)
    if isinstance(node, Unary):
        return Unary(node.op, _shift(node.child, feature, offset))
    if isinstance(node, Binary):
        return Binary(node.op, _shift(node.left, feature, offset), _shift(node.right, feature, offset))
    return node


def compose(kind: str, first: ScoredExpr, second: ScoredExpr) -> tuple[Expr, tuple[float, ...]]:
    """Join a model of x0 and a model of x1 (written in x0) with + or *."""
    op = {"additive": "+", "multiplicative": "*"}[kind]
    left = _shift(first.expr, 0, 0)
    right = _shift(second.expr, 1, len(first.constants))
    return Binary(op, left, right), tuple(first.constants) + tuple(second.constants)


def recurse_split(report: SeparabilityReport, solver: Solver, data: FeatureMatrix) -> SplitResult:
    """Solve both halves of a split and rescore the composition on ``data``.

    Callers only invoke this for separable reports. Sub-solver failures,
    including BudgetExhausted, propagate.
    """
    if report.kind == "none" or report.split is None:
        raise ValueError("report is not separable")
    first, second = (solver(part) for part in report.split)
    expr, consts = compose(report.kind, first, second)
    X, y = np.asarray(data.X, dtype=float), np.asarray(data.y, dtype=float)
    composed = score(expr, consts, X, y, 0.0)
    if consts:
        joint = fit_constants(expr, X, y, restarts=0, init=consts)
        joint_consts, joint_mse = joint.constants, joint.mse
        if not joint_mse <= composed.mse:
            joint_consts, joint_mse = consts, composed.mse
    else:
        joint_consts, joint_mse = consts, composed.mse
    return SplitResult(expr, consts, composed.mse, composed.dl, tuple(joint_consts), joint_mse, (first, second))


def as_scored(result: SplitResult, data: FeatureMatrix, grammar=None, use_joint: bool = True) -> ScoredExpr:
    """Front-ready candidate from a split, scored on the original data."""
    grammar = grammar or full_grammar()
    consts = result.joint_constants if use_joint else result.constants
    bits = complexity(result.expr, grammar, data.arity)
    return score(result.expr, consts, np.asarray(data.X, float), np.asarray(data.y, float), bits)
