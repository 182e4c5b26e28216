"""Brute-force search: enumerate, fit, snap, score, keep the Pareto front."""

from __future__ import annotations

import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

import numpy as np

from keplersr.bias import BiasConfig
from keplersr.dataset import FeatureMatrix
from keplersr.expr import (
    Expr,
    GrammarSet,
    complexity,
    evaluate,
    full_grammar,
    n_constants,
    restricted_grammar,
    snap_constants,
    to_text,
)
from keplersr.fitters import DEFAULT_RESTARTS, fit_constants, fit_polynomial
from keplersr.search.enumeration import enumerate_candidates
from keplersr.search.pareto import ParetoFront, ScoredExpr
from keplersr.search.scoring import DEFAULT_PRECISION, dl_loss

STATUSES = ("complete", "budget_exhausted", "timeout")
POLY_DEGREES = (0, 1, 2, 3)
_CHUNK = 64


@dataclass(frozen=True)
class SearchBudget:
    """Limits on one search.

    ``max_bits`` bounds the structural complexity of enumerated shapes;
    the fixed charge per fitted constant is not counted against it.
    ``max_candidates`` counts enumerated shapes. ``None`` disables a limit,
    though at least one of ``max_bits`` and the grammar's node limit must be
    set.
    """

    max_bits: float | None = 40.0
    max_candidates: int | None = 200_000
    max_seconds: float | None = 600.0


@dataclass
class SearchResult:
    front: ParetoFront
    status: str
    n_candidates: int
    n_scored: int
    elapsed: float
    grammar: GrammarSet
    audit: list[dict] = field(default_factory=list)

    @property
    def deterministic(self) -> bool:
        """False when the run was cut short by wall-clock time."""
        return self.status != "timeout"


def grammar_for(bias: BiasConfig) -> GrammarSet:
    return restricted_grammar() if bias.inductive else full_grammar()


def _json_float(v: float) -> float | None:
    return v if math.isfinite(v) else None


def audit_record(s: ScoredExpr, accepted: bool) -> dict:
    return {
        "expr": s.text,
        "bits": s.complexity,
        "mse": _json_float(s.mse),
        "dl": _json_float(s.dl),
        "accepted": accepted,
    }


def write_audit(records: Iterable[dict], stream: IO[str]) -> None:
    """Write audit records as JSON lines."""
    for rec in records:
        stream.write(json.dumps(rec, sort_keys=True) + "\n")


@np.errstate(all="ignore")
def score(
    expr: Expr,
    constants: tuple[float, ...],
    X: np.ndarray,
    y: np.ndarray,
    bits: float,
    precision_eps: float = DEFAULT_PRECISION,
) -> ScoredExpr:
    """Score fixed constants; any undefined prediction gives infinite losses."""
    pred = evaluate(expr, constants, X)
    if np.all(np.isfinite(pred)):
        mse = float(np.mean((pred - y) ** 2))
    else:
        mse = math.inf
    return ScoredExpr(expr, tuple(constants), bits, mse, dl_loss(pred, y, precision_eps))


@dataclass(frozen=True)
class _Scorer:
    X: np.ndarray
    y: np.ndarray
    grammar: GrammarSet
    arity: int
    restarts: int
    seed: int
    precision_eps: float

    def _score(self, expr: Expr, constants) -> ScoredExpr:
        bits = complexity(expr, self.grammar, self.arity)
        return score(expr, tuple(constants), self.X, self.y, bits, self.precision_eps)

    def fitted(self, expr: Expr, constants: tuple[float, ...]) -> list[ScoredExpr]:
        """The fitted candidate, followed by its rational-snapped variant if any."""
        out = [self._score(expr, constants)]
        if not constants or not math.isfinite(out[0].mse):
            return out
        snapped, rest, k = snap_constants(expr, constants)
        if k == 0:
            return out
        if rest:
            rest = fit_constants(snapped, self.X, self.y, restarts=0, seed=self.seed, init=rest).constants
        out.append(self._score(snapped, rest))
        return out

    def __call__(self, expr: Expr) -> list[ScoredExpr]:
        if n_constants(expr) == 0:
            return self.fitted(expr, ())
        fit = fit_constants(expr, self.X, self.y, restarts=self.restarts, seed=self.seed)
        return self.fitted(expr, fit.constants)

    def chunk(self, exprs: list[Expr]) -> list[list[ScoredExpr]]:
        return [self(e) for e in exprs]


def _chunks(stream: Iterator[Expr], size: int) -> Iterator[list[Expr]]:
    while True:
        block = list(itertools.islice(stream, size))
        if not block:
            return
        yield block


def run_search(
    data: FeatureMatrix,
    bias: BiasConfig,
    budget: SearchBudget | None = None,
    *,
    grammar: GrammarSet | None = None,
    loss_key: str = "dl",
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    precision_eps: float = DEFAULT_PRECISION,
    workers: int = 1,
    poly_seeds: bool = True,
    keep_audit: bool = True,
    check_invariants: bool = False,
) -> SearchResult:
    """Enumerate shapes, fit and score them, and keep the nondominated set.

    Polynomial least-squares fits of degrees 0 to 3 are scored first when
    the grammar has ``+``, ``*`` and constants. Fitting may run on
    ``workers`` threads, but results are merged strictly in stream order,
    so the front does not depend on the number of workers.
    """
    budget = budget or SearchBudget()
    expected = 2 if bias.observational else 1
    if data.arity != expected:
        raise ValueError(f"bias expects {expected} feature(s), data has {data.arity}")
    grammar = grammar or grammar_for(bias)
    X, y = np.asarray(data.X, dtype=float), np.asarray(data.y, dtype=float)
    scorer = _Scorer(X, y, grammar, data.arity, restarts, seed, precision_eps)
    front = ParetoFront(loss_key)
    audit: list[dict] = []
    n_scored = 0
    t0 = time.perf_counter()

    def merge(items: list[ScoredExpr]) -> None:
        nonlocal n_scored
        for s in items:
            s = ScoredExpr(s.expr, s.constants, s.complexity, s.mse, s.dl, n_scored)
            n_scored += 1
            accepted = front.insert(s)
            if check_invariants:
                front.check()
            if keep_audit:
                audit.append(audit_record(s, accepted))

    if poly_seeds and grammar.uses("+") and grammar.uses("*") and grammar.max_constants > 0:
        for degree in POLY_DEGREES:
            pf = fit_polynomial(X, y, degree)
            merge(scorer.fitted(pf.expr, pf.result.constants))

    stream = enumerate_candidates(grammar, data.arity, max_bits=budget.max_bits)
    limited = stream if budget.max_candidates is None else itertools.islice(stream, budget.max_candidates)
    status = "complete"
    n_candidates = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        blocks = _chunks(limited, _CHUNK * max(1, workers))
        for block in blocks:
            if budget.max_seconds is not None and time.perf_counter() - t0 > budget.max_seconds:
                status = "timeout"
                break
            if pool is None:
                results = scorer.chunk(block)
            else:
                parts = [block[i:i + _CHUNK] for i in range(0, len(block), _CHUNK)]
                results = [r for part in pool.map(scorer.chunk, parts) for r in part]
            for items in results:
                merge(items)
            n_candidates += len(block)
    finally:
        if pool is not None:
            pool.shutdown()
    if status == "complete" and budget.max_candidates is not None and n_candidates >= budget.max_candidates:
        # the stream was cut unless it happens to end exactly here
        if next(stream, None) is not None:
            status = "budget_exhausted"
    return SearchResult(front, status, n_candidates, n_scored, time.perf_counter() - t0, grammar, audit)
