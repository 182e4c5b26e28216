from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import strategies as st

from keplersr.bias import BiasConfig
from keplersr.dataset import featurize, load_reference_table
from keplersr.expr import UNARY_OPS, Binary, Const, Feature, Literal, Unary, distinct_slots
from keplersr.search import SearchBudget, run_search

# Budget for the experiment runs shared by the search and acceptance tests:
# every shape of up to five nodes in both grammars.
EXPERIMENT_BITS = 24.0

_BINARY = ("+", "-", "*", "/", "pow")


def exprs(arity: int = 2, max_leaves: int = 8):
    """Random expression trees with distinct constant slots."""
    leaves = st.one_of(
        st.integers(0, arity - 1).map(Feature),
        st.just(Const(0)),
        st.sampled_from([0.5, 1.0, 2.0, -3.0, 0.25]).map(Literal),
    )

    def extend(children):
        return st.one_of(
            st.tuples(st.sampled_from(sorted(UNARY_OPS)), children).map(lambda t: Unary(*t)),
            st.tuples(st.sampled_from(_BINARY), children, children).map(lambda t: Binary(*t)),
        )

    return st.recursive(leaves, extend, max_leaves=max_leaves).map(distinct_slots)


def close_or_both_nan(a: np.ndarray, b: np.ndarray, rtol: float = 1e-12) -> bool:
    a, b = np.asarray(a, float), np.asarray(b, float)
    na, nb = np.isnan(a), np.isnan(b)
    if not np.array_equal(na, nb):
        return False
    ok = ~na
    return bool(np.all(np.abs(a[ok] - b[ok]) <= rtol * np.maximum(1.0, np.abs(b[ok]))))


@pytest.fixture(scope="session")
def table():
    return load_reference_table()


@pytest.fixture(scope="session")
def theta_features(table):
    return featurize(table, False)


@pytest.fixture(scope="session")
def trig_features(table):
    return featurize(table, True)


_RUNS: dict = {}


def experiment_run(experiment: int, max_bits: float = EXPERIMENT_BITS):
    """Full search on the reference table, cached for the session."""
    key = (experiment, max_bits)
    if key not in _RUNS:
        bias = BiasConfig.for_experiment(experiment)
        fm = featurize(load_reference_table(), bias)
        budget = SearchBudget(max_bits=max_bits, max_candidates=None, max_seconds=None)
        _RUNS[key] = run_search(fm, bias, budget)
    return _RUNS[key]


@pytest.fixture(scope="session")
def run_experiment():
    return experiment_run


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b else math.inf
