"""Candidate enumeration, scoring, Pareto bookkeeping and the search loop."""

from keplersr.search.engine import (
    POLY_DEGREES,
    STATUSES,
    SearchBudget,
    SearchResult,
    audit_record,
    grammar_for,
    run_search,
    score,
    write_audit,
)
from keplersr.search.enumeration import enumerate_candidates, max_nodes_for
from keplersr.search.matching import (
    conic_parameters,
    family_key,
    lift_to_angle,
    matches_orbit,
    orbit_template,
    structural_match,
)
from keplersr.search.pareto import LOSS_KEYS, ParetoFront, ScoredExpr, dominates, pareto_insert
from keplersr.search.scoring import DEFAULT_PRECISION, dl_loss

__all__ = [
    "DEFAULT_PRECISION", "LOSS_KEYS", "POLY_DEGREES", "STATUSES",
    "ParetoFront", "ScoredExpr", "SearchBudget", "SearchResult",
    "audit_record", "conic_parameters", "dl_loss", "dominates", "enumerate_candidates",
    "family_key", "grammar_for", "lift_to_angle", "matches_orbit", "max_nodes_for",
    "orbit_template", "pareto_insert", "run_search", "score", "structural_match", "write_audit",
]
