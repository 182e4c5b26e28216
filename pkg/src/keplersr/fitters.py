"""Constant fitting, polynomial regression and the ellipse least-squares fit."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from keplersr.errors import ConvergenceError
from keplersr.expr import Binary, Const, Expr, Feature, Literal, Unary, evaluate, n_constants

DEFAULT_RESTARTS = 4
_FD_STEP = 1e-7
_INVALID_PENALTY = 1e6


@dataclass(frozen=True)
class FitResult:
    constants: tuple[float, ...]
    mse: float
    converged: bool
    n_iterations: int


@dataclass(frozen=True)
class EllipseParams:
    """Polar ellipse ``r = a(1 - eps^2) / (1 + eps cos(theta))``.

    ``a`` is the semi-major axis and ``eps`` the eccentricity (always >= 0).
    ``orientation`` says whether theta = 0 points at perihelion or aphelion.
    """

    a: float
    eps: float
    orientation: str = "perihelion"
    mse: float = 0.0
    n_iterations: int = 0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("semi-major axis must be positive")
        if not 0 <= self.eps < 1:
            raise ValueError("eccentricity must lie in [0, 1)")

    @property
    def semi_latus_rectum(self) -> float:
        return self.a * (1.0 - self.eps**2)

    @property
    def signed_eps(self) -> float:
        return -self.eps if self.orientation == "aphelion" else self.eps


def _mse(pred: np.ndarray, y: np.ndarray) -> float:
    if not np.all(np.isfinite(pred)):
        return math.inf
    return float(np.mean((pred - y) ** 2))


def residual_mse(expr: Expr, constants: Sequence[float], X: np.ndarray, y: np.ndarray) -> float:
    """Mean squared residual; ``inf`` if any row is undefined."""
    return _mse(evaluate(expr, constants, X), y)


def start_points(k: int, restarts: int, seed: int = 0) -> np.ndarray:
    """All-ones start followed by ``restarts`` seeded draws from [-3, 3]."""
    rng = np.random.default_rng([seed, k, restarts])
    draws = rng.uniform(-3.0, 3.0, size=(restarts, k))
    return np.vstack([np.ones((1, k)), draws])


def _fd_steps(P: np.ndarray) -> np.ndarray:
    return _FD_STEP * np.maximum(1.0, np.abs(P))


def numeric_jacobian(expr: Expr, P: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobians for a batch of constant vectors.

    ``P`` has shape (S, k). Returns (values (S, n), jacobians (S, n, k)).
    """
    S, k = P.shape
    H = _fd_steps(P)
    batch = np.repeat(P[:, None, :], 2 * k + 1, axis=1)  # (S, 2k+1, k)
    for j in range(k):
        batch[:, 1 + 2 * j, j] += H[:, j]
        batch[:, 2 + 2 * j, j] -= H[:, j]
    out = evaluate(expr, batch.reshape(-1, k).T, X).reshape(S, 2 * k + 1, -1)
    f0 = out[:, 0, :]
    plus = out[:, 1::2, :]
    minus = out[:, 2::2, :]
    J = (plus - minus) / (2.0 * H[:, :, None])
    return f0, np.transpose(J, (0, 2, 1))


@np.errstate(all="ignore")
def _cost(pred: np.ndarray, y: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray]:
    bad = ~np.isfinite(pred)
    r = np.where(bad, 0.0, pred - y)
    cost = np.sum(r * r, axis=-1) + _INVALID_PENALTY * scale * np.sum(bad, axis=-1)
    return cost, bad


@np.errstate(all="ignore")
def fit_constants(
    expr: Expr,
    X: np.ndarray,
    y: np.ndarray,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    max_iter: int = 100,
    init: Sequence[float] | None = None,
) -> FitResult:
    """Least-squares constants for ``expr`` by multistart Levenberg-Marquardt.

    All starts are iterated together in one batch. Rows where the model is
    undefined carry a large fixed penalty, so steps that leave the domain
    are rejected. The returned mse is recomputed on all rows and is ``inf``
    when any row is undefined.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    k = n_constants(expr)
    if k == 0:
        return FitResult((), residual_mse(expr, (), X, y), True, 0)

    P = start_points(k, restarts, seed)
    if init is not None:
        P = np.vstack([np.asarray(init, dtype=float)[None, :], P])
    S = P.shape[0]
    n = y.shape[0]
    scale = float(np.mean(y * y)) + 1.0

    pred = evaluate(expr, P.T, X)
    bad_frac = np.mean(~np.isfinite(pred), axis=1)
    keep = bad_frac <= 0.5
    if not keep.any():
        return FitResult(tuple(float(v) for v in P[0]), math.inf, False, 0)
    P = P[keep]
    S = P.shape[0]
    cost, _ = _cost(pred[keep], y, scale)
    lam = np.full(S, 1e-3)
    active = np.ones(S, dtype=bool)
    converged = np.zeros(S, dtype=bool)
    eye = np.eye(k)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        f0, J = numeric_jacobian(expr, P[idx], X)
        r = f0 - y
        rowbad = ~np.isfinite(r) | ~np.all(np.isfinite(J), axis=2)
        r = np.where(rowbad, 0.0, r)
        J = np.where(rowbad[:, :, None], 0.0, J)
        A = np.einsum("snk,snl->skl", J, J)
        g = np.einsum("snk,sn->sk", J, r)
        diag = np.einsum("skk->sk", A)
        damp = lam[idx, None] * np.maximum(diag, 1e-12)
        M = A + damp[:, :, None] * eye
        try:
            step = -np.linalg.solve(M, g[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            step = -np.stack([np.linalg.lstsq(m, v, rcond=None)[0] for m, v in zip(M, g)])
        trial = P[idx] + step
        finite = np.all(np.isfinite(trial), axis=1)
        trial = np.where(finite[:, None], trial, P[idx])
        new_cost, _ = _cost(evaluate(expr, trial.T, X), y, scale)
        better = finite & (new_cost < cost[idx])
        rel = np.where(better, (cost[idx] - new_cost) / np.maximum(cost[idx], 1e-300), 0.0)
        tiny_step = np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(P[idx])), axis=1)
        P[idx[better]] = trial[better]
        cost[idx[better]] = new_cost[better]
        lam[idx[better]] = np.maximum(lam[idx[better]] / 3.0, 1e-12)
        lam[idx[~better]] *= 4.0
        done = (better & (rel < 1e-14)) | tiny_step | (lam[idx] > 1e12) | (cost[idx] <= 1e-32 * n)
        converged[idx[done]] = True
        active[idx[done]] = False

    best = int(np.argmin(cost))
    consts = tuple(float(v) for v in P[best])
    return FitResult(consts, residual_mse(expr, consts, X, y), bool(converged[best]), it)


# --------------------------------------------------------------------------
# Polynomials


@dataclass(frozen=True)
class PolyFit:
    expr: Expr
    result: FitResult
    rank_deficient: bool
    monomials: tuple[tuple[int, ...], ...]


def monomial_exponents(n_features: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent tuples of all monomials up to total ``degree``, graded order."""
    out = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(n_features), d):
            exps = [0] * n_features
            for i in combo:
                exps[i] += 1
            out.append(tuple(exps))
    return out


def _power_node(i: int, p: int) -> Expr:
    x = Feature(i)
    if p == 1:
        return x
    if p == 2:
        return Unary("square", x)
    if p == 3:
        return Unary("cube", x)
    return Binary("pow", x, Literal(float(p)))


def _monomial_node(exps: tuple[int, ...]) -> Expr | None:
    node = None
    for i, p in enumerate(exps):
        if p:
            f = _power_node(i, p)
            node = f if node is None else Binary("*", node, f)
    return node


def fit_polynomial(X: np.ndarray, y: np.ndarray, degree: int) -> PolyFit:
    """Ordinary least squares on the monomial basis up to total ``degree``.

    Columns are scaled to unit norm before forming the normal equations;
    scaled coefficients below 1e-10 in magnitude are dropped. A singular
    Gram matrix sets ``rank_deficient`` and falls back to the minimum-norm
    solution.
    """
    if not 0 <= degree <= 6:
        raise ValueError("degree must lie in 0..6")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    monos = monomial_exponents(X.shape[1], degree)
    Phi = np.column_stack([np.prod(X ** np.array(e)[None, :], axis=1) for e in monos])
    norms = np.linalg.norm(Phi, axis=0)
    rank_deficient = bool(np.any(norms == 0))
    norms = np.where(norms == 0, 1.0, norms)
    Phis = Phi / norms
    G = Phis.T @ Phis
    b = Phis.T @ y
    if not rank_deficient:
        rank_deficient = bool(np.linalg.cond(G) > 1e13)
    if rank_deficient:
        w = np.linalg.lstsq(Phis, y, rcond=None)[0]
    else:
        w = np.linalg.solve(G, b)
    w = np.where(np.abs(w) < 1e-10, 0.0, w)
    coef = w / norms

    terms: list[Expr] = []
    consts: list[float] = []
    kept: list[tuple[int, ...]] = []
    for e, c in zip(monos, coef):
        if c == 0.0:
            continue
        m = _monomial_node(e)
        slot = Const(len(consts))
        terms.append(slot if m is None else Binary("*", slot, m))
        consts.append(float(c))
        kept.append(e)
    if not terms:
        expr: Expr = Literal(0.0)
    else:
        expr = terms[0]
        for t in terms[1:]:
            expr = Binary("+", expr, t)
    mse = residual_mse(expr, consts, X, y)
    return PolyFit(expr, FitResult(tuple(consts), mse, not rank_deficient, 1), rank_deficient, tuple(kept))


# --------------------------------------------------------------------------
# Ellipse


def ellipse_radius(theta: np.ndarray, a: float, eps: float) -> np.ndarray:
    """``a(1 - eps^2) / (1 + eps cos(theta))``; ``eps`` may be signed."""
    return a * (1.0 - eps * eps) / (1.0 + eps * np.cos(theta))


def ellipse_jacobian(theta: np.ndarray, a: float, eps: float) -> np.ndarray:
    """Analytic d r / d(a, eps), shape (n, 2)."""
    c = np.cos(theta)
    den = 1.0 + eps * c
    d_a = (1.0 - eps * eps) / den
    d_eps = a * (-2.0 * eps * den - (1.0 - eps * eps) * c) / (den * den)
    return np.column_stack([d_a, d_eps])


def fit_ellipse(theta: np.ndarray, r: np.ndarray, max_iter: int = 200) -> EllipseParams:
    """Non-linear least squares for the polar ellipse through (theta, r).

    Starts from ``a = mean(r)``, ``eps = 0.1``. A negative fitted
    eccentricity means theta is measured from aphelion; it is reported as
    ``|eps|`` with ``orientation="aphelion"``.
    """
    theta = np.asarray(theta, dtype=float)
    r = np.asarray(r, dtype=float)
    if theta.shape != r.shape or theta.ndim != 1:
        raise ValueError("theta and r must be 1-D arrays of equal length")
    if r.size < 3 or np.unique(np.round(np.cos(theta), 12)).size < 2:
        raise ConvergenceError("ellipse fit is underdetermined: need >= 3 samples at >= 2 distinct angles")

    p = np.array([float(np.mean(r)), 0.1])
    res = ellipse_radius(theta, *p) - r
    cost = float(res @ res)
    lam = 1e-3
    stalled = 0
    it = 0
    for it in range(1, max_iter + 1):
        J = ellipse_jacobian(theta, *p)
        A = J.T @ J
        g = J.T @ res
        step = -np.linalg.solve(A + lam * np.diag(np.maximum(np.diag(A), 1e-12)), g)
        trial = p + step
        if trial[0] > 0 and abs(trial[1]) < 1:
            tres = ellipse_radius(theta, *trial) - r
            tcost = float(tres @ tres)
        else:
            tcost = math.inf
        if tcost < cost:
            small = cost - tcost <= 1e-15 * cost or np.all(np.abs(step) <= 1e-14 * (1 + np.abs(p)))
            p, res, cost = trial, tres, tcost
            lam = max(lam / 3.0, 1e-12)
            stalled = 0
            if small or cost <= 1e-30:
                break
        else:
            lam *= 4.0
            stalled += 1
            if np.all(np.abs(step) <= 1e-14 * (1 + np.abs(p))) or lam > 1e12:
                break
    else:
        raise ConvergenceError(f"ellipse fit did not converge in {max_iter} iterations")
    a, eps = float(p[0]), float(p[1])
    return EllipseParams(
        a=a,
        eps=abs(eps),
        orientation="aphelion" if eps < 0 else "perihelion",
        mse=cost / r.size,
        n_iterations=it,
    )
