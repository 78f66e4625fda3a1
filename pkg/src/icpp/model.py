"""Model parameters and likelihood quantities.

The intensity of each replication is a non-negative combination of p
component densities phi_k(t) = c_k' beta(t), with independent Gamma scores
U_k. The Gamma family is parameterized shape-scale throughout: U_k has
shape alpha_k, scale beta, mean alpha_k * beta.

Pattern densities follow the set convention: f({t_1..t_m}) is
exp(-integral of the intensity) times the product of intensity values,
with no m! factor, so the marginal of an empty pattern is
(1 + beta)^(-sum alpha).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .basis import BasisSystem, evaluate_basis
from .errors import EnumerationBudgetError, PatternUnsupportedError

EXACT_LABEL_BUDGET = 1_000_000


def _logsumexp(values: np.ndarray) -> float:
    """Plain 1-D log-sum-exp; avoids scipy's per-call dispatch overhead."""
    top = np.max(values)
    if not np.isfinite(top):
        return float(top) if top == -np.inf else float("nan")
    return float(top + np.log(np.sum(np.exp(values - top))))


@dataclass(frozen=True)
class PointPattern:
    """One replication: a finite set of event locations inside the region."""

    replication_id: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError(f"pattern {self.replication_id}: non-finite coordinates")

    @property
    def count(self) -> int:
        if self.points.ndim == 2:
            return self.points.shape[0]
        return self.points.size


@dataclass(frozen=True)
class ScoreParams:
    """Gamma score parameters: shapes alpha_k and a common scale beta."""

    alphas: np.ndarray
    beta: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "beta", float(self.beta))
        if np.any(a <= 0) or self.beta <= 0:
            raise ValueError("Gamma shapes and scale must be positive")

    @property
    def p(self) -> int:
        return self.alphas.size

    @property
    def expected_scores(self) -> np.ndarray:
        return self.alphas * self.beta


def canonical_order(coeffs: np.ndarray, scores: ScoreParams) -> np.ndarray:
    """Component permutation: expected score descending, ties by coefficient rows."""
    ev = scores.expected_scores
    return np.array(sorted(range(ev.size), key=lambda k: (-ev[k], tuple(coeffs[k]))), dtype=int)


@dataclass(frozen=True)
class ModelParams:
    """Feasible model parameters: coefficient rows on the constraint set, scores.

    Rows are kept in canonical order (expected score descending); the
    constructor re-sorts if needed.
    """

    coeffs: np.ndarray
    scores: ScoreParams
    basis: BasisSystem

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.shape[0] != self.scores.p or c.shape[1] != self.basis.q:
            raise ValueError(f"coefficient matrix must be ({self.scores.p}, {self.basis.q})")
        if np.min(c) < 0:
            raise ValueError("coefficients must be non-negative")
        resid = c @ self.basis.integrals - 1.0
        if np.max(np.abs(resid)) > 1e-8:
            raise ValueError("every row must satisfy a'c = 1 within 1e-8")
        order = canonical_order(c, self.scores)
        if not np.array_equal(order, np.arange(c.shape[0])):
            c = c[order]
            object.__setattr__(self, "scores",
                               ScoreParams(self.scores.alphas[order], self.scores.beta))
        object.__setattr__(self, "coeffs", c)

    @property
    def p(self) -> int:
        return self.scores.p

    @property
    def q(self) -> int:
        return self.basis.q

    @property
    def basis_ref(self) -> str:
        return self.basis.ref


@dataclass(frozen=True)
class LogLikResult:
    """Marginal log density of one pattern."""

    value: float
    mc_std_err: float
    method: str  # "exact" | "monte-carlo"


def component_density(model: ModelParams, k: int, points) -> np.ndarray:
    """phi_k evaluated at points inside the region."""
    if not 0 <= k < model.p:
        raise IndexError(f"component index {k} out of range [0, {model.p})")
    return evaluate_basis(model.basis, points) @ model.coeffs[k]


def intensity(model: ModelParams, u, points) -> np.ndarray:
    """Intensity sum_k u_k phi_k(t) for given non-negative scores u."""
    u = np.asarray(u, dtype=float)
    if u.shape != (model.p,):
        raise ValueError(f"scores must have shape ({model.p},)")
    if np.any(u < 0):
        raise ValueError("scores must be non-negative")
    return evaluate_basis(model.basis, points) @ (model.coeffs.T @ u)


def log_phi_matrix(model: ModelParams, pattern: PointPattern) -> np.ndarray:
    """(m, p) matrix of log phi_k(t_j); raises if a point has no support."""
    if pattern.count == 0:
        return np.zeros((0, model.p))
    phi = evaluate_basis(model.basis, pattern.points) @ model.coeffs.T
    if np.any(phi.max(axis=1) <= 0.0):
        raise PatternUnsupportedError(
            f"pattern {pattern.replication_id}: a point has zero density under every component")
    with np.errstate(divide="ignore"):
        return np.log(phi)


def gamma_log_prior(u: np.ndarray, alphas: np.ndarray, beta: float) -> float:
    """Log density of independent shape-scale Gamma scores."""
    return float(np.sum((alphas - 1.0) * np.log(u) - u / beta
                        - gammaln(alphas) - alphas * np.log(beta)))


def complete_loglik(model: ModelParams, pattern: PointPattern, u, labels) -> float:
    """Complete-data log likelihood for scores u and per-point component labels.

    Returns -inf (a flagged value, not an exception) when a labeled point
    falls where its component density vanishes.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("complete-data scores must be strictly positive")
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (pattern.count,):
        raise ValueError("one label per point required")
    if labels.size and (labels.min() < 0 or labels.max() >= model.p):
        raise ValueError("labels out of component range")
    total = -float(np.sum(u)) + gamma_log_prior(u, model.scores.alphas, model.scores.beta)
    if pattern.count == 0:
        return total
    phi = evaluate_basis(model.basis, pattern.points) @ model.coeffs.T
    phi_y = phi[np.arange(pattern.count), labels]
    if np.any(phi_y <= 0.0):
        return -np.inf
    return total + float(np.sum(np.log(u[labels]) + np.log(phi_y)))


def _label_columns(p: int, m: int) -> list[np.ndarray]:
    """Columns of the full (p^m, m) label enumeration, little overhead per column."""
    n_rows = p**m
    base = np.arange(n_rows)
    return [(base // p**(m - 1 - j)) % p for j in range(m)]


def exact_label_posterior(log_phi: np.ndarray, alphas: np.ndarray, beta: float):
    """Enumerate label vectors; return the log marginal and posterior expectations.

    Returns (log_marginal, gamma, euk, elogu): gamma is (m, p) with
    gamma[j, k] the posterior probability that point j came from component
    k; euk / elogu are posterior means of U_k and log U_k.
    """
    m, p = log_phi.shape
    bt = beta / (1.0 + beta)
    log_bt = np.log(bt)
    const = -float(np.sum(alphas)) * np.log1p(beta)
    if m == 0:
        return (const, np.zeros((0, p)), alphas * bt, digamma(alphas) + log_bt)
    if m * np.log(p if p > 1 else 2) > np.log(EXACT_LABEL_BUDGET) and p > 1:
        raise EnumerationBudgetError(f"p^m = {p}^{m} exceeds the {EXACT_LABEL_BUDGET} label budget")

    cols = _label_columns(p, m)
    n_rows = cols[0].size
    counts = [np.zeros(n_rows, dtype=np.int32) for _ in range(p)]
    logw = np.zeros(n_rows)
    for j, col in enumerate(cols):
        logw += log_phi[j, :][col]
        for k in range(p):
            counts[k] += col == k
    # per-component tables over possible counts 0..m avoid large gammaln calls
    counts_range = np.arange(m + 1)
    for k in range(p):
        table = gammaln(alphas[k] + counts_range) - gammaln(alphas[k]) + counts_range * log_bt
        logw += table[counts[k]]

    log_total = _logsumexp(logw)
    post = np.exp(logw - log_total)
    gamma = np.empty((m, p))
    for j, col in enumerate(cols):
        gamma[j] = np.bincount(col, weights=post, minlength=p)
    expected_counts = gamma.sum(axis=0)
    euk = (alphas + expected_counts) * bt
    elogu = np.empty(p)
    for k in range(p):
        dist = np.bincount(counts[k], weights=post, minlength=m + 1)
        elogu[k] = dist @ digamma(alphas[k] + counts_range) + log_bt
    return float(log_total + const), gamma, euk, elogu


def _exact_log_marginal(log_phi: np.ndarray, alphas: np.ndarray, beta: float) -> float:
    value, _, _, _ = exact_label_posterior(log_phi, alphas, beta)
    return value


def _mc_log_marginal(log_phi: np.ndarray, alphas: np.ndarray, beta: float,
                     draws: int, rng: np.random.Generator) -> tuple[float, float]:
    """Tilted-Gamma Monte-Carlo estimate of the log marginal and its std error.

    The Poisson factor exp(-sum u_k) is absorbed into the Gamma prior,
    leaving i.i.d. draws v_k ~ Gamma(alpha_k, scale beta/(1+beta)) and the
    bounded integrand prod_j sum_k v_k phi_k(t_j).
    """
    m, p = log_phi.shape
    const = -float(np.sum(alphas)) * np.log1p(beta)
    if m == 0:
        return const, 0.0
    bt = beta / (1.0 + beta)
    v = rng.gamma(shape=alphas, scale=bt, size=(draws, p))
    with np.errstate(divide="ignore"):
        per_draw = np.log(v @ np.exp(log_phi).T).sum(axis=1)
    l1 = _logsumexp(per_draw)
    value = const + l1 - np.log(draws)
    if draws == 1:
        return float(value), 0.0
    l2 = _logsumexp(2.0 * per_draw)
    rel_var = max(0.0, (np.exp(l2 - 2.0 * l1) - 1.0 / draws) * draws / (draws - 1.0))
    return float(value), float(np.sqrt(rel_var))


def marginal_loglik(model: ModelParams, pattern: PointPattern, mc_draws: int = 4000,
                    seed: int = 0, method: str = "auto") -> LogLikResult:
    """Marginal log density of a pattern.

    Uses exact enumeration over component labels when p^m fits the budget
    (and always for p = 1 or empty patterns), otherwise a tilted-Gamma
    Monte-Carlo average accumulated in log space. ``method`` can force
    either path ("exact" raises when the budget is exceeded).
    """
    if mc_draws < 1:
        raise ValueError("mc_draws must be >= 1")
    log_phi = log_phi_matrix(model, pattern)
    alphas, beta = model.scores.alphas, model.scores.beta
    m, p = log_phi.shape
    exact_ok = p == 1 or m == 0 or m * np.log(p) <= np.log(EXACT_LABEL_BUDGET)
    if method not in ("auto", "exact", "monte-carlo"):
        raise ValueError(f"unknown method {method!r}")
    if method == "exact" or (method == "auto" and exact_ok):
        value = _exact_log_marginal(log_phi, alphas, beta)
        return LogLikResult(value=value, mc_std_err=0.0, method="exact")
    rng = np.random.default_rng(seed)
    value, se = _mc_log_marginal(log_phi, alphas, beta, mc_draws, rng)
    return LogLikResult(value=value, mc_std_err=se, method="monte-carlo")


def posterior_intensity(model: ModelParams, pattern: PointPattern, e_stats,
                        grid) -> tuple[np.ndarray, np.ndarray]:
    """Posterior expected intensity at the pattern's points and on a grid.

    ``e_stats`` must contain this pattern's replication; the intensity is
    sum_k E[U_k | pattern] phi_k(t).
    """
    try:
        i = e_stats.rep_ids.index(pattern.replication_id)
    except ValueError:
        raise ValueError(f"E-step stats do not cover replication {pattern.replication_id!r}")
    if e_stats.gammas[i].shape[0] != pattern.count:
        raise ValueError("E-step stats were computed for a different pattern")
    u_hat = e_stats.euk[i]
    weights = model.coeffs.T @ u_hat
    on_grid = evaluate_basis(model.basis, grid) @ weights
    if pattern.count:
        at_points = evaluate_basis(model.basis, pattern.points) @ weights
    else:
        at_points = np.zeros(0)
    return at_points, on_grid
