"""Constrained asymptotics: Fisher information, tangent cone, limit draws.

The scaled estimation error converges to the maximizer of a quadratic over
the tangent cone of the constraint set. When no non-negativity constraint
is active the maximizer is linear in the Gaussian draw and the limit
covariance has a closed form on the null space of the integral
constraints; otherwise the limit is simulated draw by draw through a small
quadratic program.

Parameter vectors are flattened as (c_1, ..., c_p, alpha_1..alpha_p, beta),
so d = p q + p + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.special import digamma
from scipy.stats import norm

from .em import _estep, _Stacked
from .errors import RankDeficiencyError
from .model import ModelParams, PointPattern
from .qp import solve_cone_qp
from .seeds import derive_rng


def flatten_params(model: ModelParams) -> np.ndarray:
    return np.concatenate([model.coeffs.ravel(), model.scores.alphas, [model.scores.beta]])


def param_dimension(p: int, q: int) -> int:
    return p * q + p + 1


def penalty_gradient(model: ModelParams) -> np.ndarray:
    """Gradient of the total roughness penalty at the fitted parameters."""
    grad_c = 2.0 * model.coeffs @ model.basis.penalty
    return np.concatenate([grad_c.ravel(), np.zeros(model.p + 1)])


@dataclass(frozen=True)
class FisherInfo:
    """Estimated Fisher information with conditioning diagnostics."""

    matrix: np.ndarray
    mc_draws: int
    n_samples: int
    condition_number: float
    singular_warning: bool

    def __post_init__(self):
        m = self.matrix
        if np.max(np.abs(m - m.T)) > 1e-10 * max(1.0, np.max(np.abs(m))):
            raise ValueError("Fisher estimate must be symmetric")


@dataclass(frozen=True)
class TangentCone:
    """Feasible directions at the fitted parameters.

    Directions v must satisfy a'v_k = 0 per component and v_kj >= 0 on the
    active sets; the score block of dimension r is unconstrained.
    """

    active_sets: list
    equality: np.ndarray      # (p, d) rows: integral constraint per component
    nonneg_idx: np.ndarray    # flat coordinate indices with v >= 0
    r: int
    d: int

    @property
    def interior(self) -> bool:
        return self.nonneg_idx.size == 0


@dataclass(frozen=True)
class AsymptoticResult:
    """Simulated or closed-form limit distribution summary."""

    method: str               # "interior-closed-form" | "qp-monte-carlo"
    kappa: float
    theta_hat: np.ndarray
    variances: np.ndarray
    active_idx: np.ndarray
    draws: np.ndarray | None = None
    mean_offset: np.ndarray | None = None
    intervals: np.ndarray | None = None
    level: float | None = None

    def __post_init__(self):
        if self.level is not None and not 0.0 < self.level < 1.0:
            raise ValueError("confidence level must be in (0, 1)")


def pattern_score(model: ModelParams, pattern: PointPattern, *,
                  sweeps: int = 4000, seed: int = 0) -> np.ndarray:
    """Score of the marginal log likelihood via the complete-data identity.

    The gradient of the log marginal equals the posterior expectation of
    the complete-data gradient: responsibility-weighted basis ratios for
    the coefficient blocks and Gamma-family terms for the score block.
    """
    stacked = _Stacked([pattern], model.basis)
    stats = _estep(stacked, model.coeffs, model.scores, mode="auto", sweeps=sweeps,
                   rng=np.random.default_rng(seed))
    return _score_from_stats(model, stacked, stats, 0)


def _score_from_stats(model: ModelParams, stacked: _Stacked, stats, i: int) -> np.ndarray:
    alphas, beta = model.scores.alphas, model.scores.beta
    p, q = model.p, model.q
    design = stacked.design[stacked.offsets[i]:stacked.offsets[i + 1]]
    gamma = stats.gammas[i]
    grad_c = np.zeros((p, q))
    if design.shape[0]:
        phi = design @ model.coeffs.T
        for k in range(p):
            mask = gamma[:, k] > 0.0
            if np.any(mask):
                grad_c[k] = design[mask].T @ (gamma[mask, k] / phi[mask, k])
    grad_alpha = stats.elogu[i] - np.log(beta) - digamma(alphas)
    grad_beta = float(np.sum(stats.euk[i]) / beta**2 - np.sum(alphas) / beta)
    return np.concatenate([grad_c.ravel(), grad_alpha, [grad_beta]])


def estimate_fisher(model: ModelParams, patterns=None, *, sampler=None,
                    mc_draws: int = 1000, seed: int = 0) -> FisherInfo:
    """Average outer product of per-pattern scores.

    Empirical mode uses the observed patterns; generative mode draws
    ``mc_draws`` fresh patterns from ``sampler(rng)``. Fewer samples than
    parameters raises only a warning flag, not an error.
    """
    if (patterns is None) == (sampler is None):
        raise ValueError("provide exactly one of patterns or sampler")
    if sampler is not None and mc_draws < 100:
        raise ValueError("generative estimation needs mc_draws >= 100")
    rng = derive_rng(seed, "fisher")
    if sampler is not None:
        patterns = [sampler(rng) for _ in range(mc_draws)]
    patterns = list(patterns)

    stacked = _Stacked(patterns, model.basis)
    stats = _estep(stacked, model.coeffs, model.scores, mode="auto",
                   sweeps=max(int(mc_draws), 1000),
                   rng=np.random.default_rng(int(rng.integers(2**32))))
    d = param_dimension(model.p, model.q)
    acc = np.zeros((d, d))
    for i in range(stacked.n):
        s = _score_from_stats(model, stacked, stats, i)
        acc += np.outer(s, s)
    mat = acc / stacked.n
    mat = 0.5 * (mat + mat.T)
    eigs = np.linalg.eigvalsh(mat)
    cond = float(eigs[-1] / eigs[0]) if eigs[0] > 0 else np.inf
    return FisherInfo(matrix=mat, mc_draws=int(mc_draws), n_samples=stacked.n,
                      condition_number=cond, singular_warning=stacked.n < d)


def tangent_cone(model: ModelParams, activation_tol: float | None = None) -> TangentCone:
    """Active sets and constraint rows at the fitted parameters.

    Coefficients at or below ``activation_tol`` (default 1e-6 times the
    largest coefficient) are treated as exact zeros.
    """
    p, q = model.p, model.q
    d = param_dimension(p, q)
    if activation_tol is None:
        activation_tol = 1e-6 * float(np.max(model.coeffs))
    active_sets = [np.nonzero(model.coeffs[k] <= activation_tol)[0] for k in range(p)]
    equality = np.zeros((p, d))
    for k in range(p):
        equality[k, k * q:(k + 1) * q] = model.basis.integrals
    nonneg = np.concatenate([k * q + idx for k, idx in enumerate(active_sets)]) if p else np.zeros(0)
    return TangentCone(active_sets=active_sets, equality=equality,
                       nonneg_idx=np.asarray(nonneg, dtype=int), r=p + 1, d=d)


def _symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(matrix)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def simulate_delta(fisher: FisherInfo, cone: TangentCone, kappa: float,
                   grad_penalty: np.ndarray, m_draws: int, seed: int = 0,
                   theta_hat: np.ndarray | None = None) -> AsymptoticResult:
    """Monte-Carlo draws of the constrained limit distribution.

    Each draw maximizes (Z - kappa grad_penalty)' delta - delta' F delta / 2
    over the tangent cone via the active-set QP; draws, per-coordinate
    variances and the QP diagnostics are returned.
    """
    if m_draws < 100:
        raise ValueError("need at least 100 draws")
    f_mat = fisher.matrix
    d = cone.d
    if f_mat.shape != (d, d):
        raise ValueError("Fisher matrix and cone dimensions disagree")
    rng = derive_rng(seed, "delta")
    root = _symmetric_sqrt(f_mat)
    z = rng.standard_normal((m_draws, d)) @ root.T
    shift = -float(kappa) * np.asarray(grad_penalty, dtype=float)
    draws = np.empty((m_draws, d))
    worst_resid = 0.0
    for i in range(m_draws):
        res = solve_cone_qp(f_mat, z[i] + shift, cone.equality, cone.nonneg_idx)
        if res.kkt_residual > 1e-8:
            raise RuntimeError(f"QP draw {i}: KKT residual {res.kkt_residual:.2e} above 1e-8")
        worst_resid = max(worst_resid, res.kkt_residual)
        draws[i] = res.x
    variances = draws.var(axis=0, ddof=1)
    if theta_hat is None:
        theta_hat = np.zeros(d)
    return AsymptoticResult(method="qp-monte-carlo", kappa=float(kappa),
                            theta_hat=np.asarray(theta_hat, dtype=float),
                            variances=variances, active_idx=cone.nonneg_idx.copy(),
                            draws=draws)


def variance_interior(fisher: FisherInfo, basis_integrals: np.ndarray, kappa: float,
                      grad_penalty: np.ndarray):
    """Closed-form limit covariance and mean offset when no bound is active.

    Builds an orthonormal null-space basis of the stacked integral
    constraints, reduces the Fisher matrix on that subspace, and maps back;
    the result has rank d - p.
    """
    a = np.asarray(basis_integrals, dtype=float)
    q = a.size
    d = grad_penalty.size if grad_penalty is not None else fisher.matrix.shape[0]
    p = (d - 1) // (q + 1)
    if param_dimension(p, q) != d:
        raise ValueError("dimensions do not match a (p, q) coefficient layout")
    r = p + 1
    constraint = np.kron(np.eye(p), a[None, :])
    gamma = scipy.linalg.null_space(constraint)
    reducer = np.zeros((p * q - p + r, d))
    reducer[:p * q - p, :p * q] = gamma.T
    reducer[p * q - p:, p * q:] = np.eye(r)
    reduced = reducer @ fisher.matrix @ reducer.T
    eigs, vecs = np.linalg.eigh(reduced)
    if eigs[0] <= 1e-10 * max(eigs[-1], 1e-300):
        raise RankDeficiencyError("reduced Fisher information is singular",
                                  null_direction=reducer.T @ vecs[:, 0])
    inv = (vecs / eigs) @ vecs.T
    cov = reducer.T @ inv @ reducer
    mu = reducer @ (-float(kappa) * np.asarray(grad_penalty, dtype=float))
    mean_offset = reducer.T @ inv @ mu
    return 0.5 * (cov + cov.T), mean_offset


def interior_result(model: ModelParams, fisher: FisherInfo, kappa: float,
                    grad_penalty: np.ndarray) -> AsymptoticResult:
    """AsymptoticResult wrapper around the interior closed form."""
    cov, mean_offset = variance_interior(fisher, model.basis.integrals, kappa, grad_penalty)
    return AsymptoticResult(method="interior-closed-form", kappa=float(kappa),
                            theta_hat=flatten_params(model), variances=np.diag(cov).copy(),
                            active_idx=np.zeros(0, dtype=int), mean_offset=mean_offset)


def confidence_intervals(result: AsymptoticResult, n: int, level: float) -> np.ndarray:
    """Per-coordinate intervals at the given level.

    Interior results use the normal quantile with the closed-form
    variances; QP results use empirical quantiles of the draws. Lower
    bounds of coordinates pinned at zero are clipped at zero.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    theta = result.theta_hat
    if result.method == "interior-closed-form":
        half = norm.ppf(0.5 * (1.0 + level)) * np.sqrt(result.variances / n)
        lo, hi = theta - half, theta + half
    else:
        lo_q = np.quantile(result.draws, 0.5 * (1.0 - level), axis=0)
        hi_q = np.quantile(result.draws, 0.5 * (1.0 + level), axis=0)
        lo, hi = theta + lo_q / np.sqrt(n), theta + hi_q / np.sqrt(n)
    if result.active_idx.size:
        lo[result.active_idx] = np.maximum(lo[result.active_idx], 0.0)
    return np.column_stack([lo, hi])


def with_intervals(result: AsymptoticResult, n: int, level: float) -> AsymptoticResult:
    return replace(result, intervals=confidence_intervals(result, n, level), level=level)
