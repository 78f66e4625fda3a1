"""Penalized maximum-likelihood fitting by Monte-Carlo EM.

The E-step computes posterior expectations of the latent component labels
and scores: exactly, by enumerating label vectors, when p^m fits the
budget, and otherwise by a Gibbs sampler alternating the two closed-form
conditionals (labels given scores are categorical, scores given labels are
Gamma). The M-step maximizes the penalized expected complete-data
log-likelihood: projected gradient ascent on each component's coefficients
over the constraint set {a'c = 1, c >= 0}, and blockwise Newton for the
Gamma score parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls
from scipy.special import digamma, polygamma

from .basis import BasisSystem, evaluate_basis
from .errors import DegenerateStatisticsError, EnumerationBudgetError, PatternUnsupportedError
from .model import (EXACT_LABEL_BUDGET, ModelParams, ScoreParams, _mc_log_marginal,
                    canonical_order, exact_label_posterior)
from .seeds import derive_rng

STARVATION_THRESHOLD = 1e-3
_MIN_SWEEPS = 10


@dataclass(frozen=True)
class EStepStats:
    """Posterior expectations per replication under the current parameters."""

    rep_ids: list
    gammas: list          # per replication: (m_i, p) responsibilities
    euk: np.ndarray       # (n, p) posterior means of U_k
    elogu: np.ndarray     # (n, p) posterior means of log U_k

    def __post_init__(self):
        for g in self.gammas:
            if g.shape[0] and np.max(np.abs(g.sum(axis=1) - 1.0)) > 1e-8:
                raise ValueError("responsibility rows must sum to 1")
        if np.any(self.euk <= 0):
            raise ValueError("posterior score means must be positive")
        if np.any(self.elogu > np.log(self.euk) + 1e-10):
            raise ValueError("E[log U] cannot exceed log E[U]")

    @property
    def p(self) -> int:
        return self.euk.shape[1]


@dataclass(frozen=True)
class FitConfig:
    """Settings for one EM run."""

    zeta: float = 0.0
    max_outer_iters: int = 40
    gibbs_sweeps: int = 24          # base of the growing sweep schedule
    inner_tol: float = 1e-6
    outer_tol: float = 1e-4
    seed: int = 0
    monitor_draws: int = 256        # MC draws for the objective trace

    def __post_init__(self):
        if self.zeta < 0:
            raise ValueError("zeta must be >= 0")
        if self.inner_tol <= 0 or self.outer_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.gibbs_sweeps < _MIN_SWEEPS:
            raise ValueError(f"gibbs_sweeps must be >= {_MIN_SWEEPS}")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    objective_trace: np.ndarray
    e_stats: EStepStats
    converged: bool
    iterations: int


class _Stacked:
    """All patterns' points stacked once: design matrix, replication index, counts."""

    def __init__(self, patterns, basis: BasisSystem):
        self.patterns = list(patterns)
        self.ids = [pat.replication_id for pat in self.patterns]
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("replication ids must be unique")
        self.n = len(self.patterns)
        self.counts = np.array([pat.count for pat in self.patterns], dtype=int)
        dim = basis.region.dimension
        blocks = [np.asarray(pat.points, dtype=float).reshape(pat.count, dim)
                  for pat in self.patterns]
        pts = np.vstack(blocks) if blocks else np.zeros((0, dim))
        if pts.shape[0]:
            self.design = evaluate_basis(basis, pts[:, 0] if dim == 1 else pts)
        else:
            self.design = np.zeros((0, basis.q))
        self.rep_idx = np.repeat(np.arange(self.n), self.counts)
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)])

    def split(self, flat: np.ndarray) -> list:
        return [flat[self.offsets[i]:self.offsets[i + 1]] for i in range(self.n)]


def _phi_all(stacked: _Stacked, coeffs: np.ndarray) -> np.ndarray:
    phi = stacked.design @ coeffs.T
    if phi.shape[0] and np.any(phi.max(axis=1) <= 0.0):
        bad = int(np.nonzero(phi.max(axis=1) <= 0.0)[0][0])
        rep = stacked.ids[int(stacked.rep_idx[bad])]
        raise PatternUnsupportedError(
            f"replication {rep}: point with zero density under every component")
    return phi


def _gibbs_stats(phi: np.ndarray, rep_idx: np.ndarray, n: int, counts: np.ndarray,
                 alphas: np.ndarray, beta: float, sweeps: int, rng: np.random.Generator):
    """Vectorized Gibbs over stacked points; Rao-Blackwellized averages."""
    p = alphas.size
    total = phi.shape[0]
    bt = beta / (1.0 + beta)
    log_bt = math.log(bt)
    burn = int(round(0.2 * sweeps))
    kept = max(sweeps - burn, 1)

    u = (alphas[None, :] + counts[:, None] * (alphas / alphas.sum())[None, :]) * bt
    gamma_acc = np.zeros_like(phi)
    euk_acc = np.zeros((n, p))
    elogu_acc = np.zeros((n, p))
    two = p == 2
    if two:
        phi0, phi1 = phi[:, 0], phi[:, 1]
    for sweep in range(sweeps):
        if two:
            w0 = phi0 * u[rep_idx, 0]
            w1 = phi1 * u[rep_idx, 1]
            y = (rng.random(total) * (w0 + w1) >= w0).astype(np.intp)
        else:
            w = phi * u[rep_idx]
            cs = np.cumsum(w, axis=1)
            r = rng.random(total) * cs[:, -1]
            y = (cs < r[:, None]).sum(axis=1)
        m = np.bincount(rep_idx * p + y, minlength=n * p).reshape(n, p).astype(float)
        shape = alphas[None, :] + m
        if sweep >= burn:
            euk_acc += shape * bt
            elogu_acc += digamma(shape) + log_bt
        u = rng.gamma(shape=shape, scale=bt)
        if sweep >= burn:
            if two:
                g0 = phi0 * u[rep_idx, 0]
                g1 = phi1 * u[rep_idx, 1]
                frac = g0 / (g0 + g1)
                gamma_acc[:, 0] += frac
                gamma_acc[:, 1] += 1.0 - frac
            else:
                wg = phi * u[rep_idx]
                gamma_acc += wg / wg.sum(axis=1, keepdims=True)
    return gamma_acc / kept, euk_acc / kept, elogu_acc / kept


def _estep(stacked: _Stacked, coeffs: np.ndarray, scores: ScoreParams, *,
           mode: str, sweeps: int, rng: np.random.Generator) -> EStepStats:
    """Shared E-step core. mode: "exact", "gibbs" or "auto" (exact when affordable)."""
    alphas, beta = scores.alphas, scores.beta
    p = alphas.size
    phi = _phi_all(stacked, coeffs)
    with np.errstate(divide="ignore"):
        log_phi = np.log(phi)

    log_budget = np.log(EXACT_LABEL_BUDGET)

    def affordable(m):
        return p == 1 or m == 0 or m * np.log(p) <= log_budget

    if mode == "exact":
        over = [m for m in stacked.counts if not affordable(m)]
        if over:
            raise EnumerationBudgetError(
                f"pattern with {max(over)} points exceeds the exact enumeration budget for p={p}")
        use_exact = np.ones(stacked.n, dtype=bool)
    elif mode == "gibbs":
        use_exact = stacked.counts == 0
    else:
        use_exact = np.array([affordable(m) for m in stacked.counts])

    gammas = [None] * stacked.n
    euk = np.empty((stacked.n, p))
    elogu = np.empty((stacked.n, p))
    log_phi_blocks = stacked.split(log_phi)
    for i in np.nonzero(use_exact)[0]:
        _, gammas[i], euk[i], elogu[i] = exact_label_posterior(log_phi_blocks[i], alphas, beta)

    gibbs_rows = np.nonzero(~use_exact)[0]
    if gibbs_rows.size:
        if gibbs_rows.size == stacked.n:
            phi_sel, sub_rep = phi, stacked.rep_idx
        else:
            sel = np.isin(stacked.rep_idx, gibbs_rows)
            phi_sel = phi[sel]
            sub_rep = np.searchsorted(gibbs_rows, stacked.rep_idx[sel])
        g_all, g_euk, g_elogu = _gibbs_stats(
            phi_sel, sub_rep, gibbs_rows.size, stacked.counts[gibbs_rows],
            alphas, beta, sweeps, rng)
        euk[gibbs_rows] = g_euk
        elogu[gibbs_rows] = g_elogu
        offsets = np.concatenate([[0], np.cumsum(stacked.counts[gibbs_rows])])
        for j, i in enumerate(gibbs_rows):
            gammas[i] = g_all[offsets[j]:offsets[j + 1]]
    return EStepStats(rep_ids=list(stacked.ids), gammas=gammas, euk=euk, elogu=elogu)


def e_step_exact(model: ModelParams, patterns) -> EStepStats:
    """Exact posterior expectations by label enumeration (small patterns only)."""
    stacked = _Stacked(patterns, model.basis)
    return _estep(stacked, model.coeffs, model.scores, mode="exact", sweeps=0,
                  rng=np.random.default_rng(0))


def e_step_gibbs(model: ModelParams, patterns, sweeps: int, seed: int = 0) -> EStepStats:
    """Gibbs-sampled posterior expectations; deterministic given the seed."""
    if sweeps < _MIN_SWEEPS:
        raise ValueError(f"sweeps must be >= {_MIN_SWEEPS}")
    stacked = _Stacked(patterns, model.basis)
    return _estep(stacked, model.coeffs, model.scores, mode="gibbs", sweeps=int(sweeps),
                  rng=np.random.default_rng(seed))


def project_to_constraint(z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {c : a'c = 1, c >= 0} with a > 0 elementwise."""
    z = np.asarray(z, dtype=float)
    a = np.asarray(a, dtype=float)
    ratio = z / a
    order = np.argsort(-ratio)
    az = (a * z)[order]
    aa = (a * a)[order]
    r_sorted = ratio[order]
    cum_az = np.cumsum(az)
    cum_aa = np.cumsum(aa)
    lam = None
    for s in range(z.size):
        cand = (cum_az[s] - 1.0) / cum_aa[s]
        upper = r_sorted[s + 1] if s + 1 < z.size else -np.inf
        if upper <= cand <= r_sorted[s]:
            lam = cand
            break
    if lam is None:
        lam = (cum_az[-1] - 1.0) / cum_aa[-1]
    return np.maximum(z - lam * a, 0.0)


def _component_objective(c, dpos, wpos, omega_scaled):
    """Objective restricted to points with positive responsibility."""
    phi = dpos @ c
    if phi.size and np.min(phi) <= 0.0:
        return -np.inf
    return float(wpos @ np.log(phi)) - float(c @ omega_scaled @ c)


def _kkt_residual(grad, c, a):
    """Scale-relative reduced-gradient residual on the constraint set."""
    free = c > 0.0
    lam = float(a[free] @ grad[free]) / float(a[free] @ a[free])
    reduced = grad - lam * a
    r_free = np.max(np.abs(reduced[free])) if np.any(free) else 0.0
    r_active = np.max(reduced[~free]) if np.any(~free) else 0.0
    return max(r_free, max(r_active, 0.0)) / max(1.0, np.max(np.abs(grad)))


def _m_step_components_core(e_stats: EStepStats, stacked: _Stacked, basis: BasisSystem,
                            zeta: float, start_coeffs: np.ndarray, inner_tol: float,
                            max_iter: int):
    if not all(i == j for i, j in zip(stacked.ids, e_stats.rep_ids)):
        raise ValueError("E-step stats and patterns are ordered differently")
    nonempty = [g for g in e_stats.gammas if g.shape[0]]
    gam = np.vstack(nonempty) if nonempty else np.zeros((0, e_stats.p))
    coeffs = np.array(start_coeffs, dtype=float)
    a = basis.integrals
    if np.max(np.abs(coeffs @ a - 1.0)) > 1e-8 or np.min(coeffs) < 0:
        raise ValueError("start coefficients must be feasible")
    omega_scaled = (stacked.n * zeta) * basis.penalty
    design = stacked.design
    starved = np.zeros(e_stats.p, dtype=bool)

    for k in range(e_stats.p):
        w = gam[:, k] if gam.shape[0] else np.zeros(0)
        if float(w.sum()) < STARVATION_THRESHOLD:
            starved[k] = True
            continue
        pos = w > 0.0
        if pos.all():
            dpos, wpos = design, w
        else:
            dpos, wpos = design[pos], w[pos]
        c = coeffs[k].copy()
        obj = _component_objective(c, dpos, wpos, omega_scaled)
        step = None
        for _ in range(max_iter):
            phi = dpos @ c
            grad = dpos.T @ (wpos / phi) - 2.0 * omega_scaled @ c
            if _kkt_residual(grad, c, a) <= inner_tol:
                break
            if step is None:
                step = 1.0 / max(1.0, np.max(np.abs(grad)))
            accepted = False
            for _ in range(60):
                cand = project_to_constraint(c + step * grad, a)
                move = cand - c
                gain_lin = float(grad @ move)
                if gain_lin <= 0.0:
                    break
                cand_obj = _component_objective(cand, dpos, wpos, omega_scaled)
                if cand_obj >= obj + 1e-4 * gain_lin:
                    c, obj = cand, cand_obj
                    step *= 1.5
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
        coeffs[k] = c
    return coeffs, starved


def m_step_components(e_stats: EStepStats, patterns, basis: BasisSystem, zeta: float,
                      start_coeffs: np.ndarray, *, inner_tol: float = 1e-6,
                      max_iter: int = 500):
    """Maximize the coefficient part of the penalized objective per component.

    Projected gradient ascent with backtracking on the concave objective
    sum_ij gamma_ijk log(c' beta(t_ij)) - n zeta c' Omega c over the
    constraint set. Returns (new_coeffs, starved_mask); starved components
    (responsibility mass below threshold) keep their starting row. The KKT
    stopping residual is the reduced gradient relative to max(1, |grad|_inf).
    """
    stacked = _Stacked(patterns, basis)
    return _m_step_components_core(e_stats, stacked, basis, zeta, start_coeffs,
                                   inner_tol, max_iter)


def _inverse_digamma(y: float) -> float:
    x = math.exp(y) + 0.5 if y >= -2.22 else -1.0 / (y - digamma(1.0))
    for _ in range(40):
        f = digamma(x) - y
        x_new = x - f / polygamma(1, x)
        if x_new <= 0:
            x_new = x / 2.0
        if abs(x_new - x) <= 1e-13 * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
    return float(x)


def m_step_gamma(e_stats: EStepStats, *, max_sweeps: int = 8, tol: float = 1e-10) -> ScoreParams:
    """Gamma-family M-step: blockwise Newton for shapes, closed-form scale."""
    euk, elogu = e_stats.euk, e_stats.elogu
    if euk.size == 0:
        raise DegenerateStatisticsError("empty E-step statistics")
    if np.any(elogu - np.log(euk) > 1e-10):
        raise DegenerateStatisticsError("statistics violate Jensen's inequality")
    mean_euk = euk.mean(axis=0)
    mean_elogu = elogu.mean(axis=0)
    s = np.log(mean_euk) - mean_elogu
    if np.all(s < 1e-12):
        raise DegenerateStatisticsError("statistics carry no shape information (degenerate)")
    s = np.maximum(s, 1e-12)
    alphas = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    beta = float(mean_euk.sum() / alphas.sum())
    for _ in range(max_sweeps):
        prev = np.concatenate([alphas, [beta]])
        target = mean_elogu - np.log(beta)
        alphas = np.array([_inverse_digamma(t) for t in target])
        beta = float(mean_euk.sum() / alphas.sum())
        cur = np.concatenate([alphas, [beta]])
        if np.max(np.abs(cur - prev) / np.maximum(1.0, np.abs(prev))) < tol:
            break
    return ScoreParams(alphas=alphas, beta=beta)


def _kmeans(x: np.ndarray, p: int, rng: np.random.Generator, iters: int = 100):
    """Seeded Lloyd's algorithm with k-means++ initialization."""
    n = x.shape[0]
    centers = np.empty((p, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for k in range(1, p):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers[k] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((x - centers[k]) ** 2).sum(axis=1))
    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        for k in range(p):
            mask = new_labels == k
            if not np.any(mask):
                far = dist.min(axis=1).argmax()
                new_labels[far] = k
                mask = new_labels == k
            centers[k] = x[mask].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers


def initialize(patterns, basis: BasisSystem, p: int, seed: int = 0) -> ModelParams:
    """Starting parameters: k-means clusters smoothed onto the basis.

    Each cluster's histogram is fit by non-negative least squares and
    rescaled to the constraint set (zero fits fall back to the uniform
    feasible point); shapes start at cluster share times the mean count,
    with unit scale.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    patterns = list(patterns)
    region = basis.region
    dim = region.dimension
    pooled = [np.asarray(pat.points, dtype=float).reshape(pat.count, dim)
              for pat in patterns if pat.count]
    if not pooled:
        raise ValueError("cannot initialize from empty data")
    x = np.vstack(pooled)
    if x.shape[0] < basis.q:
        raise ValueError(f"need at least q={basis.q} pooled points to initialize")
    if np.unique(x, axis=0).shape[0] < p:
        raise ValueError(f"fewer than {p} distinct points")
    rng = np.random.default_rng(seed)
    labels, _ = _kmeans(x, p, rng)

    if dim == 1:
        edges = np.linspace(region.lower, region.upper, 65)
        centers = 0.5 * (edges[:-1] + edges[1:])
        cell = np.diff(edges)
    else:
        x0, x1, y0, y1 = region.bbox()
        ex = np.linspace(x0, x1, 17)
        ey = np.linspace(y0, y1, 17)
        gx, gy = np.meshgrid(0.5 * (ex[:-1] + ex[1:]), 0.5 * (ey[:-1] + ey[1:]), indexing="ij")
        all_centers = np.column_stack([gx.ravel(), gy.ravel()])
        inside = region.contains(all_centers)
        centers = all_centers[inside]
        cell = np.full(centers.shape[0], (ex[1] - ex[0]) * (ey[1] - ey[0]))
    design = evaluate_basis(basis, centers)

    a = basis.integrals
    uniform = a / float(a @ a)
    coeffs = np.empty((p, basis.q))
    mean_count = x.shape[0] / len(patterns)
    shares = np.empty(p)
    for k in range(p):
        pts = x[labels == k]
        shares[k] = pts.shape[0] / x.shape[0]
        if dim == 1:
            hist, _ = np.histogram(pts[:, 0], bins=edges)
            dens = hist / max(pts.shape[0], 1) / cell
        else:
            hist, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=(ex, ey))
            dens = hist.ravel()[inside] / max(pts.shape[0], 1) / cell
        c, _ = nnls(design, dens)
        total = float(c @ a)
        c = c / total if total > 0 else uniform.copy()
        coeffs[k] = 0.98 * c + 0.02 * uniform
    alphas = np.maximum(shares * mean_count, 0.05)
    return ModelParams(coeffs=coeffs, scores=ScoreParams(alphas=alphas, beta=1.0), basis=basis)


def _monitor_loglik(stacked: _Stacked, coeffs: np.ndarray, scores: ScoreParams,
                    draws: int, rng: np.random.Generator) -> float:
    """Sum of marginal log likelihoods, exact where affordable, MC elsewhere.

    The caller fixes the generator seed so successive evaluations share
    draws and the trace is comparable across iterations.
    """
    phi = _phi_all(stacked, coeffs)
    with np.errstate(divide="ignore"):
        log_phi = np.log(phi)
    alphas, beta = scores.alphas, scores.beta
    p = alphas.size
    log_budget = np.log(EXACT_LABEL_BUDGET)
    total = 0.0
    for block in stacked.split(log_phi):
        m = block.shape[0]
        if p == 1 or m == 0 or m * np.log(p) <= log_budget:
            value, _, _, _ = exact_label_posterior(block, alphas, beta)
        else:
            value, _ = _mc_log_marginal(block, alphas, beta, draws, rng)
        total += value
    return total


def penalized_objective(loglik_sum: float, coeffs: np.ndarray, basis: BasisSystem,
                        zeta: float, n: int) -> float:
    """Average log likelihood minus zeta times the total roughness penalty."""
    rough = float(np.einsum("kq,qr,kr->", coeffs, basis.penalty, coeffs))
    return loglik_sum / n - zeta * rough


def fit(patterns, basis: BasisSystem, p: int, config: FitConfig,
        start: ModelParams | None = None) -> FitResult:
    """Alternate E- and M-steps until the penalized objective stabilizes.

    The E-step is exact per pattern when the label budget allows and Gibbs
    otherwise, with a linearly growing sweep schedule. The objective trace
    uses a per-run fixed Monte-Carlo seed; convergence requires 3
    consecutive changes below outer_tol. Results are in canonical component
    order (expected score descending).
    """
    patterns = list(patterns)
    if not patterns:
        raise ValueError("need at least one pattern")
    stacked = _Stacked(patterns, basis)
    model = start if start is not None else initialize(
        patterns, basis, p, seed=int(derive_rng(config.seed, "init").integers(2**32)))
    if model.p != p:
        raise ValueError("start parameters have wrong number of components")
    coeffs, scores = model.coeffs.copy(), model.scores

    monitor_seed = int(derive_rng(config.seed, "monitor").integers(2**32))

    def objective(c, s):
        rng = np.random.default_rng(monitor_seed)
        return penalized_objective(_monitor_loglik(stacked, c, s, config.monitor_draws, rng),
                                   c, basis, config.zeta, stacked.n)

    trace = [objective(coeffs, scores)]
    converged = False
    quiet = 0
    iterations = 0
    for t in range(config.max_outer_iters):
        sweeps = int(math.ceil(config.gibbs_sweeps * (1.0 + t / 5.0)))
        stats = _estep(stacked, coeffs, scores, mode="auto", sweeps=sweeps,
                       rng=derive_rng(config.seed, "estep", t))
        coeffs, starved = _m_step_components_core(stats, stacked, basis, config.zeta, coeffs,
                                                  config.inner_tol, max_iter=30)
        scores = m_step_gamma(stats)
        if np.any(starved):
            alphas = scores.alphas.copy()
            alphas[starved] = 0.5 * (alphas[starved] + 0.1)
            scores = ScoreParams(alphas=alphas, beta=scores.beta)
        iterations = t + 1
        trace.append(objective(coeffs, scores))
        if abs(trace[-1] - trace[-2]) < config.outer_tol:
            quiet += 1
            if quiet >= 3:
                converged = True
                break
        else:
            quiet = 0

    final_sweeps = int(math.ceil(config.gibbs_sweeps * (1.0 + config.max_outer_iters / 5.0)))
    stats = _estep(stacked, coeffs, scores, mode="auto", sweeps=final_sweeps,
                   rng=derive_rng(config.seed, "estep-final"))
    order = canonical_order(coeffs, scores)
    stats = EStepStats(rep_ids=stats.rep_ids,
                       gammas=[g[:, order] for g in stats.gammas],
                       euk=stats.euk[:, order], elogu=stats.elogu[:, order])
    params = ModelParams(coeffs=coeffs, scores=scores, basis=basis)
    return FitResult(params=params, objective_trace=np.asarray(trace), e_stats=stats,
                     converged=converged, iterations=iterations)
