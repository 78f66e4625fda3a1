"""Active-set solver for concave quadratic maximization over a cone.

Solves max g'x - x'Fx/2 subject to A_eq x = 0 and x_i >= 0 for a given
index set, with F symmetric positive semidefinite. The origin is always
feasible, so the solver starts there and exchanges active bounds until the
KKT conditions hold.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class QPResult:
    def __init__(self, x, kkt_residual, iterations, ridge_used):
        self.x = x
        self.kkt_residual = kkt_residual
        self.iterations = iterations
        self.ridge_used = ridge_used


def _solve_eqp(F, g, rows, ridge_scale):
    """Equality-constrained stationary point: F x + C' lam = g, C x = 0."""
    d = F.shape[0]
    n_c = rows.shape[0]
    kkt = np.zeros((d + n_c, d + n_c))
    kkt[:d, :d] = F
    kkt[:d, d:] = rows.T
    kkt[d:, :d] = rows
    rhs = np.concatenate([g, np.zeros(n_c)])
    ridge_used = False
    try:
        sol = scipy.linalg.solve(kkt, rhs, assume_a="sym")
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        ridge_used = True
        kkt[:d, :d] = F + 1e-10 * max(ridge_scale, 1.0) * np.eye(d)
        sol = scipy.linalg.lstsq(kkt, rhs, lapack_driver="gelsd")[0]
    return sol[:d], sol[d:], ridge_used


def solve_cone_qp(F: np.ndarray, g: np.ndarray, equality: np.ndarray,
                  nonneg_idx, *, tol: float = 1e-10, max_iter: int | None = None) -> QPResult:
    """Maximize g'x - x'Fx/2 over {A_eq x = 0, x_i >= 0 for i in nonneg_idx}."""
    F = np.asarray(F, dtype=float)
    g = np.asarray(g, dtype=float)
    d = g.size
    equality = np.asarray(equality, dtype=float).reshape(-1, d)
    nonneg_idx = np.asarray(nonneg_idx, dtype=int).reshape(-1)
    scale = max(1.0, float(np.max(np.abs(g))), float(np.max(np.abs(F))))
    if max_iter is None:
        max_iter = 3 * (d + nonneg_idx.size) + 20

    x = np.zeros(d)
    working = set(int(i) for i in nonneg_idx)
    ridge_used = False
    unit = np.eye(d)
    for it in range(max_iter):
        w_list = sorted(working)
        rows = np.vstack([equality, unit[w_list]]) if w_list else equality
        x_new, lam, ridge = _solve_eqp(F, g, rows, scale)
        ridge_used = ridge_used or ridge
        step = x_new - x
        if np.max(np.abs(step)) <= tol * max(1.0, np.max(np.abs(x))):
            # multipliers of the working bounds must be non-positive for a max
            lam_ineq = lam[equality.shape[0]:]
            if lam_ineq.size == 0 or np.max(lam_ineq) <= tol * scale:
                x = x_new
                break
            drop = w_list[int(np.argmax(lam_ineq))]
            working.discard(drop)
            continue
        blocked = None
        alpha = 1.0
        for i in nonneg_idx:
            i = int(i)
            if i in working or step[i] >= -tol:
                continue
            a_i = -x[i] / step[i]
            if a_i < alpha:
                alpha = a_i
                blocked = i
        x = x + alpha * step
        x[list(working)] = 0.0
        if blocked is not None:
            working.add(blocked)
            x[blocked] = 0.0
    else:
        raise RuntimeError("active-set QP did not converge")

    resid = _kkt_residual(F, g, equality, nonneg_idx, x, scale)
    return QPResult(x=x, kkt_residual=resid, iterations=it + 1, ridge_used=ridge_used)


def _kkt_residual(F, g, equality, nonneg_idx, x, scale):
    """Scaled max violation of stationarity, feasibility and complementarity."""
    grad = g - F @ x  # gradient of the maximized objective
    d = x.size
    free = np.ones(d, dtype=bool)
    active = [int(i) for i in nonneg_idx if x[int(i)] <= 1e-12]
    free[active] = False
    rows = [equality] if equality.shape[0] else []
    if active:
        rows.append(np.eye(d)[active])
    if rows:
        c_mat = np.vstack(rows)
        # least-squares multipliers for stationarity grad = C' mu
        mu, *_ = np.linalg.lstsq(c_mat.T, grad, rcond=None)
        stat = np.max(np.abs(grad - c_mat.T @ mu))
        # bound multipliers must support a maximum (mu_i <= 0 for x_i >= 0 active)
        mu_bounds = mu[equality.shape[0]:]
        sign = float(np.max(mu_bounds)) if mu_bounds.size else 0.0
    else:
        stat = np.max(np.abs(grad)) if d else 0.0
        sign = 0.0
    feas_eq = np.max(np.abs(equality @ x)) if equality.shape[0] else 0.0
    feas_in = max(0.0, float(-np.min(x[nonneg_idx]))) if nonneg_idx.size else 0.0
    return max(stat, max(sign, 0.0), feas_eq, feas_in) / scale
