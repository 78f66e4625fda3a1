"""Non-negative basis systems for component densities.

Two families are supported: clamped cubic B-splines on an interval and
(un-normalized) Gaussian radial kernels on a polygon. A built system
carries the integral vector a_j = integral of basis_j over the region and
the roughness Gram matrix so that c' Omega c equals the integrated squared
Frobenius norm of the Hessian of c' beta(t).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import BasisError
from .geometry import QuadratureRule, Region

CUBIC_BSPLINE = "cubic-bspline-1d"
GAUSSIAN_RBF = "gaussian-rbf-2d"

_DEGREE = 3
_BANDWIDTH_SPACING_FACTOR = 1.2  # default h = 1.2 x center spacing


@dataclass(frozen=True)
class BasisSystem:
    """A fixed basis over a region, with integrals and penalty Gram matrix."""

    family: str
    region: Region
    q: int
    knots: np.ndarray | None = None          # full clamped knot vector (1-D)
    centers: np.ndarray | None = None        # (q, 2) kernel centers (2-D)
    bandwidth: float | None = None
    integrals: np.ndarray = field(default=None)   # a, length q
    penalty: np.ndarray = field(default=None)     # Omega, q x q
    ref: str = ""

    def __post_init__(self):
        if self.integrals is not None and np.any(self.integrals <= 0):
            raise BasisError("every basis function must have positive integral over the region")


def _basis_ref(family, region, layout_bytes) -> str:
    h = hashlib.sha256()
    h.update(family.encode())
    h.update(np.asarray(region.bbox(), dtype=float).tobytes())
    h.update(layout_bytes)
    return h.hexdigest()[:12]


def _bspline_knot_vector(region: Region, knots) -> np.ndarray:
    if np.isscalar(knots):
        k = int(knots)
        if k < 2:
            raise BasisError("need at least 2 subintervals (1 interior knot)")
        breaks = np.linspace(region.lower, region.upper, k + 1)
    else:
        breaks = np.asarray(knots, dtype=float)
        if breaks.ndim != 1 or breaks.size < 3:
            raise BasisError("breakpoint vector needs at least 3 values")
        if np.any(np.diff(breaks) <= 0):
            raise BasisError("breakpoints must be strictly increasing")
        if breaks[0] < region.lower or breaks[-1] > region.upper:
            raise BasisError("knots outside region")
        if breaks[0] != region.lower or breaks[-1] != region.upper:
            raise BasisError("breakpoints must span the region exactly")
    return np.concatenate([[breaks[0]] * _DEGREE, breaks, [breaks[-1]] * _DEGREE])


def build_basis(family: str, region: Region, quad: QuadratureRule, *,
                knots=None, centers=None, bandwidth: float | None = None) -> BasisSystem:
    """Construct a BasisSystem, computing integrals and the penalty Gram matrix.

    For B-splines, ``knots`` is the number K of equispaced subintervals
    (q = K + 3) or an explicit breakpoint vector. For radial kernels,
    ``centers`` is a (rows, cols) grid layout over the bounding box or an
    explicit (q, 2) array; ``bandwidth`` defaults to 1.2 x the center
    spacing for grid layouts.
    """
    if family == CUBIC_BSPLINE:
        if region.dimension != 1:
            raise BasisError("cubic-bspline-1d requires an interval region")
        t = _bspline_knot_vector(region, knots)
        q = t.size - (_DEGREE + 1)
        basis = BasisSystem(family=family, region=region, q=q, knots=t,
                            integrals=np.ones(q), penalty=np.zeros((q, q)),
                            ref=_basis_ref(family, region, t.tobytes()))
    elif family == GAUSSIAN_RBF:
        if region.dimension != 2:
            raise BasisError("gaussian-rbf-2d requires a polygon region")
        if centers is None:
            raise BasisError("radial basis needs centers")
        if isinstance(centers, tuple) and len(centers) == 2 and np.isscalar(centers[0]):
            rows, cols = int(centers[0]), int(centers[1])
            x0, x1, y0, y1 = region.bbox()
            cx = np.linspace(x0, x1, cols)
            cy = np.linspace(y0, y1, rows)
            gx, gy = np.meshgrid(cx, cy, indexing="xy")
            pts = np.column_stack([gx.ravel(), gy.ravel()])
            if bandwidth is None:
                spacing = max((x1 - x0) / max(cols - 1, 1), (y1 - y0) / max(rows - 1, 1))
                bandwidth = _BANDWIDTH_SPACING_FACTOR * spacing
        else:
            pts = np.asarray(centers, dtype=float).reshape(-1, 2)
        if pts.shape[0] < 4:
            raise BasisError("need at least 4 radial kernel centers")
        if bandwidth is None or bandwidth <= 0:
            raise BasisError("bandwidth must be positive")
        layout = np.concatenate([pts.ravel(), [float(bandwidth)]])
        basis = BasisSystem(family=family, region=region, q=pts.shape[0],
                            centers=pts, bandwidth=float(bandwidth),
                            integrals=np.ones(pts.shape[0]),
                            penalty=np.zeros((pts.shape[0],) * 2),
                            ref=_basis_ref(family, region, layout.tobytes()))
    else:
        raise BasisError(f"unknown basis family: {family!r}")

    a = _raw_design(basis, quad.nodes).T @ quad.weights
    omega = penalty_gram(basis, quad)
    object.__setattr__(basis, "integrals", a)
    object.__setattr__(basis, "penalty", omega)
    basis.__post_init__()
    return basis


def _raw_design(basis: BasisSystem, points) -> np.ndarray:
    """(n, q) matrix of basis values, without region membership checks."""
    if basis.family == CUBIC_BSPLINE:
        x = np.asarray(points, dtype=float).reshape(-1)
        m = BSpline.design_matrix(x, basis.knots, _DEGREE).toarray()
        return np.maximum(m, 0.0)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    d2 = ((pts[:, None, :] - basis.centers[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2.0 * basis.bandwidth**2))


def evaluate_basis(basis: BasisSystem, points) -> np.ndarray:
    """(n, q) matrix with entry (i, j) = basis_j(point_i); points must lie in the region."""
    basis.region.require_inside(points)
    return _raw_design(basis, points)


def basis_hessian_components(basis: BasisSystem, points) -> tuple[np.ndarray, ...]:
    """Analytic second derivatives of every basis function at the points.

    Returns (d2,) for 1-D and (dxx, dxy, dyy) for 2-D, each (n, q).
    """
    if basis.family == CUBIC_BSPLINE:
        x = np.asarray(points, dtype=float).reshape(-1)
        spl = BSpline(basis.knots, np.eye(basis.q), _DEGREE)
        return (spl.derivative(2)(x),)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    h2 = basis.bandwidth**2
    dx = pts[:, 0:1] - basis.centers[None, :, 0]
    dy = pts[:, 1:2] - basis.centers[None, :, 1]
    val = np.exp(-(dx**2 + dy**2) / (2.0 * h2))
    dxx = val * (dx**2 / h2**2 - 1.0 / h2)
    dyy = val * (dy**2 / h2**2 - 1.0 / h2)
    dxy = val * dx * dy / h2**2
    return (dxx, dxy, dyy)


def penalty_gram(basis: BasisSystem, quad: QuadratureRule) -> np.ndarray:
    """Roughness Gram matrix: quadrature of the Frobenius product of Hessians.

    In 1-D this is the usual integrated squared second derivative; in 2-D
    the mixed partial enters twice, matching the Frobenius norm.
    """
    parts = basis_hessian_components(basis, quad.nodes)
    w = quad.weights
    if len(parts) == 1:
        d2 = parts[0]
        omega = (d2 * w[:, None]).T @ d2
    else:
        dxx, dxy, dyy = parts
        omega = (dxx * w[:, None]).T @ dxx
        omega += 2.0 * (dxy * w[:, None]).T @ dxy
        omega += (dyy * w[:, None]).T @ dyy
    return 0.5 * (omega + omega.T)
