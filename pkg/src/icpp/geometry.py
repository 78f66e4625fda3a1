"""Observation regions and quadrature rules.

A region is either a closed interval (temporal processes) or a simple
polygon (spatial processes). Quadrature rules realize integrals over the
region: Gauss-Legendre panels in 1-D, a midpoint grid clipped to the
polygon in 2-D. Points exactly on the boundary count as inside (closed
region).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely

from .errors import InvalidRegionError, OutOfRegionError

_GL_ORDER = 8


@dataclass(frozen=True)
class Region:
    """Observation window: interval [lower, upper] or simple polygon."""

    dimension: int
    lower: float = 0.0
    upper: float = 0.0
    vertices: np.ndarray | None = None
    _polygon: object = field(default=None, repr=False, compare=False)

    @classmethod
    def interval(cls, lower: float, upper: float) -> "Region":
        lower, upper = float(lower), float(upper)
        if not lower < upper:
            raise InvalidRegionError(f"interval requires lower < upper, got [{lower}, {upper}]")
        return cls(dimension=1, lower=lower, upper=upper)

    @classmethod
    def polygon(cls, vertices) -> "Region":
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise InvalidRegionError("polygon needs an ordered (n>=3, 2) vertex array")
        poly = shapely.Polygon(verts)
        if not poly.is_valid or not poly.is_simple:
            raise InvalidRegionError("polygon must be simple (non-self-intersecting)")
        if poly.area <= 0:
            raise InvalidRegionError("polygon has zero area")
        return cls(dimension=2, vertices=verts, _polygon=poly)

    def measure(self) -> float:
        """Length (1-D) or area (2-D) of the region."""
        if self.dimension == 1:
            return self.upper - self.lower
        return self._polygon.area

    def bbox(self) -> tuple[float, float, float, float]:
        if self.dimension == 1:
            return (self.lower, self.upper, 0.0, 0.0)
        x0, y0, x1, y1 = self._polygon.bounds
        return (x0, x1, y0, y1)

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the closed region."""
        pts = np.asarray(points, dtype=float)
        if self.dimension == 1:
            pts = pts.reshape(-1)
            return (pts >= self.lower) & (pts <= self.upper)
        pts = pts.reshape(-1, 2)
        geoms = shapely.points(pts)
        return shapely.covers(self._polygon, geoms)

    def require_inside(self, points) -> None:
        inside = self.contains(points)
        if not np.all(inside):
            idx = np.nonzero(~inside)[0]
            raise OutOfRegionError(f"{idx.size} point(s) outside the region (first index {idx[0]})")


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights realizing integration over a region.

    ``nodes`` is (n,) for 1-D regions and (n, 2) for 2-D; weights sum to the
    region measure up to the grid resolution.
    """

    region: Region
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise InvalidRegionError("quadrature weights must be positive")

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def build_quadrature(region: Region, resolution: int) -> QuadratureRule:
    """Quadrature over the region.

    1-D: ``resolution`` Gauss-Legendre panels of fixed order on [l, u].
    2-D: midpoint rule on a ``resolution`` x ``resolution`` grid over the
    bounding box, keeping cells whose center lies in the polygon.
    """
    resolution = int(resolution)
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if region.measure() <= 0:
        raise InvalidRegionError("region has zero measure")

    if region.dimension == 1:
        x, w = np.polynomial.legendre.leggauss(_GL_ORDER)
        edges = np.linspace(region.lower, region.upper, resolution + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel()
        return QuadratureRule(region=region, nodes=nodes, weights=weights)

    x0, x1, y0, y1 = region.bbox()
    xc = x0 + (x1 - x0) * (np.arange(resolution) + 0.5) / resolution
    yc = y0 + (y1 - y0) * (np.arange(resolution) + 0.5) / resolution
    gx, gy = np.meshgrid(xc, yc, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    inside = region.contains(centers)
    if not np.any(inside):
        raise InvalidRegionError("no grid cell centers fall inside the polygon")
    cell_area = (x1 - x0) * (y1 - y0) / resolution**2
    nodes = centers[inside]
    weights = np.full(nodes.shape[0], cell_area)
    return QuadratureRule(region=region, nodes=nodes, weights=weights)
