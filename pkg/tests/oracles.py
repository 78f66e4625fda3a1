"""Independent reference implementations used only to check the package.

These deliberately avoid the package's own computational paths: B-splines
via the textbook Cox-de Boor recursion, integrals via dense trapezoid
rules, derivatives via central differences.
"""

import numpy as np


def cox_de_boor(x: float, degree: int, i: int, knots) -> float:
    """Single B-spline basis value by the recursive definition."""
    t = knots
    if degree == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # close the last nonempty interval on the right
        if x == t[-1] and t[i] < t[i + 1] and t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    left = 0.0
    if t[i + degree] != t[i]:
        left = (x - t[i]) / (t[i + degree] - t[i]) * cox_de_boor(x, degree - 1, i, t)
    right = 0.0
    if t[i + degree + 1] != t[i + 1]:
        right = (t[i + degree + 1] - x) / (t[i + degree + 1] - t[i + 1]) \
            * cox_de_boor(x, degree - 1, i + 1, t)
    return left + right


def de_boor_design(points, knots, degree=3) -> np.ndarray:
    q = len(knots) - degree - 1
    out = np.zeros((len(points), q))
    for r, x in enumerate(points):
        for j in range(q):
            out[r, j] = cox_de_boor(float(x), degree, j, knots)
    return out


def central_second_difference(f, x, h=1e-4):
    """Second derivative by central differences, one-sided at domain ends."""
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / h**2


def trapezoid_weights(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def numerical_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g
