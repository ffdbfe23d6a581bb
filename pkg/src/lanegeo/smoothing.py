"""Natural cubic smoothing spline solved via the classic tridiagonal system.

Minimizes  sum_i (x_i - g(y_i))^2 + lam * integral g''(y)^2 dy  over natural
cubic splines with knots at the data abscissae. The second derivatives at the
interior knots solve a banded symmetric positive definite system, so the fit
is O(n).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solveh_banded


class SmoothingSpline:
    """Callable natural cubic spline through (knots, values) with given
    second derivatives at the knots (zero at both ends)."""

    def __init__(self, knots: np.ndarray, values: np.ndarray, second_derivs: np.ndarray):
        self.knots = knots
        self.values = values
        self.second_derivs = second_derivs

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        y, g, m = self.knots, self.values, self.second_derivs
        idx = np.clip(np.searchsorted(y, q, side="right") - 1, 0, len(y) - 2)
        h = y[idx + 1] - y[idx]
        a = (y[idx + 1] - q) / h
        b = (q - y[idx]) / h
        # clamp to linear extrapolation outside the data range (natural spline)
        inside = (q >= y[0]) & (q <= y[-1])
        cubic = (
            a * g[idx]
            + b * g[idx + 1]
            + ((a**3 - a) * m[idx] + (b**3 - b) * m[idx + 1]) * h**2 / 6.0
        )
        if np.all(inside):
            return cubic
        slope_lo = (g[1] - g[0]) / (y[1] - y[0]) - (y[1] - y[0]) * m[1] / 6.0
        slope_hi = (g[-1] - g[-2]) / (y[-1] - y[-2]) + (y[-1] - y[-2]) * m[-2] / 6.0
        out = np.where(
            q < y[0],
            g[0] + slope_lo * (q - y[0]),
            np.where(q > y[-1], g[-1] + slope_hi * (q - y[-1]), cubic),
        )
        return out


def fit_smoothing_spline(
    y: np.ndarray, x: np.ndarray, lam: float, weights: np.ndarray | None = None
) -> SmoothingSpline:
    """Fit the penalized natural cubic spline x ~ g(y).

    y must be strictly increasing with at least 4 points; lam >= 0. Optional
    per-point weights scale the squared residuals (e.g. multiplicities of
    points merged at one abscissa).
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n = len(y)
    if n < 4:
        raise ValueError("smoothing spline needs at least 4 distinct abscissae")
    if np.any(np.diff(y) <= 0):
        raise ValueError("abscissae must be strictly increasing")
    if lam < 0:
        raise ValueError("penalty must be non-negative")
    if weights is None:
        inv_w = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n,) or np.any(weights <= 0):
            raise ValueError("weights must be positive, one per point")
        inv_w = 1.0 / weights

    h = np.diff(y)  # n-1
    # Q: n x (n-2), three non-zeros per column j (0-based interior knot j+1)
    inv_h = 1.0 / h
    # R (n-2 x n-2) tridiagonal
    r_diag = (h[:-1] + h[1:]) / 3.0
    r_off = h[1:-1] / 6.0

    # Build B = R + lam * Q^T Q, pentadiagonal symmetric. Column j of Q has
    # entries q[j] = 1/h_j at row j, -(1/h_j + 1/h_{j+1}) at row j+1,
    # 1/h_{j+1} at row j+2.
    q0 = inv_h[:-1]              # row j
    q1 = -(inv_h[:-1] + inv_h[1:])  # row j+1
    q2 = inv_h[1:]               # row j+2

    m = n - 2
    d0 = r_diag + lam * (
        q0**2 * inv_w[:-2] + q1**2 * inv_w[1:-1] + q2**2 * inv_w[2:]
    )
    d1 = np.zeros(m - 1)
    if m > 1:
        d1 = r_off + lam * (
            q1[:-1] * q0[1:] * inv_w[1:-2] + q2[:-1] * q1[1:] * inv_w[2:-1]
        )
    d2 = np.zeros(max(m - 2, 0))
    if m > 2:
        d2 = lam * q2[:-2] * q0[2:] * inv_w[2:-2]

    # Q^T x
    qtx = q0 * x[:-2] + q1 * x[1:-1] + q2 * x[2:]

    ab = np.zeros((3, m))
    ab[0, 2:] = d2
    ab[1, 1:] = d1
    ab[2, :] = d0
    gamma = solveh_banded(ab, qtx, lower=False)

    # g = x - lam * W^-1 Q gamma
    qg = np.zeros(n)
    qg[:-2] += q0 * gamma
    qg[1:-1] += q1 * gamma
    qg[2:] += q2 * gamma
    g = x - lam * qg * inv_w

    second = np.zeros(n)
    second[1:-1] = gamma
    return SmoothingSpline(y, g, second)
