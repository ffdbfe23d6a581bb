"""Planar geometry primitives: homography projection, polylines, arc-length
resampling, discrete Frechet distance, unit normals, and the local
tangent-plane GPS conversion."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


class DegenerateProjection(ValueError):
    """Raised when a homography maps a point to the line at infinity."""


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, normalized so m[2,2] == 1."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("homography must be a 3x3 matrix")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography entries must be finite")
        det = np.linalg.det(m)
        if abs(det) <= 1e-12:
            raise ValueError(f"homography is singular (|det|={abs(det):.3g})")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def from_flat(cls, values) -> "Homography":
        values = np.asarray(values, dtype=float)
        if values.size != 9:
            raise ValueError("expected 9 row-major matrix entries")
        return cls(values.reshape(3, 3))

    @classmethod
    def load(cls, path) -> "Homography":
        with open(path) as fh:
            data = json.load(fh)
        return cls.from_flat(data["matrix"])

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))


def apply_homography(h: Homography, p) -> np.ndarray:
    """Project one point (px, py) through h; returns the planar (x, y)."""
    px, py = float(p[0]), float(p[1])
    if not (math.isfinite(px) and math.isfinite(py)):
        raise ValueError("point coordinates must be finite")
    u, v, w = h.m @ (px, py, 1.0)
    if abs(w) < 1e-9:
        raise DegenerateProjection(f"projective weight {w:.3g} too close to zero")
    return np.array([u / w, v / w])


def apply_homography_many(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Vectorized projection of an (n, 2) array of points."""
    pts = np.asarray(pts, dtype=float)
    uvw = np.column_stack([pts, np.ones(len(pts))]) @ h.m.T
    w = uvw[:, 2]
    if np.any(np.abs(w) < 1e-9):
        raise DegenerateProjection("projective weight too close to zero")
    return uvw[:, :2] / w[:, None]


@dataclass(frozen=True)
class TangentPlaneAnchor:
    """Per-scene anchor for the equirectangular GPS-to-meters projection."""

    lat0: float
    lon0: float

    @classmethod
    def load(cls, path) -> "TangentPlaneAnchor":
        with open(path) as fh:
            data = json.load(fh)
        return cls(lat0=float(data["lat0"]), lon0=float(data["lon0"]))


def gps_to_plane(anchor: TangentPlaneAnchor, lat, lon) -> np.ndarray:
    """Degrees to local meters: x east, y north."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    x = EARTH_RADIUS_M * math.cos(math.radians(anchor.lat0)) * np.radians(lon - anchor.lon0)
    y = EARTH_RADIUS_M * np.radians(lat - anchor.lat0)
    return np.stack([x, y], axis=-1)


def plane_to_gps(anchor: TangentPlaneAnchor, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lat = anchor.lat0 + np.degrees(y / EARTH_RADIUS_M)
    lon = anchor.lon0 + np.degrees(
        x / (EARTH_RADIUS_M * math.cos(math.radians(anchor.lat0)))
    )
    return np.stack([lat, lon], axis=-1)


@dataclass(frozen=True)
class Polyline:
    """Ordered planar curve with at least two distinct vertices."""

    pts: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.pts, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs an (n>=2, 2) array of points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline coordinates must be finite")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 1e-9):
            raise ValueError("consecutive polyline points must be > 1e-9 m apart")
        object.__setattr__(self, "pts", pts)

    def __len__(self) -> int:
        return len(self.pts)

    @property
    def cumulative_lengths(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.pts, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def arc_length(self) -> float:
        return float(self.cumulative_lengths[-1])


def resample_arclength(c: Polyline, k: int) -> Polyline:
    """k points equally spaced along the curve; endpoints preserved exactly."""
    if k < 2:
        raise ValueError("resampling needs k >= 2")
    cum = c.cumulative_lengths
    targets = np.linspace(0.0, cum[-1], k)
    x = np.interp(targets, cum, c.pts[:, 0])
    y = np.interp(targets, cum, c.pts[:, 1])
    pts = np.column_stack([x, y])
    pts[0] = c.pts[0]
    pts[-1] = c.pts[-1]
    return Polyline(pts)


def discrete_frechet(a: Polyline, b: Polyline) -> float:
    """Discrete Frechet distance via the coupled-walk min-max recurrence."""
    p = a.pts
    q = b.pts
    n, m = len(p), len(q)
    # pairwise distances as plain lists; the DP loop is sequential anyway
    diff = p[:, None, :] - q[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1]).tolist()
    dp = [[0.0] * m for _ in range(n)]
    dp[0][0] = d[0][0]
    for j in range(1, m):
        dp[0][j] = max(dp[0][j - 1], d[0][j])
    for i in range(1, n):
        dp[i][0] = max(dp[i - 1][0], d[i][0])
        row, prev, di = dp[i], dp[i - 1], d[i]
        for j in range(1, m):
            row[j] = max(di[j], min(prev[j], prev[j - 1], row[j - 1]))
    return dp[n - 1][m - 1]


def unit_normals(c: Polyline) -> np.ndarray:
    """Per-vertex unit normals n = (-dy, dx)/|d|; central differences at
    interior vertices, one-sided at the endpoints."""
    pts = c.pts
    tangents = np.empty_like(pts)
    tangents[0] = pts[1] - pts[0]
    tangents[-1] = pts[-1] - pts[-2]
    if len(pts) > 2:
        tangents[1:-1] = pts[2:] - pts[:-2]
    norms = np.linalg.norm(tangents, axis=1)
    if np.any(norms <= 0):
        raise ValueError("zero-length tangent")
    t = tangents / norms[:, None]
    return np.column_stack([-t[:, 1], t[:, 0]])
