"""Knowledge-based lane detection: direction grouping, histogram lane-count
estimation, 1-D KMeans clustering, smoothing-spline centerlines, and width /
boundary generation. All stages are steered by a DetectionParams set."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .geometry import Polyline, unit_normals
from .smoothing import fit_smoothing_spline

log = logging.getLogger(__name__)

# closed range of every steerable parameter, keyed by name
PARAM_RANGES = {
    "smoothing": (1.0, 20.0),
    "angle_threshold": (0.087, 1.571),
    "bin_count": (8.0, 256.0),
    "peak_prominence": (0.01, 0.9),
}

HISTOGRAM_SIGMA_BINS = 1.5
WIDTH_FLOOR_M = 2.5
WIDTH_CAP_M = 5.5
CENTERLINE_POINTS = 64
# longitudinal quantization for spline abscissae: points are averaged within
# bins this wide, which both realizes the ties-averaged rule and keeps the
# tridiagonal system well conditioned
TIE_TOLERANCE_M = 0.01


class InsufficientData(ValueError):
    """Raised when a scene or group has too few tracks/points to process."""


@dataclass
class Track:
    """One vehicle's time-ordered trajectory plus its derived summary."""

    track_id: str
    t: np.ndarray
    xy: np.ndarray
    mean_x: float = field(init=False)
    mean_y: float = field(init=False)
    heading: float = field(init=False)
    mean_speed: float = field(init=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.xy = np.asarray(self.xy, dtype=float)
        if len(self.t) < 2 or self.xy.shape != (len(self.t), 2):
            raise ValueError("track needs >= 2 samples of (t, x, y)")
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.xy))):
            raise ValueError("track samples must be finite")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("track timestamps must be strictly increasing")
        self.mean_x = float(np.mean(self.xy[:, 0]))
        self.mean_y = float(np.mean(self.xy[:, 1]))
        disp = self.xy[-1] - self.xy[0]
        self.heading = float(math.atan2(disp[1], disp[0]))
        path = float(np.sum(np.linalg.norm(np.diff(self.xy, axis=0), axis=1)))
        self.mean_speed = path / float(self.t[-1] - self.t[0])


def load_tracks_jsonl(path) -> list[Track]:
    """One track per line: {"id": ..., "samples": [[t, x, y], ...]}."""
    tracks = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            samples = np.asarray(rec["samples"], dtype=float)
            tracks.append(Track(str(rec["id"]), samples[:, 0], samples[:, 1:3]))
    return tracks


def save_tracks_jsonl(tracks, path) -> None:
    with open(path, "w") as fh:
        for tr in tracks:
            samples = np.column_stack([tr.t, tr.xy]).tolist()
            fh.write(json.dumps({"id": tr.track_id, "samples": samples}) + "\n")


@dataclass(frozen=True)
class DetectionParams:
    """Named parameter set steering the detection pipeline."""

    smoothing: float
    angle_threshold: float
    bin_count: int
    peak_prominence: float
    kmeans_seed: int = 0

    def __post_init__(self):
        for name in ("smoothing", "angle_threshold", "bin_count", "peak_prominence"):
            lo, hi = PARAM_RANGES[name]
            value = getattr(self, name)
            if not (lo <= value <= hi):
                raise ValueError(f"{name}={value} outside [{lo}, {hi}]")

    def normalized(self) -> dict[str, float]:
        """Each steerable parameter mapped to [0, 1] by its range."""
        out = {}
        for name, (lo, hi) in PARAM_RANGES.items():
            out[name] = (float(getattr(self, name)) - lo) / (hi - lo)
        return out

    def to_dict(self) -> dict:
        return {
            "smoothing": self.smoothing,
            "angle_threshold": self.angle_threshold,
            "bin_count": self.bin_count,
            "peak_prominence": self.peak_prominence,
            "kmeans_seed": self.kmeans_seed,
        }

    @classmethod
    def from_dict(cls, data) -> "DetectionParams":
        return cls(
            smoothing=float(data["smoothing"]),
            angle_threshold=float(data["angle_threshold"]),
            bin_count=int(data["bin_count"]),
            peak_prominence=float(data["peak_prominence"]),
            kmeans_seed=int(data.get("kmeans_seed", 0)),
        )


@dataclass
class Lane:
    centerline: Polyline
    width: float
    left_boundary: Polyline
    right_boundary: Polyline
    direction_group: int
    member_track_ids: list[str]

    def to_dict(self) -> dict:
        return {
            "direction_group": self.direction_group,
            "width": self.width,
            "centerline": self.centerline.pts.tolist(),
            "left_boundary": self.left_boundary.pts.tolist(),
            "right_boundary": self.right_boundary.pts.tolist(),
            "member_track_ids": list(self.member_track_ids),
        }

    @classmethod
    def from_dict(cls, data) -> "Lane":
        return cls(
            centerline=Polyline(np.asarray(data["centerline"])),
            width=float(data["width"]),
            left_boundary=Polyline(np.asarray(data["left_boundary"])),
            right_boundary=Polyline(np.asarray(data["right_boundary"])),
            direction_group=int(data["direction_group"]),
            member_track_ids=[str(i) for i in data.get("member_track_ids", [])],
        )


@dataclass
class LaneModel:
    scene_id: str
    lanes: list[Lane]

    @property
    def lane_count_per_group(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for lane in self.lanes:
            counts[lane.direction_group] = counts.get(lane.direction_group, 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "lanes": [lane.to_dict() for lane in self.lanes],
            "lane_count_per_group": {
                str(g): n for g, n in sorted(self.lane_count_per_group.items())
            },
        }

    @classmethod
    def from_dict(cls, data) -> "LaneModel":
        return cls(
            scene_id=str(data["scene_id"]),
            lanes=[Lane.from_dict(d) for d in data["lanes"]],
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "LaneModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def to_geojson(model: LaneModel) -> dict:
    """Centerlines and boundaries as LineString features for external plots."""
    features = []
    for idx, lane in enumerate(model.lanes):
        for role, poly in (
            ("centerline", lane.centerline),
            ("left_boundary", lane.left_boundary),
            ("right_boundary", lane.right_boundary),
        ):
            features.append(
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "LineString",
                        "coordinates": poly.pts.tolist(),
                    },
                    "properties": {
                        "lane_index": idx,
                        "direction_group": lane.direction_group,
                        "role": role,
                        "width": lane.width,
                    },
                }
            )
    return {"type": "FeatureCollection", "features": features}


def _circular_diff(a: float, b: float) -> float:
    d = abs(a - b) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


def group_by_direction(tracks, angle_threshold: float) -> list[list[Track]]:
    """Greedy agglomeration in ascending heading order: a track joins the
    current group while its circular heading difference to the group's first
    member stays within the threshold."""
    if not tracks:
        return []
    ordered = sorted(tracks, key=lambda tr: (tr.heading, tr.track_id))
    groups: list[list[Track]] = [[ordered[0]]]
    for tr in ordered[1:]:
        anchor = groups[-1][0].heading
        if _circular_diff(tr.heading, anchor) <= angle_threshold:
            groups[-1].append(tr)
        else:
            groups.append([tr])
    return groups


def estimate_lane_count(xs, params: DetectionParams) -> tuple[int, np.ndarray]:
    """Histogram peak detection over lateral positions.

    Returns (k, centers); falls back to a single peak at the median when no
    peak clears the prominence threshold.
    """
    xs = np.asarray(xs, dtype=float)
    if len(xs) < 5:
        raise InsufficientData(f"lane-count estimation needs >= 5 points, got {len(xs)}")
    lo, hi = float(np.min(xs)), float(np.max(xs))
    if hi - lo < 1e-9:
        return 1, np.array([lo])
    counts, edges = np.histogram(xs, bins=int(params.bin_count), range=(lo, hi))
    smoothed = gaussian_filter1d(counts.astype(float), HISTOGRAM_SIGMA_BINS)
    threshold = params.peak_prominence * float(np.max(smoothed))
    # pad so peaks at the first/last bin are still detected
    padded = np.concatenate([[-1.0], smoothed, [-1.0]])
    peaks, _ = find_peaks(padded, prominence=threshold)
    bin_centers = 0.5 * (edges[:-1] + edges[1:])
    if len(peaks) == 0:
        return 1, np.array([float(np.median(xs))])
    centers = bin_centers[peaks - 1]
    return len(centers), centers


def cluster_lanes(xs, k: int, centers, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """1-D Lloyd's KMeans from the given initial centers.

    Deterministic: ties assign to the lowest center index; an emptied cluster
    is re-seeded at the point farthest from its assigned center.
    """
    xs = np.asarray(xs, dtype=float)
    if not (1 <= k <= len(xs)):
        raise ValueError(f"need 1 <= k <= {len(xs)}, got k={k}")
    centers = np.asarray(centers, dtype=float).copy()
    if len(centers) != k:
        raise ValueError("initial centers must match k")
    assign = np.zeros(len(xs), dtype=int)
    for _ in range(100):
        dist = np.abs(xs[:, None] - centers[None, :])
        assign = np.argmin(dist, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = xs[assign == j]
            if len(members) > 0:
                new_centers[j] = float(np.mean(members))
            else:
                farthest = int(np.argmax(np.abs(xs - centers[assign])))
                new_centers[j] = xs[farthest]
        shift = float(np.max(np.abs(new_centers - centers)))
        centers = new_centers
        if shift < 1e-6:
            break
    assign = np.argmin(np.abs(xs[:, None] - centers[None, :]), axis=1)
    return assign, centers


def _merge_close_abscissae(y: np.ndarray, x: np.ndarray, tol: float = TIE_TOLERANCE_M):
    """Average x over points whose y fall in the same tol-wide bin; returns
    (y, x, counts) with strictly increasing y. Keeps the spline system well
    conditioned under exact or near ties."""
    order = np.argsort(y, kind="stable")
    y, x = y[order], x[order]
    bins = np.floor((y - y[0]) / tol).astype(np.int64)
    # relabel occupied bins consecutively
    group_idx = np.concatenate([[0], np.cumsum(np.diff(bins) > 0)])
    counts = np.bincount(group_idx).astype(float)
    ym = np.bincount(group_idx, weights=y) / counts
    xm = np.bincount(group_idx, weights=x) / counts
    # guard: collapse any residual near-coincident abscissae
    keep = np.concatenate([[True], np.diff(ym) > tol / 10.0])
    if not np.all(keep):
        group2 = np.cumsum(keep) - 1
        c2 = np.bincount(group2, weights=counts)
        ym = np.bincount(group2, weights=ym * counts) / c2
        xm = np.bincount(group2, weights=xm * counts) / c2
        counts = c2
    return ym, xm, counts


def fit_centerline(tracks, smoothing: float, n_points: int = CENTERLINE_POINTS) -> Polyline:
    """Penalized cubic smoothing spline x = f(y) over all member-track points,
    evaluated at n_points uniform y values. Falls back to a least-squares line
    when fewer than 4 distinct y values survive tie-merging."""
    pts = np.concatenate([tr.xy for tr in tracks], axis=0)
    if len(pts) < 4:
        raise InsufficientData("centerline fit needs >= 4 points")
    y, x, counts = _merge_close_abscissae(pts[:, 1], pts[:, 0])
    y_eval = np.linspace(float(y[0]), float(y[-1]), n_points)
    if len(y) < 4:
        log.warning("degraded centerline fit: %d distinct y values, using least squares line", len(y))
        design = np.column_stack([np.ones(len(y)), y])
        coef, *_ = np.linalg.lstsq(design * counts[:, None] ** 0.5, x * counts**0.5, rcond=None)
        x_eval = coef[0] + coef[1] * y_eval
    else:
        spline = fit_smoothing_spline(y, x, smoothing, weights=counts)
        x_eval = spline(y_eval)
    return Polyline(np.column_stack([x_eval, y_eval]))


def estimate_width(residuals, floor: float = WIDTH_FLOOR_M, cap: float = WIDTH_CAP_M) -> float:
    """Twice the population standard deviation of lateral residuals, clamped
    to physical lane-width bounds."""
    residuals = np.asarray(residuals, dtype=float)
    if len(residuals) < 2:
        raise ValueError("width estimation needs >= 2 residuals")
    return float(np.clip(2.0 * np.std(residuals), floor, cap))


def build_boundaries(centerline: Polyline, width: float) -> tuple[Polyline, Polyline]:
    if width <= 0:
        raise ValueError("width must be positive")
    normals = unit_normals(centerline)
    left = Polyline(centerline.pts + 0.5 * width * normals)
    right = Polyline(centerline.pts - 0.5 * width * normals)
    return left, right


def _circular_mean(angles: np.ndarray) -> float:
    return float(math.atan2(np.mean(np.sin(angles)), np.mean(np.cos(angles))))


def detect_lanes(
    tracks,
    params: DetectionParams,
    scene_id: str = "scene",
    n_points: int = CENTERLINE_POINTS,
    width_floor: float = WIDTH_FLOOR_M,
    width_cap: float = WIDTH_CAP_M,
) -> LaneModel:
    """Full pipeline: direction grouping, per-group lane-count estimation,
    clustering, per-lane spline fit, width and boundary generation.

    Each direction group is rotated so its mean heading points along +y; the
    histogram/cluster/spline stages run on that lateral/longitudinal frame and
    the resulting geometry is rotated back.
    """
    tracks = list(tracks)
    if len(tracks) < 5:
        raise InsufficientData(f"detection needs >= 5 tracks, got {len(tracks)}")
    groups = group_by_direction(tracks, params.angle_threshold)

    lanes: list[Lane] = []
    for g_idx, members in enumerate(groups):
        if len(members) < 5:
            log.warning("skipping direction group %d: only %d tracks", g_idx, len(members))
            continue
        theta = _circular_mean(np.array([tr.heading for tr in members]))
        alpha = math.pi / 2.0 - theta  # rotate group heading onto +y
        rot = np.array(
            [[math.cos(alpha), -math.sin(alpha)], [math.sin(alpha), math.cos(alpha)]]
        )
        rotated = [tr.xy @ rot.T for tr in members]
        lateral = np.array([float(np.mean(r[:, 0])) for r in rotated])

        k, centers = estimate_lane_count(lateral, params)
        k = min(k, len(lateral))
        assign, final_centers = cluster_lanes(lateral, k, centers[:k], params.kmeans_seed)

        for lane_rank in np.argsort(final_centers, kind="stable"):
            idxs = np.nonzero(assign == lane_rank)[0]
            if len(idxs) == 0:
                continue
            pts = np.concatenate([rotated[i] for i in idxs], axis=0)
            if len(pts) < 4:
                log.warning("skipping lane with %d points in group %d", len(pts), g_idx)
                continue
            y, x, counts = _merge_close_abscissae(pts[:, 1], pts[:, 0])
            # robust longitudinal span: median entry/exit over member tracks,
            # so sparse boundary stragglers cannot stretch the centerline
            lo = float(np.median([rotated[i][0, 1] for i in idxs]))
            hi = float(np.median([rotated[i][-1, 1] for i in idxs]))
            if not lo < hi:
                lo, hi = float(y[0]), float(y[-1])
            y_eval = np.linspace(lo, hi, n_points)
            if len(y) < 4:
                design = np.column_stack([np.ones(len(y)), y])
                coef, *_ = np.linalg.lstsq(
                    design * counts[:, None] ** 0.5, x * counts**0.5, rcond=None
                )
                x_eval = coef[0] + coef[1] * y_eval
                residuals = pts[:, 0] - (coef[0] + coef[1] * pts[:, 1])
            else:
                spline = fit_smoothing_spline(y, x, params.smoothing, weights=counts)
                x_eval = spline(y_eval)
                residuals = pts[:, 0] - spline(pts[:, 1])
            width = estimate_width(residuals, width_floor, width_cap)
            centerline = Polyline(np.column_stack([x_eval, y_eval]) @ rot)
            left, right = build_boundaries(centerline, width)
            lanes.append(
                Lane(
                    centerline=centerline,
                    width=width,
                    left_boundary=left,
                    right_boundary=right,
                    direction_group=g_idx,
                    member_track_ids=sorted(members[i].track_id for i in idxs),
                )
            )
    if not lanes:
        raise InsufficientData("no direction group produced a valid lane")
    return LaneModel(scene_id=scene_id, lanes=lanes)
