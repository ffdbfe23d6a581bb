"""Geometric losses for comparing a detected lane model against a reference:
lane matching, shape consistency, width geometry, centerline embedding,
lane-count error, the weighted composite, and the parameter-alignment loss."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import Polyline, discrete_frechet, resample_arclength
from .lanes import PARAM_RANGES, DetectionParams, LaneModel

log = logging.getLogger(__name__)

FRECHET_RESAMPLE_POINTS = 64
EMBED_RESAMPLE_POINTS = 16
DEFAULT_WEIGHTS = (1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class LaneMatch:
    pairs: tuple[tuple[int, int], ...]
    unmatched_detected: tuple[int, ...]
    unmatched_reference: tuple[int, ...]


@dataclass(frozen=True)
class LossBreakdown:
    consistency: float
    geometry: float
    center: float
    lane_num: float
    total: float
    weights: tuple[float, float, float, float]

    def to_dict(self) -> dict:
        return {
            "consistency": self.consistency,
            "geometry": self.geometry,
            "center": self.center,
            "lane_num": self.lane_num,
            "total": self.total,
            "weights": list(self.weights),
        }


def _resampled_centerline(lane, k: int = FRECHET_RESAMPLE_POINTS) -> Polyline:
    return resample_arclength(lane.centerline, k)


def _centerline_distance(a, b, k: int = FRECHET_RESAMPLE_POINTS) -> float:
    return discrete_frechet(_resampled_centerline(a, k), _resampled_centerline(b, k))


def match_lanes(detected: LaneModel, reference: LaneModel, optimal: bool = False) -> LaneMatch:
    """Match detected to reference lanes within each direction group by
    minimizing centerline Frechet distance. Greedy by default (transparent and
    deterministic); exhaustive assignment behind the `optimal` switch."""
    if not detected.lanes or not reference.lanes:
        raise ValueError("both lane models must be non-empty")
    pairs: list[tuple[int, int]] = []
    unmatched_det: list[int] = []
    unmatched_ref: list[int] = []
    groups = sorted(
        {lane.direction_group for lane in detected.lanes}
        | {lane.direction_group for lane in reference.lanes}
    )
    for group in groups:
        det_idx = [i for i, l in enumerate(detected.lanes) if l.direction_group == group]
        ref_idx = [j for j, l in enumerate(reference.lanes) if l.direction_group == group]
        if not det_idx or not ref_idx:
            unmatched_det.extend(det_idx)
            unmatched_ref.extend(ref_idx)
            continue
        dist = {
            (i, j): _centerline_distance(detected.lanes[i], reference.lanes[j])
            for i in det_idx
            for j in ref_idx
        }
        if optimal and len(det_idx) <= len(ref_idx):
            best = min(
                itertools.permutations(ref_idx, len(det_idx)),
                key=lambda perm: sum(dist[(i, j)] for i, j in zip(det_idx, perm)),
            )
            chosen = list(zip(det_idx, best))
        elif optimal:
            best = min(
                itertools.permutations(det_idx, len(ref_idx)),
                key=lambda perm: sum(dist[(i, j)] for i, j in zip(perm, ref_idx)),
            )
            chosen = list(zip(best, ref_idx))
        else:
            chosen = []
            free_det, free_ref = set(det_idx), set(ref_idx)
            while free_det and free_ref:
                i, j = min(
                    ((i, j) for i in sorted(free_det) for j in sorted(free_ref)),
                    key=lambda ij: (dist[ij], ij),
                )
                chosen.append((i, j))
                free_det.discard(i)
                free_ref.discard(j)
        matched_det = {i for i, _ in chosen}
        matched_ref = {j for _, j in chosen}
        unmatched_det.extend(i for i in det_idx if i not in matched_det)
        unmatched_ref.extend(j for j in ref_idx if j not in matched_ref)
        pairs.extend(sorted(chosen))
    return LaneMatch(
        pairs=tuple(sorted(pairs)),
        unmatched_detected=tuple(sorted(unmatched_det)),
        unmatched_reference=tuple(sorted(unmatched_ref)),
    )


def loss_consistency(match: LaneMatch, detected: LaneModel, reference: LaneModel) -> float:
    """Mean Frechet distance over matched centerline pairs (meters)."""
    if not match.pairs:
        log.warning("no matched lanes; consistency loss reported as 0")
        return 0.0
    values = [
        _centerline_distance(detected.lanes[i], reference.lanes[j])
        for i, j in match.pairs
    ]
    return float(np.mean(values))


def loss_geometry(match: LaneMatch, detected: LaneModel, reference: LaneModel) -> float:
    """Sum of squared width differences over matched pairs (m^2)."""
    return float(
        sum(
            (detected.lanes[i].width - reference.lanes[j].width) ** 2
            for i, j in match.pairs
        )
    )


def embed_centerline(poly: Polyline, k: int = EMBED_RESAMPLE_POINTS) -> np.ndarray:
    """Fixed curve embedding: resample to k points, translate the first vertex
    to the origin, flatten."""
    pts = resample_arclength(poly, k).pts
    return (pts - pts[0]).ravel()


def loss_center(match: LaneMatch, detected: LaneModel, reference: LaneModel) -> float:
    """Triplet-style centerline embedding loss (m^2).

    Per matched pair (s=detected, c=reference): hinge of positive embedding
    distance ||f(c)-f(s)||^2 against the nearest other reference lane in the
    same direction group as negative; pairs with no negative contribute the
    positive distance alone.
    """
    if not match.pairs:
        return 0.0
    det_emb = {i: embed_centerline(detected.lanes[i].centerline) for i, _ in match.pairs}
    ref_emb = {
        j: embed_centerline(reference.lanes[j].centerline)
        for j in range(len(reference.lanes))
    }
    total = 0.0
    for i, j in match.pairs:
        positive = float(np.sum((ref_emb[j] - det_emb[i]) ** 2))
        group = reference.lanes[j].direction_group
        candidates = [
            r
            for r in range(len(reference.lanes))
            if r != j and reference.lanes[r].direction_group == group
        ]
        if not candidates:
            total += positive
            continue
        negative = min(float(np.sum((ref_emb[j] - ref_emb[r]) ** 2)) for r in candidates)
        total += max(positive - negative, 0.0)
    return total


def loss_lane_num(detected: LaneModel, reference: LaneModel) -> float:
    """Sum over direction groups of |detected count - reference count|."""
    det = detected.lane_count_per_group
    ref = reference.lane_count_per_group
    groups = set(det) | set(ref)
    return float(sum(abs(det.get(g, 0) - ref.get(g, 0)) for g in groups))


def loss_total(
    detected: LaneModel,
    reference: LaneModel,
    weights=DEFAULT_WEIGHTS,
    match: LaneMatch | None = None,
) -> LossBreakdown:
    """All components plus their weighted sum."""
    weights = tuple(float(w) for w in weights)
    if len(weights) != 4 or any(w < 0 for w in weights):
        raise ValueError("need 4 non-negative weights")
    if match is None:
        match = match_lanes(detected, reference)
    consistency = loss_consistency(match, detected, reference)
    geometry = loss_geometry(match, detected, reference)
    center = loss_center(match, detected, reference)
    lane_num = loss_lane_num(detected, reference)
    total = (
        weights[0] * consistency
        + weights[1] * geometry
        + weights[2] * center
        + weights[3] * lane_num
    )
    return LossBreakdown(
        consistency=consistency,
        geometry=geometry,
        center=center,
        lane_num=lane_num,
        total=total,
        weights=weights,
    )


def loss_param(predicted: DetectionParams, reference: DetectionParams) -> float:
    """Squared error over the steerable parameters, each normalized to [0, 1]
    by its range; the clustering seed is excluded."""
    pred = predicted.normalized()
    ref = reference.normalized()
    return float(sum((pred[name] - ref[name]) ** 2 for name in PARAM_RANGES))
