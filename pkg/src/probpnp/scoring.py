"""Oriented 3D box overlap and localization confidence scoring.

Boxes are yaw-oriented: the overlap of two boxes factors into the
intersection of their bird's-eye-view (BEV) rectangles in the camera
x-z plane times the overlap of their vertical extents. The BEV
intersection is computed exactly by clipping one convex quadrilateral
against the other.

The localization confidence of a pose distribution is the expected
score of the overlap between the mean box and a box with a pose drawn
from the distribution, estimated by Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Dimensions, Pose
from .losses import target_score
from .pnp import PoseDistribution

# Floor applied to covariance eigenvalues before factorization.
EIGENVALUE_FLOOR = 1e-12

# Default number of pose samples for the Monte-Carlo confidence.
DEFAULT_SCORE_SAMPLES = 50


@dataclass(frozen=True)
class Box3D:
    """Yaw-oriented box: pose of the bottom center plus dimensions."""

    pose: Pose
    dims: Dimensions


@dataclass(frozen=True)
class Score:
    """Detection confidence split into localization and 2D factors."""

    c_3dloc: float
    c_2d: float
    c_3d: float


def _bev_corners(box: Box3D) -> list[tuple[float, float]]:
    """Counterclockwise corners of the box footprint in the camera x-z plane."""
    c, s = math.cos(box.pose.beta), math.sin(box.pose.beta)
    tx, _, tz = box.pose.t
    hl, hw = 0.5 * box.dims.l, 0.5 * box.dims.w
    corners = []
    for ox, oz in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        corners.append((c * ox + s * oz + tx, -s * ox + c * oz + tz))
    return corners


def _clip_convex(subject: list[tuple[float, float]], clip: list[tuple[float, float]]):
    """Sutherland-Hodgman clip of a convex polygon by a CCW convex polygon."""
    output = subject
    m = len(clip)
    for i in range(m):
        if not output:
            return []
        ax, az = clip[i]
        bx, bz = clip[(i + 1) % m]
        ex, ez = bx - ax, bz - az
        polygon = output
        output = []
        px, pz = polygon[-1]
        prev_side = ex * (pz - az) - ez * (px - ax)
        for qx, qz in polygon:
            side = ex * (qz - az) - ez * (qx - ax)
            if side >= 0.0:
                if prev_side < 0.0:
                    t = prev_side / (prev_side - side)
                    output.append((px + t * (qx - px), pz + t * (qz - pz)))
                output.append((qx, qz))
            elif prev_side >= 0.0:
                t = prev_side / (prev_side - side)
                output.append((px + t * (qx - px), pz + t * (qz - pz)))
            px, pz, prev_side = qx, qz, side
    return output


def _polygon_area(poly: list[tuple[float, float]]) -> float:
    if len(poly) < 3:
        return 0.0
    total = 0.0
    px, pz = poly[-1]
    for qx, qz in poly:
        total += px * qz - qx * pz
        px, pz = qx, qz
    return 0.5 * abs(total)


def iou3d(a: Box3D, b: Box3D) -> float:
    """Intersection volume over union volume of two yaw-oriented boxes."""
    y_lo = max(a.pose.t[1] - a.dims.h, b.pose.t[1] - b.dims.h)
    y_hi = min(a.pose.t[1], b.pose.t[1])
    vertical = y_hi - y_lo
    if vertical <= 0.0:
        return 0.0
    bev = _polygon_area(_clip_convex(_bev_corners(a), _bev_corners(b)))
    inter = bev * vertical
    vol_a = a.dims.l * a.dims.h * a.dims.w
    vol_b = b.dims.l * b.dims.h * b.dims.w
    union = vol_a + vol_b - inter
    return min(max(inter / union, 0.0), 1.0)


def _symmetric_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root with eigenvalues floored at EIGENVALUE_FLOOR."""
    sym = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(sym)
    evals = np.maximum(evals, EIGENVALUE_FLOOR)
    return evecs @ np.diag(np.sqrt(evals)) @ evecs.T


def mc_score(
    dist: PoseDistribution,
    dims: Dimensions,
    n_samples: int = DEFAULT_SCORE_SAMPLES,
    seed: int = 0,
    *,
    hard_threshold: float | None = None,
) -> float:
    """Monte-Carlo localization confidence of a pose distribution.

    Draws poses from a normal with the distribution's mean and covariance
    (via its symmetric matrix square root) and averages the clamped-linear
    score of the 3D overlap against the mean-pose box. Passing
    ``hard_threshold`` switches to a binary score: 1 where the overlap
    reaches the threshold, 0 otherwise. Deterministic given the seed.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    root = _symmetric_sqrt(dist.cov)
    rng = np.random.default_rng(seed)
    draws = dist.pose.as_vector() + rng.standard_normal((n_samples, 4)) @ root.T

    reference = Box3D(pose=dist.pose, dims=dims)
    total = 0.0
    for q in draws:
        overlap = iou3d(reference, Box3D(pose=Pose.from_vector(q), dims=dims))
        if hard_threshold is None:
            total += target_score(overlap)
        else:
            total += 1.0 if overlap >= hard_threshold else 0.0
    return total / n_samples


def compose_score(c_3dloc: float, c_2d: float) -> Score:
    """Combine localization and 2D confidences into the final detection score."""
    if not 0.0 <= c_3dloc <= 1.0:
        raise ValueError(f"c_3dloc must lie in [0, 1], got {c_3dloc}")
    if not 0.0 <= c_2d <= 1.0:
        raise ValueError(f"c_2d must lie in [0, 1], got {c_2d}")
    return Score(c_3dloc=c_3dloc, c_2d=c_2d, c_3d=c_3dloc * c_2d)
