"""Camera model, pose parameterization and reprojection residuals.

Conventions used throughout the package:

* Camera frame: x right, y down, z forward (depth). All distances in
  meters, all image coordinates in pixels.
* Pose: yaw angle ``beta`` (radians, rotation about the camera y axis)
  plus translation ``t = (t_x, t_y, t_z)`` of the box bottom center.
* Normalized object coordinates (NOC): dimensionless coordinates in a
  canonical box frame with x, z in [-0.5, 0.5] and y in [-1, 0]; the
  object origin sits at the bottom center of the box (y points down, so
  the box extends toward negative y). Multiplying a NOC element-wise by
  the box dimensions ``(l, h, w)`` yields metric object coordinates.
* Residual flattening order for a correspondence set is
  ``(u_1, v_1, u_2, v_2, ...)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PointBehindCamera

# Depth guard against the projection singularity (meters).
Z_MIN = 1e-3

# Floor applied to declared pixel standard deviations, bounding the
# Mahalanobis weights 1/sigma.
SIGMA_MIN = 1e-4


def wrap_angle(beta: float) -> float:
    """Normalize an angle to the interval (-pi, pi]."""
    wrapped = math.remainder(beta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole projection parameters, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")


@dataclass(frozen=True)
class Pose:
    """Object yaw plus camera-frame translation of the box bottom center.

    ``beta`` is normalized to (-pi, pi] on construction. The 4-vector
    layout used by the solver and covariance code is
    ``(beta, t_x, t_y, t_z)``.
    """

    beta: float
    t: np.ndarray  # (3,) meters

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)) or not math.isfinite(self.beta):
            raise ValueError("pose entries must be finite")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "beta", wrap_angle(float(self.beta)))

    def as_vector(self) -> np.ndarray:
        """Return the pose as the 4-vector (beta, t_x, t_y, t_z)."""
        return np.concatenate(([self.beta], self.t))

    @classmethod
    def from_vector(cls, q: np.ndarray) -> "Pose":
        q = np.asarray(q, dtype=np.float64).reshape(4)
        return cls(beta=float(q[0]), t=q[1:].copy())


@dataclass(frozen=True)
class Dimensions:
    """Box length, height and width in meters."""

    l: float
    h: float
    w: float

    def __post_init__(self) -> None:
        if not (self.l > 0.0 and self.h > 0.0 and self.w > 0.0):
            raise ValueError(f"dimensions must be positive, got {(self.l, self.h, self.w)}")

    def as_array(self) -> np.ndarray:
        return np.array([self.l, self.h, self.w], dtype=np.float64)


@dataclass(frozen=True)
class Correspondence:
    """One 2D-3D correspondence with its declared pixel noise.

    ``oc`` is the metric object-frame point, ``uv_obs`` the observed pixel
    and ``sigma`` the per-axis standard deviations (floored at SIGMA_MIN).
    """

    oc: np.ndarray  # (3,) meters
    uv_obs: np.ndarray  # (2,) pixels
    sigma: np.ndarray  # (2,) pixels

    def __post_init__(self) -> None:
        oc = np.asarray(self.oc, dtype=np.float64).reshape(3)
        uv = np.asarray(self.uv_obs, dtype=np.float64).reshape(2)
        sigma = np.maximum(np.asarray(self.sigma, dtype=np.float64).reshape(2), SIGMA_MIN)
        object.__setattr__(self, "oc", oc)
        object.__setattr__(self, "uv_obs", uv)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Array-backed, ordered collection of correspondences for one object.

    Stores ``oc`` (n, 3), ``uv_obs`` (n, 2) and ``sigma`` (n, 2) plus the
    camera. Declared sigmas are floored at SIGMA_MIN. Residuals derived
    from the set are flattened as (u_1, v_1, u_2, v_2, ...).
    """

    oc: np.ndarray
    uv_obs: np.ndarray
    sigma: np.ndarray
    camera: CameraIntrinsics = field(repr=False)

    def __post_init__(self) -> None:
        oc = np.atleast_2d(np.asarray(self.oc, dtype=np.float64))
        uv = np.atleast_2d(np.asarray(self.uv_obs, dtype=np.float64))
        sigma = np.maximum(np.atleast_2d(np.asarray(self.sigma, dtype=np.float64)), SIGMA_MIN)
        if oc.shape[1] != 3 or uv.shape[1] != 2 or sigma.shape[1] != 2:
            raise ValueError("expected oc (n, 3), uv_obs (n, 2), sigma (n, 2)")
        if not (oc.shape[0] == uv.shape[0] == sigma.shape[0]):
            raise ValueError("correspondence arrays must share the leading dimension")
        object.__setattr__(self, "oc", oc)
        object.__setattr__(self, "uv_obs", uv)
        object.__setattr__(self, "sigma", sigma)

    def __len__(self) -> int:
        return self.oc.shape[0]

    @property
    def items(self) -> tuple[Correspondence, ...]:
        return tuple(
            Correspondence(oc=self.oc[i], uv_obs=self.uv_obs[i], sigma=self.sigma[i])
            for i in range(len(self))
        )

    @classmethod
    def from_items(cls, items: list[Correspondence], camera: CameraIntrinsics) -> "CorrespondenceSet":
        if not items:
            raise ValueError("correspondence list is empty")
        return cls(
            oc=np.stack([c.oc for c in items]),
            uv_obs=np.stack([c.uv_obs for c in items]),
            sigma=np.stack([c.sigma for c in items]),
            camera=camera,
        )

    def with_sigma(self, sigma: np.ndarray) -> "CorrespondenceSet":
        """Return a copy with the declared sigmas replaced."""
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.ndim == 0:
            sigma = np.full_like(self.sigma, float(sigma))
        return CorrespondenceSet(oc=self.oc, uv_obs=self.uv_obs, sigma=sigma, camera=self.camera)

    def subset(self, mask: np.ndarray) -> "CorrespondenceSet":
        """Return the correspondences selected by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        return CorrespondenceSet(
            oc=self.oc[mask], uv_obs=self.uv_obs[mask], sigma=self.sigma[mask], camera=self.camera
        )


def rotation_from_yaw(beta: float) -> np.ndarray:
    """Rotation matrix for a yaw about the camera y axis.

    Maps object-frame points into camera orientation:
    ``R(beta) = [[cos b, 0, sin b], [0, 1, 0], [-sin b, 0, cos b]]``.
    """
    c, s = math.cos(beta), math.sin(beta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def noc_to_oc(noc: np.ndarray, dims: Dimensions) -> np.ndarray:
    """Scale normalized object coordinates to metric object coordinates.

    Element-wise product with the box dimensions; works on a single (3,)
    point or an (n, 3) batch.
    """
    return np.asarray(noc, dtype=np.float64) * dims.as_array()


def camera_frame_points(oc: np.ndarray, pose: Pose) -> np.ndarray:
    """Transform object-frame points (n, 3) into the camera frame."""
    oc = np.atleast_2d(np.asarray(oc, dtype=np.float64))
    return oc @ rotation_from_yaw(pose.beta).T + pose.t


def project_points(
    oc: np.ndarray, pose: Pose, cam: CameraIntrinsics, *, z_min: float = Z_MIN
) -> np.ndarray:
    """Project object-frame points (n, 3) to pixels (n, 2).

    Raises PointBehindCamera if any camera-frame depth is <= z_min.
    """
    xyz = camera_frame_points(oc, pose)
    z = xyz[:, 2]
    if np.any(z <= z_min):
        raise PointBehindCamera(f"camera-frame depth {z.min():.6g} <= z_min {z_min:g}")
    uv = np.empty((xyz.shape[0], 2))
    uv[:, 0] = cam.fx * xyz[:, 0] / z + cam.cx
    uv[:, 1] = cam.fy * xyz[:, 1] / z + cam.cy
    return uv


def project(oc: np.ndarray, pose: Pose, cam: CameraIntrinsics, *, z_min: float = Z_MIN) -> np.ndarray:
    """Project a single object-frame point to a pixel (u, v)."""
    return project_points(np.asarray(oc).reshape(1, 3), pose, cam, z_min=z_min)[0]


def residual(c: Correspondence, pose: Pose, cam: CameraIntrinsics) -> np.ndarray:
    """Reprojection residual (r_u, r_v): projected pixel minus observed pixel."""
    return project(c.oc, pose, cam) - c.uv_obs


def weighted_residual(c: Correspondence, pose: Pose, cam: CameraIntrinsics) -> np.ndarray:
    """Residual divided component-wise by the declared standard deviations."""
    return residual(c, pose, cam) / c.sigma


@dataclass(frozen=True)
class ProjectionDerivatives:
    """Projection values and derivatives for a batch of object points.

    Pose parameter order is (beta, t_x, t_y, t_z); object-coordinate order
    is (x, y, z). Second-order blocks are present only when requested.
    Arrays:
      uv            (n, 2)    projected pixels
      depth         (n,)      camera-frame z
      d_uv_d_pose   (n, 2, 4)
      d_uv_d_oc     (n, 2, 3)
      d2_uv_d_pose2      (n, 2, 4, 4)
      d2_uv_d_pose_d_oc  (n, 2, 4, 3)
    """

    uv: np.ndarray
    depth: np.ndarray
    d_uv_d_pose: np.ndarray
    d_uv_d_oc: np.ndarray
    d2_uv_d_pose2: np.ndarray | None = None
    d2_uv_d_pose_d_oc: np.ndarray | None = None


def projection_derivatives(
    oc: np.ndarray,
    pose: Pose,
    cam: CameraIntrinsics,
    *,
    second_order: bool = False,
) -> ProjectionDerivatives:
    """Analytic derivatives of the pinhole projection.

    Computes u = fx*X/Z + cx, v = fy*Y/Z + cy for camera-frame
    (X, Y, Z) = R(beta) * oc + t, together with first derivatives with
    respect to pose and object coordinates and, optionally, the exact
    second derivatives (pose x pose and pose x object-coordinate blocks)
    obtained by the chain rule through (X, Y, Z).

    No depth guard is applied here; callers decide how to treat points
    at or behind the camera (see ``depth``).
    """
    oc = np.atleast_2d(np.asarray(oc, dtype=np.float64))
    n = oc.shape[0]
    c, s = math.cos(pose.beta), math.sin(pose.beta)
    x, y, z = oc[:, 0], oc[:, 1], oc[:, 2]
    tx, ty, tz = pose.t

    # Rotated in-plane coordinates: B = X - t_x, A = Z - t_z.
    b = c * x + s * z
    a = -s * x + c * z
    X = b + tx
    Y = y + ty
    Z = a + tz

    inv_z = 1.0 / Z
    inv_z2 = inv_z * inv_z

    uv = np.empty((n, 2))
    uv[:, 0] = cam.fx * X * inv_z + cam.cx
    uv[:, 1] = cam.fy * Y * inv_z + cam.cy

    # Derivatives of (X, Y, Z) wrt pose q = (beta, tx, ty, tz).
    zeros = np.zeros(n)
    ones = np.ones(n)
    X_q = np.stack([a, ones, zeros, zeros], axis=1)  # (n, 4)
    Y_q = np.stack([zeros, zeros, ones, zeros], axis=1)
    Z_q = np.stack([-b, zeros, zeros, ones], axis=1)

    # Derivatives of (X, Y, Z) wrt object coordinates m = (x, y, z).
    X_m = np.tile(np.array([c, 0.0, s]), (n, 1))
    Y_m = np.tile(np.array([0.0, 1.0, 0.0]), (n, 1))
    Z_m = np.tile(np.array([-s, 0.0, c]), (n, 1))

    # Partials of u wrt (X, Z) and of v wrt (Y, Z).
    u_X = cam.fx * inv_z
    u_Z = -cam.fx * X * inv_z2
    v_Y = cam.fy * inv_z
    v_Z = -cam.fy * Y * inv_z2

    d_uv_d_pose = np.empty((n, 2, 4))
    d_uv_d_pose[:, 0, :] = u_X[:, None] * X_q + u_Z[:, None] * Z_q
    d_uv_d_pose[:, 1, :] = v_Y[:, None] * Y_q + v_Z[:, None] * Z_q

    d_uv_d_oc = np.empty((n, 2, 3))
    d_uv_d_oc[:, 0, :] = u_X[:, None] * X_m + u_Z[:, None] * Z_m
    d_uv_d_oc[:, 1, :] = v_Y[:, None] * Y_m + v_Z[:, None] * Z_m

    if not second_order:
        return ProjectionDerivatives(
            uv=uv, depth=Z, d_uv_d_pose=d_uv_d_pose, d_uv_d_oc=d_uv_d_oc
        )

    inv_z3 = inv_z2 * inv_z
    u_XZ = -cam.fx * inv_z2
    u_ZZ = 2.0 * cam.fx * X * inv_z3
    v_YZ = -cam.fy * inv_z2
    v_ZZ = 2.0 * cam.fy * Y * inv_z3

    # Second derivatives of (X, Y, Z). Pose x pose: only the (beta, beta)
    # entry is nonzero. Pose x oc: only the beta row is nonzero.
    X_qq = np.zeros((n, 4, 4))
    Z_qq = np.zeros((n, 4, 4))
    X_qq[:, 0, 0] = -b
    Z_qq[:, 0, 0] = -a

    X_qm = np.zeros((n, 4, 3))
    Z_qm = np.zeros((n, 4, 3))
    X_qm[:, 0, :] = np.array([-s, 0.0, c])
    Z_qm[:, 0, :] = np.array([-c, 0.0, -s])

    def bilinear(fa: np.ndarray, gb: np.ndarray) -> np.ndarray:
        # outer product over trailing parameter axes: (n, p) x (n, r) -> (n, p, r)
        return fa[:, :, None] * gb[:, None, :]

    d2_uv_d_pose2 = np.empty((n, 2, 4, 4))
    d2_uv_d_pose2[:, 0] = (
        u_XZ[:, None, None] * (bilinear(X_q, Z_q) + bilinear(Z_q, X_q))
        + u_ZZ[:, None, None] * bilinear(Z_q, Z_q)
        + u_X[:, None, None] * X_qq
        + u_Z[:, None, None] * Z_qq
    )
    d2_uv_d_pose2[:, 1] = (
        v_YZ[:, None, None] * (bilinear(Y_q, Z_q) + bilinear(Z_q, Y_q))
        + v_ZZ[:, None, None] * bilinear(Z_q, Z_q)
        + v_Z[:, None, None] * Z_qq
    )

    d2_uv_d_pose_d_oc = np.empty((n, 2, 4, 3))
    d2_uv_d_pose_d_oc[:, 0] = (
        u_XZ[:, None, None] * (bilinear(X_q, Z_m) + bilinear(Z_q, X_m))
        + u_ZZ[:, None, None] * bilinear(Z_q, Z_m)
        + u_X[:, None, None] * X_qm
        + u_Z[:, None, None] * Z_qm
    )
    d2_uv_d_pose_d_oc[:, 1] = (
        v_YZ[:, None, None] * (bilinear(Y_q, Z_m) + bilinear(Z_q, Y_m))
        + v_ZZ[:, None, None] * bilinear(Z_q, Z_m)
        + v_Z[:, None, None] * Z_qm
    )

    return ProjectionDerivatives(
        uv=uv,
        depth=Z,
        d_uv_d_pose=d_uv_d_pose,
        d_uv_d_oc=d_uv_d_oc,
        d2_uv_d_pose2=d2_uv_d_pose2,
        d2_uv_d_pose_d_oc=d2_uv_d_pose_d_oc,
    )


def residual_jacobian(c: Correspondence, pose: Pose, cam: CameraIntrinsics) -> np.ndarray:
    """2x4 Jacobian of the reprojection residual wrt (beta, t_x, t_y, t_z).

    The observed pixel is constant, so this equals the projection
    Jacobian. Raises PointBehindCamera when the point depth is <= Z_MIN.
    """
    derivs = projection_derivatives(c.oc.reshape(1, 3), pose, cam)
    if derivs.depth[0] <= Z_MIN:
        raise PointBehindCamera(f"camera-frame depth {derivs.depth[0]:.6g} <= z_min {Z_MIN:g}")
    return derivs.d_uv_d_pose[0]
