"""Uncertainty-weighted PnP: pose MLE, covariance, and input derivatives.

The pose of an object is estimated by minimizing half the sum of squared
reprojection errors, each error divided by its declared standard
deviation (a diagonal Mahalanobis norm). The minimizer runs
Levenberg-Marquardt over the 4-vector (beta, t_x, t_y, t_z) from several
yaw initializations, followed by undamped Gauss-Newton polish steps that
drive the gradient norm toward machine precision.

The covariance of the estimate is the inverse Gauss-Newton matrix
(J^T J)^{-1} of the weighted residuals at the optimum. The derivatives
of the optimum with respect to the solver inputs (object coordinates and
log standard deviations) follow from differentiating the stationarity
condition g(p, inputs) = 0, which requires exact second derivatives of
the weighted residuals; these are computed analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllStartsDiverged, NotConverged, TooFewPoints
from .geometry import (
    Z_MIN,
    CorrespondenceSet,
    Pose,
    projection_derivatives,
    rotation_from_yaw,
)

# Weighted-residual value assigned to a point whose depth falls at or
# below Z_MIN during iteration. Large enough that such configurations are
# always rejected, constant so the objective stays finite.
PENALTY_RESIDUAL = 1e4

# Condition-number threshold beyond which the Gauss-Newton matrix gets a
# diagonal ridge before inversion.
COND_MAX = 1e12

# Bounds keeping the LM damping finite under repeated rejections.
_DAMPING_MIN = 1e-12
_DAMPING_MAX = 1e12


@dataclass(frozen=True)
class SolverConfig:
    """Levenberg-Marquardt settings and multistart yaw candidates."""

    max_iters: int = 100
    grad_tol: float = 1e-8
    initial_damping: float = 1e-3
    multistart_yaws: tuple[float, ...] = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)
    polish_iters: int = 8

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.grad_tol > 0.0:
            raise ValueError("grad_tol must be positive")
        if not self.initial_damping > 0.0:
            raise ValueError("initial_damping must be positive")
        if len(self.multistart_yaws) == 0:
            raise ValueError("need at least one yaw initialization")


@dataclass(frozen=True)
class PoseDistribution:
    """MLE pose with its covariance over (beta, t_x, t_y, t_z).

    ``nll`` is the attained objective value, ``converged`` reports whether
    the weighted-gradient norm reached the solver tolerance, and
    ``hessian_conditioned`` whether a ridge was added before inverting the
    Gauss-Newton matrix.
    """

    pose: Pose
    cov: np.ndarray  # (4, 4)
    nll: float
    converged: bool
    hessian_conditioned: bool


@dataclass(frozen=True)
class PnpGradients:
    """Derivatives of the solved pose with respect to the solver inputs.

    ``d_pose_d_oc`` is 4 x 3n with object coordinates flattened as
    (x_1, y_1, z_1, x_2, ...); ``d_pose_d_log_sigma`` is 4 x 2n with log
    standard deviations flattened as (log s_u1, log s_v1, log s_u2, ...),
    matching the residual order.
    """

    d_pose_d_oc: np.ndarray
    d_pose_d_log_sigma: np.ndarray


def _weighted_system(
    cs: CorrespondenceSet, q: np.ndarray, *, second_order: bool = False
) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Weighted residuals (n, 2) and derivative blocks at pose vector q.

    Points at or behind the depth guard contribute the constant penalty
    residual with zero derivatives. Returns (residuals, d_pose, valid,
    extras) where d_pose is (n, 2, 4) and extras holds the second-order
    and object-coordinate blocks when requested.
    """
    pose = Pose.from_vector(q)
    n = len(cs)
    xyz = cs.oc @ rotation_from_yaw(pose.beta).T + pose.t
    valid = xyz[:, 2] > Z_MIN

    res = np.full((n, 2), PENALTY_RESIDUAL)
    d_pose = np.zeros((n, 2, 4))
    extras: dict[str, np.ndarray] = {}
    if second_order:
        extras["d_oc"] = np.zeros((n, 2, 3))
        extras["d2_pose2"] = np.zeros((n, 2, 4, 4))
        extras["d2_pose_oc"] = np.zeros((n, 2, 4, 3))

    if np.any(valid):
        derivs = projection_derivatives(cs.oc[valid], pose, cs.camera, second_order=second_order)
        weight = 1.0 / cs.sigma[valid]
        res[valid] = (derivs.uv - cs.uv_obs[valid]) * weight
        d_pose[valid] = derivs.d_uv_d_pose * weight[:, :, None]
        if second_order:
            extras["d_oc"][valid] = derivs.d_uv_d_oc * weight[:, :, None]
            extras["d2_pose2"][valid] = derivs.d2_uv_d_pose2 * weight[:, :, None, None]
            extras["d2_pose_oc"][valid] = derivs.d2_uv_d_pose_d_oc * weight[:, :, None, None]
    return res, d_pose, valid, extras


def objective(cs: CorrespondenceSet, pose: Pose) -> float:
    """Half the sum of squared weighted reprojection errors at a pose."""
    res, _, _, _ = _weighted_system(cs, pose.as_vector())
    return 0.5 * float(np.sum(res * res))


def objective_batch(cs: CorrespondenceSet, betas: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Objective evaluated for a batch of poses (betas (m,), ts (m, 3)).

    Vectorized over poses for grid searches; applies the same penalty
    semantics as the solver for points behind the camera.
    """
    betas = np.asarray(betas, dtype=np.float64).ravel()
    ts = np.asarray(ts, dtype=np.float64).reshape(-1, 3)
    cam = cs.camera
    c, s = np.cos(betas), np.sin(betas)  # (m,)
    x, y, z = cs.oc[:, 0], cs.oc[:, 1], cs.oc[:, 2]  # (n,)

    X = c[:, None] * x + s[:, None] * z + ts[:, 0:1]
    Y = y[None, :] + ts[:, 1:2]
    Z = -s[:, None] * x + c[:, None] * z + ts[:, 2:3]

    valid = Z > Z_MIN
    Z_safe = np.where(valid, Z, 1.0)
    ru = (cam.fx * X / Z_safe + cam.cx - cs.uv_obs[:, 0]) / cs.sigma[:, 0]
    rv = (cam.fy * Y / Z_safe + cam.cy - cs.uv_obs[:, 1]) / cs.sigma[:, 1]
    ru = np.where(valid, ru, PENALTY_RESIDUAL)
    rv = np.where(valid, rv, PENALTY_RESIDUAL)
    return 0.5 * (np.sum(ru * ru, axis=1) + np.sum(rv * rv, axis=1))


def _initial_pose_vectors(cs: CorrespondenceSet, yaws: tuple[float, ...]) -> list[np.ndarray]:
    """Multistart initializations: one pose vector per yaw candidate.

    Depth is seeded by comparing the median 3D spread of the object
    points against the median pixel spread around the inverse-variance-
    weighted pixel centroid; the translation back-projects that centroid
    and compensates the rotated object centroid.
    """
    cam = cs.camera
    oc_centroid = cs.oc.mean(axis=0)
    obj_spread = float(np.median(np.linalg.norm(cs.oc - oc_centroid, axis=1)))

    weights = 1.0 / np.sum(cs.sigma**2, axis=1)
    uv_centroid = (cs.uv_obs * weights[:, None]).sum(axis=0) / weights.sum()
    px_spread = float(np.median(np.linalg.norm(cs.uv_obs - uv_centroid, axis=1)))

    if px_spread > 1e-9 and obj_spread > 1e-9:
        depth = cam.fx * obj_spread / px_spread
    else:
        depth = 10.0
    depth = min(max(depth, 0.5), 1e4)

    ray = np.array(
        [(uv_centroid[0] - cam.cx) / cam.fx, (uv_centroid[1] - cam.cy) / cam.fy, 1.0]
    )
    starts = []
    for beta in yaws:
        t0 = ray * depth - rotation_from_yaw(beta) @ oc_centroid
        t0[2] = max(t0[2], 0.1)
        starts.append(np.array([beta, t0[0], t0[1], t0[2]]))
    return starts


def _levenberg_marquardt(
    cs: CorrespondenceSet, q0: np.ndarray, cfg: SolverConfig
) -> tuple[np.ndarray, float, float]:
    """Minimize the weighted objective from one start.

    Returns (pose vector, objective, final gradient norm). Damping is
    multiplied by 10 on a rejected step and divided by 10 on an accepted
    one. After the damped phase, undamped Gauss-Newton steps are applied
    while they strictly reduce the gradient norm, sharpening stationarity
    well past what objective-decrease acceptance can resolve.
    """

    def system(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        res, d_pose, _, _ = _weighted_system(cs, q)
        return res.ravel(), d_pose.reshape(-1, 4)

    q = q0.copy()
    r, jac = system(q)
    value = 0.5 * float(r @ r)
    damping = cfg.initial_damping

    for _ in range(cfg.max_iters):
        grad = jac.T @ r
        if np.linalg.norm(grad) <= cfg.grad_tol:
            break
        gn_matrix = jac.T @ jac
        scale = np.diag(np.maximum(np.diag(gn_matrix), 1e-12))
        try:
            step = np.linalg.solve(gn_matrix + damping * scale, -grad)
        except np.linalg.LinAlgError:
            damping = min(damping * 10.0, _DAMPING_MAX)
            continue
        if not np.all(np.isfinite(step)):
            damping = min(damping * 10.0, _DAMPING_MAX)
            continue
        q_try = q + step
        r_try, jac_try = system(q_try)
        value_try = 0.5 * float(r_try @ r_try)
        if np.isfinite(value_try) and value_try < value:
            q, r, jac, value = q_try, r_try, jac_try, value_try
            damping = max(damping / 10.0, _DAMPING_MIN)
        else:
            damping = min(damping * 10.0, _DAMPING_MAX)

    grad = jac.T @ r
    grad_norm = float(np.linalg.norm(grad))
    for _ in range(cfg.polish_iters):
        if grad_norm == 0.0:
            break
        try:
            step = np.linalg.solve(jac.T @ jac, -grad)
        except np.linalg.LinAlgError:
            break
        q_try = q + step
        r_try, jac_try = system(q_try)
        grad_try = jac_try.T @ r_try
        grad_norm_try = float(np.linalg.norm(grad_try))
        value_try = 0.5 * float(r_try @ r_try)
        if np.isfinite(grad_norm_try) and grad_norm_try < grad_norm:
            q, r, jac, value = q_try, r_try, jac_try, value_try
            grad, grad_norm = grad_try, grad_norm_try
        else:
            break
    return q, value, grad_norm


def _covariance_from_system(d_pose: np.ndarray) -> tuple[np.ndarray, bool]:
    """Inverse Gauss-Newton matrix with conditioning ridge when needed."""
    jac = d_pose.reshape(-1, 4)
    gn_matrix = jac.T @ jac
    conditioned = False
    cond = np.linalg.cond(gn_matrix)
    if not np.isfinite(cond) or cond > COND_MAX:
        gn_matrix = gn_matrix + (1e-9 * np.trace(gn_matrix) / 4.0) * np.eye(4)
        conditioned = True
    cov = np.linalg.inv(gn_matrix)
    return 0.5 * (cov + cov.T), conditioned


def covariance(cs: CorrespondenceSet, pose: Pose) -> np.ndarray:
    """Pose covariance at a converged solution.

    Inverse of J^T J for the weighted-residual Jacobian J at the pose; a
    diagonal ridge of 1e-9 * trace / 4 is added first if the condition
    number exceeds COND_MAX (the solve result records this in its
    ``hessian_conditioned`` flag).
    """
    _, d_pose, _, _ = _weighted_system(cs, pose.as_vector())
    cov, _ = _covariance_from_system(d_pose)
    return cov


def solve(cs: CorrespondenceSet, cfg: SolverConfig | None = None) -> PoseDistribution:
    """Maximum-likelihood pose from weighted 2D-3D correspondences.

    Runs LM from every yaw candidate in the config and keeps the lowest
    attained objective. Requires at least three correspondences.
    """
    cfg = cfg or SolverConfig()
    if len(cs) < 3:
        raise TooFewPoints(f"need >= 3 correspondences, got {len(cs)}")

    best: tuple[np.ndarray, float, float] | None = None
    for q0 in _initial_pose_vectors(cs, cfg.multistart_yaws):
        q, value, grad_norm = _levenberg_marquardt(cs, q0, cfg)
        if not (np.isfinite(value) and np.all(np.isfinite(q))):
            continue
        if best is None or value < best[1]:
            best = (q, value, grad_norm)
    if best is None:
        raise AllStartsDiverged("no initialization produced a finite objective")

    q, value, grad_norm = best
    _, d_pose, _, _ = _weighted_system(cs, q)
    cov, conditioned = _covariance_from_system(d_pose)
    return PoseDistribution(
        pose=Pose.from_vector(q),
        cov=cov,
        nll=value,
        converged=bool(grad_norm <= cfg.grad_tol),
        hessian_conditioned=conditioned,
    )


def refine(cs: CorrespondenceSet, pose: Pose, cfg: SolverConfig | None = None) -> PoseDistribution:
    """Re-run the minimization from a given pose (no multistart).

    Useful for warm-started re-solves, e.g. when finite-differencing the
    solver with respect to its inputs.
    """
    cfg = cfg or SolverConfig()
    if len(cs) < 3:
        raise TooFewPoints(f"need >= 3 correspondences, got {len(cs)}")
    q, value, grad_norm = _levenberg_marquardt(cs, pose.as_vector(), cfg)
    if not (np.isfinite(value) and np.all(np.isfinite(q))):
        raise AllStartsDiverged("refinement diverged")
    _, d_pose, _, _ = _weighted_system(cs, q)
    cov, conditioned = _covariance_from_system(d_pose)
    return PoseDistribution(
        pose=Pose.from_vector(q),
        cov=cov,
        nll=value,
        converged=bool(grad_norm <= cfg.grad_tol),
        hessian_conditioned=conditioned,
    )


def backward(
    cs: CorrespondenceSet, pose: Pose, *, grad_tol: float = SolverConfig.grad_tol
) -> PnpGradients:
    """Exact derivatives of the solved pose with respect to the inputs.

    Differentiates the stationarity condition g = J^T r = 0 at the
    optimum: d pose / d input = -H^{-1} dg / d input, where H is the
    exact Hessian of the objective (Gauss-Newton term plus residual-
    weighted second derivatives). Requires the pose to be stationary;
    raises NotConverged when the gradient norm exceeds 100 * grad_tol.
    """
    res, d_pose, _, extras = _weighted_system(cs, pose.as_vector(), second_order=True)
    n = len(cs)
    jac = d_pose.reshape(-1, 4)
    grad = jac.T @ res.ravel()
    grad_norm = float(np.linalg.norm(grad))
    if grad_norm > 100.0 * grad_tol:
        raise NotConverged(
            f"gradient norm {grad_norm:.3e} exceeds {100.0 * grad_tol:.3e}; "
            "derivatives require a stationary solve"
        )

    hess = jac.T @ jac + np.einsum("ni,niab->ab", res, extras["d2_pose2"])

    # dg wrt object coordinates: per point a (4, 3) block.
    dg_oc = np.einsum("nim,nia->nam", extras["d_oc"], d_pose) + np.einsum(
        "ni,niam->nam", res, extras["d2_pose_oc"]
    )
    dg_oc_mat = dg_oc.transpose(1, 0, 2).reshape(4, 3 * n)

    # dg wrt the log standard deviation of residual k is -2 r_k * dr_k/dpose.
    dg_ls = -2.0 * res[:, :, None] * d_pose
    dg_ls_mat = dg_ls.reshape(2 * n, 4).T

    d_pose_d_oc = -np.linalg.solve(hess, dg_oc_mat)
    d_pose_d_log_sigma = -np.linalg.solve(hess, dg_ls_mat)
    return PnpGradients(d_pose_d_oc=d_pose_d_oc, d_pose_d_log_sigma=d_pose_d_log_sigma)
