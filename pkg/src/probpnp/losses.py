"""Heteroscedastic regression losses with analytic gradients.

Each loss returns a LossEval carrying the scalar value and the partial
derivative with respect to every differentiable input. Scale parameters
are passed as log standard deviations, which keeps the optimization of
the scale unconstrained and the gradients bounded.

The negative-log-likelihood losses (gaussian_kl, laplacian_kl, mixed_kl,
robust_kl) drop additive constants of the underlying densities: they are
zero at zero error with unit scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch, EmptyMask, SingularCovariance
from .geometry import SIGMA_MIN, Pose

# Error threshold (in sigma units) where the mixed loss switches from the
# quadratic core to the linear tail; chosen so value and first derivative
# are continuous.
MIXED_SWITCH = math.sqrt(2.0)

# Default transition width of the smooth L1 loss.
SMOOTH_L1_BETA = 1.0

# Clamp keeping the binary cross-entropy finite.
BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossEval:
    """Loss value plus partial derivatives keyed by input name."""

    value: float
    grad: dict[str, float | np.ndarray]


@dataclass(frozen=True)
class WeightNormalizer:
    """Running estimate of the mean inverse scale E[1/sigma].

    Used to normalize the mixed loss so its gradient magnitude stays
    balanced against other objectives while the scales shrink during
    training. The running mean is a buffer: no gradient flows through it.
    """

    running_mean: float = 1.0
    momentum: float = 0.99

    def __post_init__(self) -> None:
        if not self.running_mean > 0.0:
            raise ValueError(f"running_mean must be positive, got {self.running_mean}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


def normalizer_update(norm: WeightNormalizer, sigmas: np.ndarray) -> WeightNormalizer:
    """Fold a batch of scales into the running mean inverse scale.

    new = momentum * old + (1 - momentum) * mean(1 / sigma_i)
    """
    sigmas = np.asarray(sigmas, dtype=np.float64).ravel()
    if sigmas.size == 0:
        raise EmptyBatch("normalizer update needs a nonempty batch")
    if np.any(sigmas < SIGMA_MIN):
        raise ValueError(f"all sigmas must be >= {SIGMA_MIN}")
    mean_inv = float(np.mean(1.0 / sigmas))
    new_mean = norm.momentum * norm.running_mean + (1.0 - norm.momentum) * mean_inv
    return WeightNormalizer(running_mean=new_mean, momentum=norm.momentum)


def gaussian_kl(mu: float, y: float, log_sigma: float) -> LossEval:
    """Gaussian negative log likelihood of the target under (mu, sigma).

    value = (mu - y)^2 / (2 sigma^2) + log(sigma), sigma = exp(log_sigma).
    """
    d = mu - y
    inv_var = math.exp(-2.0 * log_sigma)
    value = 0.5 * d * d * inv_var + log_sigma
    return LossEval(
        value=value,
        grad={"mu": d * inv_var, "log_sigma": 1.0 - d * d * inv_var},
    )


def laplacian_kl(mu: float, y: float, log_sigma: float) -> LossEval:
    """Laplacian counterpart of gaussian_kl.

    value = sqrt(2) |mu - y| / sigma + log(sigma). The derivative wrt mu
    is undefined at mu = y; the subgradient 0 is returned there.
    """
    d = mu - y
    inv_sigma = math.exp(-log_sigma)
    value = math.sqrt(2.0) * abs(d) * inv_sigma + log_sigma
    sign = 0.0 if d == 0.0 else math.copysign(1.0, d)
    return LossEval(
        value=value,
        grad={
            "mu": math.sqrt(2.0) * sign * inv_sigma,
            "log_sigma": 1.0 - math.sqrt(2.0) * abs(d) * inv_sigma,
        },
    )


def mixed_kl(mu: float, y: float, log_sigma: float) -> LossEval:
    """Gaussian core with a Laplacian tail, in scaled-error form.

    With e = (mu - y) / sigma:
      |e| <= sqrt(2):  value = e^2 / 2 + log(sigma)
      |e| >  sqrt(2):  value = sqrt(2) |e| - 1 + log(sigma)
    Value and first derivatives are continuous across the switch, making
    the loss differentiable in both mu and sigma for sigma > 0.
    """
    inv_sigma = math.exp(-log_sigma)
    e = (mu - y) * inv_sigma
    if abs(e) <= MIXED_SWITCH:
        value = 0.5 * e * e + log_sigma
        d_mu = e * inv_sigma
        d_log_sigma = 1.0 - e * e
    else:
        value = math.sqrt(2.0) * abs(e) - 1.0 + log_sigma
        d_mu = math.sqrt(2.0) * math.copysign(1.0, e) * inv_sigma
        d_log_sigma = 1.0 - math.sqrt(2.0) * abs(e)
    return LossEval(value=value, grad={"mu": d_mu, "log_sigma": d_log_sigma})


def robust_kl(mu: float, y: float, log_sigma: float, norm: WeightNormalizer) -> LossEval:
    """Mixed loss divided by the running mean weight.

    The normalizer is treated as a constant: the returned gradients are
    the mixed-loss gradients scaled by 1 / running_mean, and no gradient
    is reported for the normalizer itself.
    """
    base = mixed_kl(mu, y, log_sigma)
    scale = 1.0 / norm.running_mean
    return LossEval(
        value=base.value * scale,
        grad={name: g * scale for name, g in base.grad.items()},
    )


def smooth_l1(x: float, beta_sl1: float = SMOOTH_L1_BETA) -> LossEval:
    """Huber-style loss: x^2 / (2 beta) inside the transition, |x| - beta/2 outside."""
    if not beta_sl1 > 0.0:
        raise ValueError(f"beta_sl1 must be positive, got {beta_sl1}")
    ax = abs(x)
    if ax < beta_sl1:
        return LossEval(value=0.5 * x * x / beta_sl1, grad={"x": x / beta_sl1})
    return LossEval(value=ax - 0.5 * beta_sl1, grad={"x": math.copysign(1.0, x) if x else 0.0})


def masked_noc_loss(
    pred_noc: np.ndarray,
    target_noc: np.ndarray,
    mask: np.ndarray,
    beta_sl1: float = SMOOTH_L1_BETA,
) -> LossEval:
    """Weighted smooth L1 over sparsely supervised coordinate entries.

    value = sum_i w_i * smooth_l1(pred_i - target_i) / sum_i w_i, where the
    mask weights w_i are 0/1 flags marking entries with a target. Target
    entries outside the mask are ignored. The gradient is reported for
    every prediction entry (zero where unmasked).
    """
    pred = np.asarray(pred_noc, dtype=np.float64)
    target = np.asarray(target_noc, dtype=np.float64)
    w = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != w.shape:
        raise ValueError("pred_noc, target_noc and mask must share a shape")
    total = w.sum()
    if total <= 0.0:
        raise EmptyMask("mask selects no entries")

    diff = np.where(w > 0.0, pred - target, 0.0)
    ax = np.abs(diff)
    inner = ax < beta_sl1
    values = np.where(inner, 0.5 * diff * diff / beta_sl1, ax - 0.5 * beta_sl1)
    d_pred = np.where(inner, diff / beta_sl1, np.sign(diff))
    return LossEval(
        value=float((w * values).sum() / total),
        grad={"pred_noc": w * d_pred / total},
    )


def _spd_inverse_logdet(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse and log determinant via Cholesky; raises on non-SPD input."""
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("covariance is not positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    inv = np.linalg.inv(cov)
    return inv, logdet


def calib_loss(
    pose_est: np.ndarray,
    pose_gt: np.ndarray,
    raw_cov: np.ndarray,
    k: np.ndarray | None = None,
) -> LossEval:
    """Multivariate Gaussian negative log likelihood of the pose error.

    The covariance used is the raw matrix conjugated by diag(exp k):
    Sigma = D raw_cov D. With delta = pose_est - pose_gt,

      value = 0.5 * delta^T Sigma^{-1} delta + 0.5 * log det(Sigma).

    The pose estimate is treated as fixed data: the only gradient
    reported is with respect to the correction vector k (the chain
    through the conjugation), which is what the calibration fit adjusts.
    """
    delta = np.asarray(pose_est, dtype=np.float64).reshape(4) - np.asarray(
        pose_gt, dtype=np.float64
    ).reshape(4)
    raw = np.asarray(raw_cov, dtype=np.float64).reshape(4, 4)
    kvec = np.zeros(4) if k is None else np.asarray(k, dtype=np.float64).reshape(4)

    raw_inv, raw_logdet = _spd_inverse_logdet(raw)
    u = delta * np.exp(-kvec)
    quad = raw_inv @ u
    value = 0.5 * float(u @ quad) + 0.5 * raw_logdet + float(kvec.sum())
    return LossEval(value=value, grad={"k": 1.0 - u * quad})


def score_bce(c_pred: float, c_tgt: float) -> LossEval:
    """Binary cross-entropy between a predicted and a target confidence.

    The prediction is clamped to [BCE_EPS, 1 - BCE_EPS] so the value
    stays finite; the gradient is zero in the clamped regions.
    """
    if not 0.0 <= c_tgt <= 1.0:
        raise ValueError(f"c_tgt must lie in [0, 1], got {c_tgt}")
    clamped = min(max(c_pred, BCE_EPS), 1.0 - BCE_EPS)
    value = -c_tgt * math.log(clamped) - (1.0 - c_tgt) * math.log(1.0 - clamped)
    if c_pred <= BCE_EPS or c_pred >= 1.0 - BCE_EPS:
        d_pred = 0.0
    else:
        d_pred = -c_tgt / clamped + (1.0 - c_tgt) / (1.0 - clamped)
    return LossEval(value=value, grad={"c_pred": d_pred})


def target_score(iou3d: float) -> float:
    """Clamped linear mapping from 3D IoU to the confidence target.

    target = clamp(2 * IoU - 0.5, 0, 1): zero up to IoU 0.25, one from
    IoU 0.75, linear in between.
    """
    if not 0.0 <= iou3d <= 1.0:
        raise ValueError(f"iou3d must lie in [0, 1], got {iou3d}")
    return min(1.0, max(0.0, 2.0 * iou3d - 0.5))


def e2e_losses(
    pose_est: Pose, pose_gt: Pose, beta_sl1: float = SMOOTH_L1_BETA
) -> tuple[LossEval, LossEval]:
    """Smooth L1 penalties on the pose estimate's translation and yaw errors.

    Translation: smooth_l1(||t_est - t_gt||), gradient wrt t_est.
    Yaw: smooth_l1 of the chord distance between the unit heading vectors
    (cos beta, sin beta), gradient wrt beta_est. Subgradient 0 is used at
    exact agreement.
    """
    dt = pose_est.t - pose_gt.t
    dist = float(np.linalg.norm(dt))
    trans = smooth_l1(dist, beta_sl1)
    d_t = trans.grad["x"] * (dt / dist) if dist > 0.0 else np.zeros(3)
    trans_eval = LossEval(value=trans.value, grad={"t_est": d_t})

    heading = np.array(
        [
            math.cos(pose_est.beta) - math.cos(pose_gt.beta),
            math.sin(pose_est.beta) - math.sin(pose_gt.beta),
        ]
    )
    chord = float(np.linalg.norm(heading))
    rot = smooth_l1(chord, beta_sl1)
    if chord > 0.0:
        d_chord_d_beta = (
            heading[0] * -math.sin(pose_est.beta) + heading[1] * math.cos(pose_est.beta)
        ) / chord
        d_beta = rot.grad["x"] * d_chord_d_beta
    else:
        d_beta = 0.0
    rot_eval = LossEval(value=rot.value, grad={"beta_est": d_beta})
    return trans_eval, rot_eval
