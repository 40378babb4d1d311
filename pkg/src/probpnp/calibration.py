"""Covariance calibration and reliability diagnostics.

The solver's pose covariance assumes independent per-point noise, which
understates the true spread when inputs are correlated. A 4-vector of
log-scale corrections, applied as diag(exp k) on both sides of the raw
covariance, is fitted by gradient descent on the Gaussian negative log
likelihood of observed pose errors.

Reliability is diagnosed by binning objects by ground-truth distance and
comparing, per bin, the Gaussian entropy of the mean predicted
translation covariance against the entropy of the sample covariance of
the actual translation errors. Matching entropies indicate calibrated
uncertainty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, InsufficientPairs

# Default gradient-descent schedule for the calibration fit.
DEFAULT_FIT_STEPS = 500
DEFAULT_FIT_LR = 1e-2

# Bins below this count are flagged as sparse in reliability reports.
DEFAULT_MIN_BIN_COUNT = 30

# Default distance binning, meters.
DEFAULT_BIN_EDGES = tuple(float(z) for z in range(0, 80, 10))


@dataclass(frozen=True)
class CalibrationVector:
    """Per-axis log-scale corrections for the pose covariance."""

    k: np.ndarray  # (4,)

    def __post_init__(self) -> None:
        k = np.asarray(self.k, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(k)):
            raise ValueError("calibration entries must be finite")
        object.__setattr__(self, "k", k)


@dataclass(frozen=True)
class CalibrationPair:
    """One calibration observation: estimate, ground truth, raw covariance."""

    pose_est: np.ndarray  # (4,)
    pose_gt: np.ndarray  # (4,)
    raw_cov: np.ndarray  # (4, 4)


@dataclass(frozen=True)
class CalibrationFit:
    """Fitted correction vector plus the per-step loss trace."""

    vector: CalibrationVector
    loss_trace: np.ndarray


def _as_k(k: CalibrationVector | np.ndarray | None) -> np.ndarray:
    if k is None:
        return np.zeros(4)
    if isinstance(k, CalibrationVector):
        return k.k
    return np.asarray(k, dtype=np.float64).reshape(4)


def calibrated_cov(raw_cov: np.ndarray, k: CalibrationVector | np.ndarray) -> np.ndarray:
    """Scale the raw covariance by diag(exp k) on both sides.

    Preserves symmetry and positive semidefiniteness for any finite k;
    k = 0 is the identity map.
    """
    scale = np.exp(_as_k(k))
    scaled = scale[:, None] * np.asarray(raw_cov, dtype=np.float64) * scale[None, :]
    return 0.5 * (scaled + scaled.T)


def _conditioned_inverse(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse and log determinant, adding a tiny ridge if needed."""
    cov = np.asarray(cov, dtype=np.float64).reshape(4, 4)
    for ridge in (0.0, 1e-12 * max(np.trace(cov) / 4.0, 1e-12)):
        candidate = cov + ridge * np.eye(4)
        try:
            chol = np.linalg.cholesky(candidate)
        except np.linalg.LinAlgError:
            continue
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return np.linalg.inv(candidate), logdet
    raise DegenerateData("covariance stays singular after conditioning")


def fit_calibration(
    pairs: list[CalibrationPair],
    init_k: CalibrationVector | np.ndarray | None = None,
    steps: int = DEFAULT_FIT_STEPS,
    lr: float = DEFAULT_FIT_LR,
) -> CalibrationFit:
    """Fit the correction vector by full-batch gradient descent.

    Minimizes the mean Gaussian negative log likelihood of the pose
    errors under the calibrated covariances. Only the correction vector
    moves; estimates and raw covariances are data. The returned trace has
    ``steps + 1`` entries (initial loss through final loss) and the fit
    is invariant to the ordering of the pairs.
    """
    if len(pairs) < 10:
        raise InsufficientPairs(f"need >= 10 calibration pairs, got {len(pairs)}")

    deltas = np.stack(
        [
            np.asarray(p.pose_est, dtype=np.float64).reshape(4)
            - np.asarray(p.pose_gt, dtype=np.float64).reshape(4)
            for p in pairs
        ]
    )
    inverses = []
    logdets = []
    for p in pairs:
        inv, logdet = _conditioned_inverse(p.raw_cov)
        inverses.append(inv)
        logdets.append(logdet)
    inv_stack = np.stack(inverses)  # (m, 4, 4)
    mean_logdet = float(np.mean(logdets))

    def loss_and_grad(k: np.ndarray) -> tuple[float, np.ndarray]:
        u = deltas * np.exp(-k)  # (m, 4)
        quad = np.einsum("mab,mb->ma", inv_stack, u)
        loss = 0.5 * float(np.mean(np.sum(u * quad, axis=1))) + 0.5 * mean_logdet + float(k.sum())
        grad = 1.0 - np.mean(u * quad, axis=0)
        return loss, grad

    k = _as_k(init_k).copy()
    trace = np.empty(steps + 1)
    for step in range(steps):
        value, grad = loss_and_grad(k)
        trace[step] = value
        k -= lr * grad
    trace[steps], _ = loss_and_grad(k)
    return CalibrationFit(vector=CalibrationVector(k=k), loss_trace=trace)


def gaussian_entropy(cov: np.ndarray) -> float:
    """Differential entropy of a Gaussian: 0.5 * log det(2 pi e cov), in nats."""
    cov = np.asarray(cov, dtype=np.float64)
    d = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        return float("nan")
    return 0.5 * (d * math.log(2.0 * math.pi * math.e) + logdet)


@dataclass(frozen=True)
class ReliabilityRecord:
    """One object's translation estimate, ground truth and covariance block."""

    t_est: np.ndarray  # (3,)
    t_gt: np.ndarray  # (3,)
    cov_t: np.ndarray  # (3, 3)


@dataclass(frozen=True)
class ReliabilityBin:
    """Entropy comparison within one ground-truth distance range."""

    z_lo: float
    z_hi: float
    n: int
    h_pred: float
    h_actual: float
    sparse: bool


@dataclass(frozen=True)
class ReliabilityReport:
    """Distance-binned comparison of predicted and actual error entropy."""

    bins: tuple[ReliabilityBin, ...]

    def to_csv(self, path) -> None:
        """Write bins as CSV with columns z_lo, z_hi, n, H_pred, H_actual."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["z_lo", "z_hi", "n", "H_pred", "H_actual"])
            for b in self.bins:
                writer.writerow([repr(b.z_lo), repr(b.z_hi), b.n, repr(b.h_pred), repr(b.h_actual)])


def reliability(
    records: list[ReliabilityRecord],
    bin_edges: np.ndarray | tuple[float, ...] = DEFAULT_BIN_EDGES,
    n_min: int = DEFAULT_MIN_BIN_COUNT,
) -> ReliabilityReport:
    """Bin records by ground-truth depth and compare entropies per bin.

    H_pred is the Gaussian entropy of the mean predicted translation
    covariance in the bin; H_actual the entropy of the sample covariance
    of the actual errors. Bins with fewer than ``n_min`` records are
    still emitted but flagged sparse (entropies are NaN below two
    records). Records outside the binning range are dropped.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing with >= 2 entries")

    depths = np.array([r.t_gt[2] for r in records])
    bins = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        selected = [r for r, z in zip(records, depths) if lo <= z < hi]
        n = len(selected)
        if n == 0:
            bins.append(
                ReliabilityBin(
                    z_lo=float(lo), z_hi=float(hi), n=0,
                    h_pred=float("nan"), h_actual=float("nan"), sparse=True,
                )
            )
            continue
        mean_cov = np.mean([r.cov_t for r in selected], axis=0)
        h_pred = gaussian_entropy(mean_cov)
        if n >= 2:
            errors = np.stack([r.t_est - r.t_gt for r in selected])
            h_actual = gaussian_entropy(np.cov(errors.T, ddof=1))
        else:
            h_actual = float("nan")
        bins.append(
            ReliabilityBin(
                z_lo=float(lo), z_hi=float(hi), n=n,
                h_pred=h_pred, h_actual=h_actual, sparse=n < n_min,
            )
        )
    return ReliabilityReport(bins=tuple(bins))
