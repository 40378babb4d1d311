"""Combining ensemble (epistemic) and per-pixel (aleatoric) uncertainty.

An ensemble of coordinate predictions stands in for repeated stochastic
forward passes of a model: each sample provides object coordinates and
log standard deviations of the reprojected pixel coordinates in
normalized, depth-invariant units. The spread across samples measures
model uncertainty; the predicted standard deviations measure observation
noise. Their combination, scaled by focal length over depth, yields the
pixel-space standard deviations consumed by the pose solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooFewSamples
from .geometry import CameraIntrinsics

# Default ensemble size used by callers that sample a predictor.
DEFAULT_SAMPLE_COUNT = 50


@dataclass(frozen=True)
class EnsemblePrediction:
    """Stacked coordinate predictions over a fixed pixel set.

    ``oc`` has shape (n_samples, n_pixels, 3) and ``log_sigma_norm``
    (n_samples, n_pixels, 2), the per-pixel log standard deviations of
    the normalized reprojected coordinates.
    """

    oc: np.ndarray
    log_sigma_norm: np.ndarray

    def __post_init__(self) -> None:
        oc = np.asarray(self.oc, dtype=np.float64)
        ls = np.asarray(self.log_sigma_norm, dtype=np.float64)
        if oc.ndim != 3 or oc.shape[2] != 3:
            raise ValueError("oc must have shape (n_samples, n_pixels, 3)")
        if ls.shape != (oc.shape[0], oc.shape[1], 2):
            raise ValueError("log_sigma_norm must have shape (n_samples, n_pixels, 2)")
        if oc.shape[0] < 2:
            raise TooFewSamples(f"need >= 2 ensemble samples, got {oc.shape[0]}")
        object.__setattr__(self, "oc", oc)
        object.__setattr__(self, "log_sigma_norm", ls)

    @property
    def n_samples(self) -> int:
        return self.oc.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.oc.shape[1]


@dataclass(frozen=True)
class CombinedUncertainty:
    """Ensemble-mean coordinates with combined normalized deviations.

    ``sigma_norm_comb`` (n_pixels, 2) holds per-pixel standard deviations
    of the normalized reprojected coordinates, including both the mean
    aleatoric variance and the ensemble variance.
    """

    oc_mean: np.ndarray
    sigma_norm_comb: np.ndarray


def ensemble_stats(ens: EnsemblePrediction) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel, per-axis sample mean and unbiased variance of the coordinates."""
    mean = ens.oc.mean(axis=0)
    var = ens.oc.var(axis=0, ddof=1)
    return mean, var


def project_variance(var_oc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3D coordinate variances -> variances of normalized reprojected pixels.

    Orientation-agnostic approximation: the horizontal pixel variance
    averages the x and z coordinate variances, the vertical one equals
    the y coordinate variance.
    """
    var_oc = np.asarray(var_oc, dtype=np.float64)
    if var_oc.shape[-1] != 3:
        raise ValueError("var_oc must have trailing dimension 3")
    if np.any(var_oc < 0.0):
        raise ValueError("variances must be nonnegative")
    var_u = 0.5 * (var_oc[..., 0] + var_oc[..., 2])
    var_v = var_oc[..., 1]
    return var_u, var_v


def combine(ens: EnsemblePrediction) -> CombinedUncertainty:
    """Total normalized uncertainty: mean aleatoric variance plus ensemble variance."""
    oc_mean, oc_var = ensemble_stats(ens)
    aleatoric_var = np.exp(2.0 * ens.log_sigma_norm).mean(axis=0)  # (n_pixels, 2)
    epi_u, epi_v = project_variance(oc_var)
    combined = aleatoric_var + np.stack([epi_u, epi_v], axis=1)
    return CombinedUncertainty(oc_mean=oc_mean, sigma_norm_comb=np.sqrt(combined))


def pixel_scale(sigma_norm: np.ndarray, cam: CameraIntrinsics, t_z: float) -> np.ndarray:
    """Convert normalized deviations to pixels by the focal-over-depth factor.

    The u component scales by fx / t_z and the v component by fy / t_z
    (so variances scale by the square). Input shape (..., 2).
    """
    if not t_z > 0.0:
        raise ValueError(f"t_z must be positive, got {t_z}")
    sigma_norm = np.asarray(sigma_norm, dtype=np.float64)
    if sigma_norm.shape[-1] != 2:
        raise ValueError("sigma_norm must have trailing dimension 2")
    factors = np.array([cam.fx / t_z, cam.fy / t_z])
    return sigma_norm * factors
