"""Finite-difference verification of every analytic gradient.

Each check compares an analytic partial derivative against a central
finite difference of the corresponding value function. The reported
relative error divides by max(1, |analytic|, |numeric|) for the scalar
losses and by max(floor, |analytic|, |numeric|) for the solver
derivatives, so near-zero entries are compared absolutely.

The solver check re-solves the pose problem at perturbed inputs
(warm-started from the unperturbed optimum), which is the independent
path the implicit-function derivatives must reproduce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import CorrespondenceSet, Pose, wrap_angle
from .losses import (
    LossEval,
    WeightNormalizer,
    calib_loss,
    e2e_losses,
    gaussian_kl,
    laplacian_kl,
    masked_noc_loss,
    mixed_kl,
    robust_kl,
    score_bce,
    smooth_l1,
)
from .pnp import SolverConfig, backward, refine, solve
from .synth import NoiseModel, generate

LOSS_TOL = 1e-5
PNP_TOL = 1e-3

_FD_STEP = 1e-6
_PNP_FD_STEP = 1e-5
# Entries of the solver derivative matrices below this magnitude are
# compared absolutely rather than relatively.
_PNP_REL_FLOOR = 1e-2


@dataclass(frozen=True)
class TargetResult:
    """Outcome of all finite-difference checks for one gradient target."""

    name: str
    samples: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def _rel_err(analytic: float, numeric: float, floor: float = 1.0) -> float:
    return abs(analytic - numeric) / max(floor, abs(analytic), abs(numeric))


def _central_diff(f: Callable[[float], float], x: float, h: float = _FD_STEP) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def _check_eval(
    make: Callable[[dict[str, float]], LossEval],
    params: dict[str, float],
) -> float:
    """Max relative error over every scalar gradient entry of one evaluation."""
    result = make(params)
    worst = 0.0
    for name in result.grad:
        def value_at(x: float, _name=name) -> float:
            shifted = dict(params)
            shifted[_name] = x
            return make(shifted).value

        numeric = _central_diff(value_at, params[name])
        worst = max(worst, _rel_err(float(result.grad[name]), numeric))
    return worst


def _sample_away_from(rng: np.random.Generator, avoid: Callable[[dict], bool], draw) -> dict:
    for _ in range(1000):
        params = draw(rng)
        if not avoid(params):
            return params
    raise RuntimeError("could not sample inputs away from non-smooth points")


def check_scalar_losses(seed: int, samples: int) -> list[TargetResult]:
    """Finite-difference checks for every scalar loss gradient."""
    rng = np.random.default_rng(seed)
    results = []

    def run(name: str, draw, avoid, make) -> None:
        worst = 0.0
        for _ in range(samples):
            params = _sample_away_from(rng, avoid, draw)
            worst = max(worst, _check_eval(make, params))
        results.append(TargetResult(name=name, samples=samples, max_rel_err=worst, tol=LOSS_TOL))

    def draw_kl(r):
        return {"mu": r.uniform(-3, 3), "y": r.uniform(-3, 3), "log_sigma": r.uniform(-1.5, 1.5)}

    def scaled_err(p):
        return abs(p["mu"] - p["y"]) * math.exp(-p["log_sigma"])

    run(
        "gaussian_kl", draw_kl, lambda p: False,
        lambda p: gaussian_kl(p["mu"], p["y"], p["log_sigma"]),
    )
    run(
        "laplacian_kl", draw_kl,
        lambda p: abs(p["mu"] - p["y"]) < 1e-2,
        lambda p: laplacian_kl(p["mu"], p["y"], p["log_sigma"]),
    )
    mixed_avoid = lambda p: abs(scaled_err(p) - math.sqrt(2.0)) < 1e-2
    run(
        "mixed_kl", draw_kl, mixed_avoid,
        lambda p: mixed_kl(p["mu"], p["y"], p["log_sigma"]),
    )

    norm = WeightNormalizer(running_mean=1.7)
    run(
        "robust_kl", draw_kl, mixed_avoid,
        lambda p: robust_kl(p["mu"], p["y"], p["log_sigma"], norm),
    )
    run(
        "smooth_l1",
        lambda r: {"x": r.uniform(-3, 3)},
        lambda p: abs(abs(p["x"]) - 1.0) < 1e-2,
        lambda p: smooth_l1(p["x"]),
    )
    run(
        "score_bce",
        lambda r: {"c_pred": r.uniform(0.05, 0.95), "c_tgt": r.uniform(0, 1)},
        lambda p: False,
        lambda p: score_bce(p["c_pred"], p["c_tgt"]),
    )

    # calib_loss: gradient wrt each entry of the correction vector.
    worst = 0.0
    checked = 0
    for _ in range(samples):
        basis = rng.normal(size=(4, 4))
        raw_cov = basis @ basis.T + 0.1 * np.eye(4)
        pose_est = rng.uniform(-2, 2, size=4)
        pose_gt = rng.uniform(-2, 2, size=4)
        k = rng.uniform(-1, 1, size=4)
        analytic = calib_loss(pose_est, pose_gt, raw_cov, k).grad["k"]
        for i in range(4):
            def value_at(x: float, _i=i) -> float:
                shifted = k.copy()
                shifted[_i] = x
                return calib_loss(pose_est, pose_gt, raw_cov, shifted).value

            worst = max(worst, _rel_err(float(analytic[i]), _central_diff(value_at, k[i])))
            checked += 1
    results.append(TargetResult("calib_loss", checked, worst, LOSS_TOL))

    # masked_noc_loss: gradient wrt each masked prediction entry.
    worst = 0.0
    checked = 0
    for _ in range(samples):
        pred = rng.uniform(-2, 2, size=8)
        target = rng.uniform(-2, 2, size=8)
        mask = (rng.random(8) < 0.6).astype(float)
        if mask.sum() == 0:
            mask[0] = 1.0
        # keep each masked error away from the smooth-L1 transition
        diff = pred - target
        bad = (np.abs(np.abs(diff) - 1.0) < 1e-2) & (mask > 0)
        pred[bad] += 0.05
        analytic = masked_noc_loss(pred, target, mask).grad["pred_noc"]
        for i in np.flatnonzero(mask):
            def value_at(x: float, _i=i) -> float:
                shifted = pred.copy()
                shifted[_i] = x
                return masked_noc_loss(shifted, target, mask).value

            worst = max(worst, _rel_err(float(analytic[i]), _central_diff(value_at, pred[i])))
            checked += 1
    results.append(TargetResult("masked_noc_loss", checked, worst, LOSS_TOL))

    # translation / yaw pose losses.
    worst_t = 0.0
    worst_r = 0.0
    for _ in range(samples):
        while True:
            t_est = rng.uniform(-3, 3, size=3)
            t_gt = rng.uniform(-3, 3, size=3)
            dist = float(np.linalg.norm(t_est - t_gt))
            beta_est = rng.uniform(-math.pi, math.pi)
            beta_gt = rng.uniform(-math.pi, math.pi)
            chord = float(
                np.hypot(
                    math.cos(beta_est) - math.cos(beta_gt),
                    math.sin(beta_est) - math.sin(beta_gt),
                )
            )
            if (
                dist > 1e-2
                and abs(dist - 1.0) > 1e-2
                and chord > 1e-2
                and abs(chord - 1.0) > 1e-2
            ):
                break
        pose_gt = Pose(beta=beta_gt, t=t_gt)
        trans, rot = e2e_losses(Pose(beta=beta_est, t=t_est), pose_gt)
        for i in range(3):
            def trans_at(x: float, _i=i) -> float:
                shifted = t_est.copy()
                shifted[_i] = x
                return e2e_losses(Pose(beta=beta_est, t=shifted), pose_gt)[0].value

            numeric = _central_diff(trans_at, t_est[i])
            worst_t = max(worst_t, _rel_err(float(trans.grad["t_est"][i]), numeric))

        def rot_at(x: float) -> float:
            return e2e_losses(Pose(beta=x, t=t_est), pose_gt)[1].value

        worst_r = max(worst_r, _rel_err(float(rot.grad["beta_est"]), _central_diff(rot_at, beta_est)))
    results.append(TargetResult("trans_loss", samples * 3, worst_t, LOSS_TOL))
    results.append(TargetResult("rot_loss", samples, worst_r, LOSS_TOL))

    return results


_TIGHT_CFG = SolverConfig(max_iters=200, grad_tol=1e-10, polish_iters=10)
_WARM_CFG = SolverConfig(max_iters=60, grad_tol=1e-10, initial_damping=1e-6, polish_iters=10)


def finite_difference_pose_jacobians(
    cs: CorrespondenceSet, pose: Pose, h: float = _PNP_FD_STEP
) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the solved pose by re-solving at perturbed inputs.

    Returns matrices matching PnpGradients: (4, 3n) over object
    coordinates and (4, 2n) over log standard deviations.
    """
    n = len(cs)

    def resolve(shifted: CorrespondenceSet) -> np.ndarray:
        return refine(shifted, pose, _WARM_CFG).pose.as_vector()

    def pose_delta(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
        delta = hi - lo
        delta[0] = wrap_angle(delta[0])
        return delta / (2.0 * h)

    d_oc = np.empty((4, 3 * n))
    for i in range(n):
        for axis in range(3):
            plus = cs.oc.copy()
            minus = cs.oc.copy()
            plus[i, axis] += h
            minus[i, axis] -= h
            hi = resolve(CorrespondenceSet(plus, cs.uv_obs, cs.sigma, cs.camera))
            lo = resolve(CorrespondenceSet(minus, cs.uv_obs, cs.sigma, cs.camera))
            d_oc[:, 3 * i + axis] = pose_delta(hi, lo)

    d_ls = np.empty((4, 2 * n))
    for i in range(n):
        for axis in range(2):
            plus = cs.sigma.copy()
            minus = cs.sigma.copy()
            plus[i, axis] *= math.exp(h)
            minus[i, axis] *= math.exp(-h)
            hi = resolve(CorrespondenceSet(cs.oc, cs.uv_obs, plus, cs.camera))
            lo = resolve(CorrespondenceSet(cs.oc, cs.uv_obs, minus, cs.camera))
            d_ls[:, 2 * i + axis] = pose_delta(hi, lo)
    return d_oc, d_ls


def _matrix_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), _PNP_REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_pnp_backward(seed: int, n_scenes: int = 2, pts: int = 20) -> list[TargetResult]:
    """Compare implicit-function pose derivatives with solver finite differences."""
    worst_oc = 0.0
    worst_ls = 0.0
    entries_oc = 0
    entries_ls = 0
    noise = NoiseModel(sigma_px_log_mean=math.log(1.0), sigma_px_log_std=0.3)
    for scene_idx in range(n_scenes):
        scene = generate(
            1, pts, noise, seed=seed + scene_idx, depth_range=(8.0, 20.0)
        )
        cs = scene.objects[0].correspondences
        dist = solve(cs, _TIGHT_CFG)
        grads = backward(cs, dist.pose)
        fd_oc, fd_ls = finite_difference_pose_jacobians(cs, dist.pose)
        worst_oc = max(worst_oc, _matrix_rel_err(grads.d_pose_d_oc, fd_oc))
        worst_ls = max(worst_ls, _matrix_rel_err(grads.d_pose_d_log_sigma, fd_ls))
        entries_oc += fd_oc.size
        entries_ls += fd_ls.size
    return [
        TargetResult("pnp_backward_oc", entries_oc, worst_oc, PNP_TOL),
        TargetResult("pnp_backward_log_sigma", entries_ls, worst_ls, PNP_TOL),
    ]


def run_gradcheck(seed: int = 0, samples: int = 1000, pnp_scenes: int = 2) -> list[TargetResult]:
    """Run the full gradient verification suite."""
    results = check_scalar_losses(seed, samples)
    results.extend(check_pnp_backward(seed + 1000, n_scenes=pnp_scenes))
    return results
