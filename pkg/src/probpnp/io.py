"""Versioned file formats used by the command-line harness.

Scenes are stored as JSON, per-object solver results as RFC-4180 CSV
with a fixed header, and calibration fits as JSON. Floats are written
with ``repr`` (shortest round-trip form), so writing the same data twice
produces byte-identical files and reading recovers the exact values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .calibration import CalibrationFit, CalibrationVector
from .errors import SchemaError
from .geometry import CameraIntrinsics, CorrespondenceSet, Dimensions, Pose, noc_to_oc
from .synth import Scene, SceneObject

SCENE_SCHEMA_VERSION = 1
METRICS_SCHEMA_VERSION = 1
CALIBRATION_SCHEMA_VERSION = 1

# Upper-triangle order of the 4x4 pose covariance over (beta, x, y, z).
_COV_KEYS = ("bb", "bx", "by", "bz", "xx", "xy", "xz", "yy", "yz", "zz")
_COV_INDEX = ((0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3))

METRICS_COLUMNS = (
    "schema_version",
    "object_id",
    "status",
    "converged",
    "nll",
    "gt_beta",
    "gt_tx",
    "gt_ty",
    "gt_tz",
    "est_beta",
    "est_tx",
    "est_ty",
    "est_tz",
    "trans_err",
    "yaw_err",
    "dim_l",
    "dim_h",
    "dim_w",
) + tuple(f"cov_{k}" for k in _COV_KEYS)

SCORED_COLUMNS = METRICS_COLUMNS + ("c_2d", "c_3dloc", "c_3d")


def pack_cov(cov: np.ndarray) -> tuple[float, ...]:
    """Upper triangle of a symmetric 4x4 matrix in fixed order."""
    return tuple(float(cov[i, j]) for i, j in _COV_INDEX)


def unpack_cov(values) -> np.ndarray:
    cov = np.empty((4, 4))
    for (i, j), v in zip(_COV_INDEX, values):
        cov[i, j] = v
        cov[j, i] = v
    return cov


@dataclass
class MetricsRow:
    """One solved object: ground truth, estimate, errors, covariance, score."""

    object_id: int
    status: str = "ok"
    converged: bool = False
    nll: float = math.nan
    gt_beta: float = math.nan
    gt_tx: float = math.nan
    gt_ty: float = math.nan
    gt_tz: float = math.nan
    est_beta: float = math.nan
    est_tx: float = math.nan
    est_ty: float = math.nan
    est_tz: float = math.nan
    trans_err: float = math.nan
    yaw_err: float = math.nan
    dim_l: float = math.nan
    dim_h: float = math.nan
    dim_w: float = math.nan
    cov_bb: float = math.nan
    cov_bx: float = math.nan
    cov_by: float = math.nan
    cov_bz: float = math.nan
    cov_xx: float = math.nan
    cov_xy: float = math.nan
    cov_xz: float = math.nan
    cov_yy: float = math.nan
    cov_yz: float = math.nan
    cov_zz: float = math.nan
    c_2d: float = math.nan
    c_3dloc: float = math.nan
    c_3d: float = math.nan

    def cov_matrix(self) -> np.ndarray:
        return unpack_cov(getattr(self, f"cov_{k}") for k in _COV_KEYS)

    def set_cov(self, cov: np.ndarray) -> None:
        for key, value in zip(_COV_KEYS, pack_cov(cov)):
            setattr(self, f"cov_{key}", value)

    def est_pose_vector(self) -> np.ndarray:
        return np.array([self.est_beta, self.est_tx, self.est_ty, self.est_tz])

    def gt_pose_vector(self) -> np.ndarray:
        return np.array([self.gt_beta, self.gt_tx, self.gt_ty, self.gt_tz])


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(name: str, raw: str):
    if name == "object_id":
        return int(raw)
    if name == "status":
        return raw
    if name == "converged":
        return raw == "true"
    return float(raw)


def write_metrics(rows: list[MetricsRow], path, *, scored: bool = False) -> None:
    """Write rows under the fixed (optionally score-extended) header."""
    columns = SCORED_COLUMNS if scored else METRICS_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in sorted(rows, key=lambda r: r.object_id):
            values = []
            for name in columns:
                if name == "schema_version":
                    values.append(str(METRICS_SCHEMA_VERSION))
                else:
                    values.append(_format_cell(getattr(row, name)))
            writer.writerow(values)


def read_metrics(path) -> list[MetricsRow]:
    """Read a metrics CSV (plain or scored), checking the schema version."""
    valid_names = {f.name for f in fields(MetricsRow)}
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "schema_version" not in header or "object_id" not in header:
            raise SchemaError(f"{path}: not a metrics CSV")
        unknown = [h for h in header if h != "schema_version" and h not in valid_names]
        if unknown:
            raise SchemaError(f"{path}: unknown columns {unknown}")
        missing = [c for c in METRICS_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        for raw in reader:
            record = dict(zip(header, raw))
            version = int(record.pop("schema_version"))
            if version != METRICS_SCHEMA_VERSION:
                raise SchemaError(
                    f"{path}: metrics schema version {version}, expected {METRICS_SCHEMA_VERSION}"
                )
            rows.append(
                MetricsRow(**{name: _parse_cell(name, value) for name, value in record.items()})
            )
    return rows


def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCENE_SCHEMA_VERSION,
        "seed": scene.seed,
        "camera": {
            "fx": scene.camera.fx,
            "fy": scene.camera.fy,
            "cx": scene.camera.cx,
            "cy": scene.camera.cy,
        },
        "objects": [
            {
                "gt_pose": {"beta": obj.gt_pose.beta, "t": obj.gt_pose.t.tolist()},
                "gt_dims": {"l": obj.gt_dims.l, "h": obj.gt_dims.h, "w": obj.gt_dims.w},
                "noc": obj.gt_noc.tolist(),
                "uv_obs": obj.correspondences.uv_obs.tolist(),
                "sigma": obj.correspondences.sigma.tolist(),
                "outlier_mask": [bool(b) for b in obj.outlier_mask],
                "sigma_true_px": obj.sigma_true_px.tolist(),
            }
            for obj in scene.objects
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    version = data.get("schema_version")
    if version != SCENE_SCHEMA_VERSION:
        raise SchemaError(f"scene schema version {version}, expected {SCENE_SCHEMA_VERSION}")
    camera = CameraIntrinsics(**data["camera"])
    objects = []
    for entry in data["objects"]:
        pose = Pose(beta=entry["gt_pose"]["beta"], t=np.array(entry["gt_pose"]["t"]))
        dims = Dimensions(**entry["gt_dims"])
        noc = np.array(entry["noc"], dtype=np.float64)
        objects.append(
            SceneObject(
                gt_pose=pose,
                gt_dims=dims,
                gt_noc=noc,
                correspondences=CorrespondenceSet(
                    oc=noc_to_oc(noc, dims),
                    uv_obs=np.array(entry["uv_obs"], dtype=np.float64),
                    sigma=np.array(entry["sigma"], dtype=np.float64),
                    camera=camera,
                ),
                outlier_mask=np.array(entry["outlier_mask"], dtype=bool),
                sigma_true_px=np.array(entry["sigma_true_px"], dtype=np.float64),
            )
        )
    return Scene(camera=camera, objects=tuple(objects), seed=int(data["seed"]))


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, separators=(",", ":"))
        fh.write("\n")


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def save_calibration(fit: CalibrationFit, path) -> None:
    payload = {
        "schema_version": CALIBRATION_SCHEMA_VERSION,
        "k": fit.vector.k.tolist(),
        "loss_trace": fit.loss_trace.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_calibration(path) -> CalibrationFit:
    with open(path) as fh:
        data = json.load(fh)
    version = data.get("schema_version")
    if version != CALIBRATION_SCHEMA_VERSION:
        raise SchemaError(
            f"calibration schema version {version}, expected {CALIBRATION_SCHEMA_VERSION}"
        )
    return CalibrationFit(
        vector=CalibrationVector(k=np.array(data["k"], dtype=np.float64)),
        loss_trace=np.array(data["loss_trace"], dtype=np.float64),
    )
