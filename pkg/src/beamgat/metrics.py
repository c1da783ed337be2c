"""Reconstruction scores for masked-beam elevation recovery.

Height errors (RMSE_z, MAE_z, accuracy) are taken over masked points only;
RMSE_XYZ compares whole clouds point by point.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_TAU = 0.10
METRIC_NAMES = ("rmse_xyz", "rmse_z", "mae_z", "accuracy", "chamfer", "runtime_s")


def _errors(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"{pred.size} predictions for {truth.size} truth values")
    if pred.size == 0:
        raise ValueError("no points to score")
    return pred - truth


def rmse_z(pred, truth) -> float:
    e = _errors(pred, truth)
    return float(np.sqrt(np.mean(e * e)))


def mae_z(pred, truth) -> float:
    return float(np.mean(np.abs(_errors(pred, truth))))


def _fraction_within(abs_err: np.ndarray, tau: float) -> float:
    return np.count_nonzero(abs_err <= tau) / abs_err.size


def accuracy_at(pred, truth, tau: float = DEFAULT_TAU) -> float:
    """Fraction of points whose height error is at most ``tau`` metres."""
    return _fraction_within(np.abs(_errors(pred, truth)), tau)


def rmse_xyz(reconstructed, original) -> float:
    """Point-wise RMSE over every point of two equally ordered clouds."""
    a = getattr(reconstructed, "xyz", reconstructed)
    b = getattr(original, "xyz", original)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"point count mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("no points to score")
    d = a - b
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def _check_sets(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")
    return a, b


def _nearest(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    _, idx = cKDTree(dst).query(src, k=1)
    d = src - dst[idx]
    return np.sqrt(np.sum(d * d, axis=1))


def chamfer(a, b) -> float:
    """Symmetric mean nearest-neighbour Euclidean distance (metres)."""
    a, b = _check_sets(a, b)
    return 0.5 * (float(np.mean(_nearest(a, b))) + float(np.mean(_nearest(b, a))))


def chamfer_brute_force(a, b) -> float:
    """O(N*M) reference for :func:`chamfer`."""
    a, b = _check_sets(a, b)
    d = a[:, None, :] - b[None, :, :]
    dist = np.sqrt(np.sum(d * d, axis=2))
    return 0.5 * (float(np.mean(dist.min(axis=1))) + float(np.mean(dist.min(axis=0))))


def error_cdf(pred, truth, thresholds=None) -> list[tuple[float, float]]:
    """Cumulative fraction of points with |error| <= each threshold."""
    abs_err = np.abs(_errors(pred, truth))
    if thresholds is None:
        thresholds = np.round(np.arange(0.0, 0.505, 0.005), 3)
    return [(float(t), _fraction_within(abs_err, float(t))) for t in thresholds]


def write_cdf_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold_m", "fraction"])
        for t, f in rows:
            w.writerow([f"{t:.6f}", f"{f:.12g}"])


@dataclass
class FrameMetrics:
    frame_id: str
    rmse_xyz: float
    rmse_z: float
    mae_z: float
    accuracy: float
    chamfer: float
    runtime_s: float
    masked_points: int
    total_points: int


def evaluate_frame(frame, z_pred, frame_id: str | None = None, runtime_s: float = 0.0,
                   tau: float = DEFAULT_TAU) -> FrameMetrics:
    """Score predicted heights for the masked points of a :class:`MaskedFrame`."""
    from .beams import unmask

    z_pred = np.asarray(z_pred, dtype=np.float64).reshape(-1)
    idx = frame.masked_index
    original = unmask(frame)
    recon = frame.with_z(z_pred)
    truth_pts = original.xyz[idx]
    pred_pts = recon.xyz[idx]
    m = FrameMetrics(
        frame_id=frame_id if frame_id is not None else frame.cloud.frame_id,
        rmse_xyz=rmse_xyz(recon, original),
        rmse_z=rmse_z(z_pred, frame.truth_z),
        mae_z=mae_z(z_pred, frame.truth_z),
        accuracy=accuracy_at(z_pred, frame.truth_z, tau),
        chamfer=chamfer(pred_pts, truth_pts),
        runtime_s=float(runtime_s),
        masked_points=int(idx.size),
        total_points=len(frame.cloud),
    )
    if m.mae_z > m.rmse_z * (1 + 1e-12) + 1e-15:
        raise AssertionError(f"MAE {m.mae_z} exceeds RMSE {m.rmse_z}")
    return m


@dataclass
class MetricsReport:
    frames: list[FrameMetrics]

    def aggregate(self) -> dict[str, dict[str, float]]:
        """mean, std, min and max of each metric across frames."""
        out = {}
        for name in METRIC_NAMES:
            v = np.array([getattr(f, name) for f in self.frames], dtype=np.float64)
            out[name] = {"mean": float(v.mean()), "std": float(v.std()),
                         "min": float(v.min()), "max": float(v.max())}
        return out

    def mean(self, name: str) -> float:
        return self.aggregate()[name]["mean"]

    def write_csv(self, path) -> None:
        """One row per frame followed by a single ``aggregate`` row of means."""
        cols = ["frame_id", *METRIC_NAMES, "masked_points", "total_points"]
        agg = self.aggregate()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for f in self.frames:
                d = asdict(f)
                w.writerow([d["frame_id"], *(f"{d[c]:.12g}" for c in METRIC_NAMES),
                            d["masked_points"], d["total_points"]])
            w.writerow(["aggregate", *(f"{agg[c]['mean']:.12g}" for c in METRIC_NAMES),
                        sum(f.masked_points for f in self.frames),
                        sum(f.total_points for f in self.frames)])

    def write_summary_csv(self, path) -> None:
        """Mean, std, min and max of every metric, one row per metric."""
        agg = self.aggregate()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "mean", "std", "min", "max"])
            for name in METRIC_NAMES:
                a = agg[name]
                w.writerow([name, *(f"{a[s]:.12g}" for s in ("mean", "std", "min", "max"))])


def read_metrics_csv(path) -> list[dict[str, str]]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
