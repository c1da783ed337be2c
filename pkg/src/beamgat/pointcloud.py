"""Point-cloud container plus KITTI/PLY/CSV readers and writers."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CSV_HEADER = ("x", "y", "z", "reflectance", "beam", "masked")
NO_BEAM = -1

# frames with fewer valid points than this are excluded from experiments
MIN_VALID_POINTS = 1024
DEFAULT_SUBSAMPLE = 4096


class FormatError(ValueError):
    """A file does not match the expected on-disk layout."""


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    z: float
    reflectance: float
    beam: int | None = None
    masked: bool = False


@dataclass
class PointCloud:
    """Ordered LiDAR returns stored column-wise.

    ``beam`` is ``-1`` where no channel index is known.
    """

    xyz: np.ndarray
    reflectance: np.ndarray
    beam: np.ndarray = None
    masked: np.ndarray = None
    frame_id: str = ""
    sensor: object = None  # SensorSpec, kept untyped to avoid an import cycle
    dropped_nonfinite: int = 0

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(self.xyz)
        self.reflectance = np.asarray(self.reflectance, dtype=np.float64).reshape(n)
        if self.beam is None:
            self.beam = np.full(n, NO_BEAM, dtype=np.int64)
        self.beam = np.asarray(self.beam, dtype=np.int64).reshape(n)
        if self.masked is None:
            self.masked = np.zeros(n, dtype=bool)
        self.masked = np.asarray(self.masked, dtype=bool).reshape(n)
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.xyz)

    def __getitem__(self, i: int) -> Point:
        b = int(self.beam[i])
        x, y, z = self.xyz[i]
        return Point(float(x), float(y), float(z), float(self.reflectance[i]),
                     None if b == NO_BEAM else b, bool(self.masked[i]))

    @classmethod
    def from_points(cls, points, frame_id: str = "", sensor=None) -> "PointCloud":
        points = list(points)
        return cls(
            xyz=np.array([[p.x, p.y, p.z] for p in points], dtype=np.float64).reshape(-1, 3),
            reflectance=np.array([p.reflectance for p in points], dtype=np.float64),
            beam=np.array([NO_BEAM if p.beam is None else p.beam for p in points], dtype=np.int64),
            masked=np.array([p.masked for p in points], dtype=bool),
            frame_id=frame_id,
            sensor=sensor,
        )

    @property
    def x(self) -> np.ndarray:
        return self.xyz[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.xyz[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.xyz[:, 2]

    @property
    def has_beams(self) -> bool:
        return len(self) > 0 and bool(np.all(self.beam >= 0))

    def select(self, index) -> "PointCloud":
        """Subset by boolean mask or ascending integer index, keeping order."""
        return replace(
            self,
            xyz=self.xyz[index].copy(),
            reflectance=self.reflectance[index].copy(),
            beam=self.beam[index].copy(),
            masked=self.masked[index].copy(),
        )

    def copy(self) -> "PointCloud":
        return self.select(slice(None))


# ---------------------------------------------------------------------------
# readers


def read_kitti_bin(path) -> PointCloud:
    """Read a KITTI Velodyne scan: little-endian float32 records (x, y, z, r)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 16 bytes")
    rec = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    ok = np.all(np.isfinite(rec), axis=1)
    dropped = int(np.count_nonzero(~ok))
    if dropped:
        log.warning("%s: dropped %d non-finite records", path, dropped)
    rec = rec[ok]
    return PointCloud(rec[:, :3], rec[:, 3], frame_id=path.stem, dropped_nonfinite=dropped)


def write_kitti_bin(cloud: PointCloud, path) -> None:
    rec = np.column_stack([cloud.xyz, cloud.reflectance]).astype("<f4")
    Path(path).write_bytes(rec.tobytes())


def read_csv(path, frame_id: str | None = None) -> PointCloud:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise FormatError(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows = [row for row in reader if row]
    if not rows:
        return PointCloud(np.empty((0, 3)), np.empty(0), frame_id=frame_id or path.stem)
    try:
        arr = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if arr.shape[1] != len(CSV_HEADER):
        raise FormatError(f"{path}: expected {len(CSV_HEADER)} columns")
    return PointCloud(
        arr[:, :3], arr[:, 3], beam=arr[:, 4].astype(np.int64),
        masked=arr[:, 5] != 0, frame_id=frame_id or path.stem,
    )


def _rows(cloud: PointCloud):
    for (x, y, z), r, b, m in zip(cloud.xyz, cloud.reflectance, cloud.beam, cloud.masked):
        # fixed 9 decimals keeps a round trip within 1e-9 m at any range
        yield f"{x:.9f}", f"{y:.9f}", f"{z:.9f}", f"{r:.9f}", str(int(b)), "1" if m else "0"


def write_csv(cloud: PointCloud, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(_rows(cloud))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_ply(cloud: PointCloud, path) -> None:
    path = Path(path)
    header = [
        "ply",
        "format ascii 1.0",
        f"comment frame {cloud.frame_id}",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property double reflectance",
        "property int beam",
        "property uchar masked",
        "end_header",
    ]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n")
            for row in _rows(cloud):
                fh.write(" ".join(row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY written by :func:`write_ply`."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "ply":
        raise FormatError(f"{path}: not a PLY file")
    try:
        end = lines.index("end_header")
    except ValueError:
        raise FormatError(f"{path}: missing end_header") from None
    count = next(int(l.split()[-1]) for l in lines[:end] if l.startswith("element vertex"))
    body = lines[end + 1:end + 1 + count]
    if len(body) != count:
        raise FormatError(f"{path}: expected {count} vertices, found {len(body)}")
    arr = np.array([l.split() for l in body], dtype=np.float64).reshape(-1, 6)
    return PointCloud(arr[:, :3], arr[:, 3], beam=arr[:, 4].astype(np.int64),
                      masked=arr[:, 5] != 0, frame_id=path.stem)


# ---------------------------------------------------------------------------
# filtering


@dataclass(frozen=True)
class Bounds:
    x: tuple[float, float] = (-80.0, 80.0)
    y: tuple[float, float] = (-80.0, 80.0)
    z: tuple[float, float] = (-10.0, 4.0)


def range_filter(cloud: PointCloud, r_min: float = 2.0, r_max: float = 80.0,
                 bounds: Bounds | None = None) -> PointCloud:
    """Keep points whose 3-D range is in [r_min, r_max] and that lie inside ``bounds``."""
    if not r_min < r_max:
        raise ValueError("r_min must be below r_max")
    bounds = bounds or Bounds()
    r = np.linalg.norm(cloud.xyz, axis=1)
    keep = (r >= r_min) & (r <= r_max)
    for axis, (lo, hi) in enumerate((bounds.x, bounds.y, bounds.z)):
        c = cloud.xyz[:, axis]
        keep &= (c >= lo) & (c <= hi)
    return cloud.select(keep)


def subsample_uniform(cloud: PointCloud, n: int = DEFAULT_SUBSAMPLE, seed: int = 0) -> PointCloud:
    """Draw ``n`` points without replacement; original order is preserved."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if len(cloud) <= n:
        return cloud
    return cloud.select(subsample_indices(len(cloud), n, seed))


def subsample_indices(n_points: int, n: int, seed: int) -> np.ndarray:
    """Indices :func:`subsample_uniform` would keep for a cloud of ``n_points``."""
    if n_points <= n:
        return np.arange(n_points)
    return np.sort(np.random.default_rng(seed).choice(n_points, size=n, replace=False))


def is_valid_frame(cloud: PointCloud, min_points: int = MIN_VALID_POINTS) -> bool:
    return len(cloud) >= min_points
