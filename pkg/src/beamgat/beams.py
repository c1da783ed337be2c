"""Spinning-LiDAR beam geometry and vertical channel dropout."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pointcloud import PointCloud

MASKED_Z_SENTINEL = 0.0


@dataclass(frozen=True)
class SensorSpec:
    """Vertical beam layout; angles in radians, beams evenly spaced."""

    beam_count: int = 64
    theta_min: float = math.radians(-24.8)
    theta_max: float = math.radians(2.0)
    sensor_height: float = 1.73

    def __post_init__(self):
        if self.beam_count < 2:
            raise ValueError("beam_count must be at least 2")
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be below theta_max")

    @classmethod
    def from_degrees(cls, beam_count: int, theta_min_deg: float, theta_max_deg: float,
                     sensor_height: float = 1.73) -> "SensorSpec":
        return cls(beam_count, math.radians(theta_min_deg), math.radians(theta_max_deg),
                   sensor_height)

    @property
    def delta_theta(self) -> float:
        return (self.theta_max - self.theta_min) / self.beam_count

    def beam_elevation(self, beam) -> np.ndarray:
        """Nominal (centre) elevation angle of each beam index."""
        return self.theta_min + (np.asarray(beam, dtype=np.float64) + 0.5) * self.delta_theta


HDL64E = SensorSpec()
DESK_SENSOR = SensorSpec(beam_count=16)


def cartesian_from_spherical(r, theta, phi):
    """Range/elevation/azimuth to (x, y, z); works elementwise on arrays."""
    r, theta, phi = np.asarray(r, float), np.asarray(theta, float), np.asarray(phi, float)
    if np.any(r < 0):
        raise ValueError("range must be non-negative")
    c = r * np.cos(theta)
    return c * np.cos(phi), c * np.sin(phi), r * np.sin(theta)


def spherical_from_cartesian(x, y, z):
    x, y, z = np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r == 0):
        raise ValueError("the zero vector has no direction")
    theta = np.arcsin(np.clip(z / r, -1.0, 1.0))
    return r, theta, np.arctan2(y, x)


def beam_index_from_elevation(theta, spec: SensorSpec) -> np.ndarray:
    b = np.floor((np.asarray(theta, float) - spec.theta_min) / spec.delta_theta)
    return np.clip(b, 0, spec.beam_count - 1).astype(np.int64)


def estimate_beam_index(cloud: PointCloud, spec: SensorSpec) -> PointCloud:
    """Assign each point the beam whose elevation band contains it."""
    out = cloud.copy()
    out.sensor = spec
    if len(cloud) == 0:
        return out
    r = np.linalg.norm(cloud.xyz, axis=1)
    theta = np.arcsin(np.clip(cloud.z / np.where(r > 0, r, 1.0), -1.0, 1.0))
    out.beam = beam_index_from_elevation(theta, spec)
    return out


def nominal_z(cloud: PointCloud, spec: SensorSpec) -> np.ndarray:
    """Height implied by horizontal range and the beam's nominal elevation."""
    r_xy = np.hypot(cloud.x, cloud.y)
    return r_xy * np.tan(spec.beam_elevation(cloud.beam))


# ---------------------------------------------------------------------------
# dropout


@dataclass(frozen=True)
class DropoutPattern:
    """Which beams fail.

    ``kind`` is one of ``every_nth`` (beams with ``b % n == phase_offset``),
    ``random_fraction`` (that fraction of beams drawn with ``seed``) or
    ``contiguous_band`` (``n_or_fraction`` beams starting at ``phase_offset``).
    """

    kind: str = "every_nth"
    n_or_fraction: float = 4
    phase_offset: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind == "every_nth":
            if int(self.n_or_fraction) != self.n_or_fraction or self.n_or_fraction < 2:
                raise ValueError("every_nth needs an integer n >= 2")
        elif self.kind == "random_fraction":
            if not 0.0 < self.n_or_fraction < 1.0:
                raise ValueError("random_fraction must lie in (0, 1)")
        elif self.kind == "contiguous_band":
            if int(self.n_or_fraction) != self.n_or_fraction or self.n_or_fraction < 1:
                raise ValueError("contiguous_band width must be a positive integer")
            if self.phase_offset < 0:
                raise ValueError("band start must be non-negative")
        else:
            raise ValueError(f"unknown dropout kind {self.kind!r}")

    def dropped_beams(self, beam_count: int) -> list[int]:
        if self.kind == "every_nth":
            n = int(self.n_or_fraction)
            beams = [b for b in range(beam_count) if b % n == self.phase_offset % n]
        elif self.kind == "random_fraction":
            m = max(1, round(self.n_or_fraction * beam_count))
            rng = np.random.default_rng(self.seed)
            beams = sorted(int(b) for b in rng.choice(beam_count, size=m, replace=False))
        else:
            start, width = self.phase_offset, int(self.n_or_fraction)
            if start + width > beam_count:
                raise ValueError("band extends beyond the last beam")
            beams = list(range(start, start + width))
        if len(beams) >= beam_count:
            raise ValueError("pattern drops every beam")
        return beams

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_or_fraction": self.n_or_fraction,
                "phase_offset": self.phase_offset, "seed": self.seed}


@dataclass
class MaskedFrame:
    """A cloud whose dropped-beam points carry a sentinel z.

    ``truth_z[k]`` is the original height of the ``k``-th masked point in
    cloud order.
    """

    cloud: PointCloud
    truth_z: np.ndarray
    dropped_beams: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.truth_z = np.asarray(self.truth_z, dtype=np.float64).reshape(-1)
        if len(self.truth_z) != int(self.cloud.masked.sum()):
            raise ValueError("truth_z must hold one value per masked point")

    @property
    def mask(self) -> np.ndarray:
        return self.cloud.masked

    @property
    def masked_index(self) -> np.ndarray:
        return np.flatnonzero(self.cloud.masked)

    @property
    def masked_fraction(self) -> float:
        return float(self.cloud.masked.mean()) if len(self.cloud) else 0.0

    def full_truth_z(self) -> np.ndarray:
        """Per-point ground-truth heights (observed z where not masked)."""
        z = self.cloud.z.copy()
        z[self.cloud.masked] = self.truth_z
        return z

    def select(self, index) -> "MaskedFrame":
        """Subset points, keeping ``truth_z`` aligned."""
        full = self.full_truth_z()
        sub = self.cloud.select(index)
        return MaskedFrame(sub, full[index][sub.masked], list(self.dropped_beams))

    def with_z(self, z_masked) -> PointCloud:
        """Cloud with masked heights replaced by ``z_masked``, flags kept."""
        out = self.cloud.copy()
        out.xyz[out.masked, 2] = z_masked
        return out


def apply_channel_dropout(cloud: PointCloud, pattern: DropoutPattern,
                          beam_count: int | None = None) -> MaskedFrame:
    """Mask the z of every point on a dropped beam."""
    if not cloud.has_beams:
        raise ValueError("cloud has no beam indices; run estimate_beam_index first")
    if beam_count is None:
        beam_count = cloud.sensor.beam_count if cloud.sensor is not None else int(cloud.beam.max()) + 1
    dropped = pattern.dropped_beams(beam_count)
    hit = np.isin(cloud.beam, dropped)
    out = cloud.copy()
    out.masked = hit.copy()
    truth = cloud.z[hit].copy()
    out.xyz[hit, 2] = MASKED_Z_SENTINEL
    return MaskedFrame(out, truth, dropped)


def unmask(frame: MaskedFrame) -> PointCloud:
    """Restore the original cloud from a masked frame."""
    out = frame.cloud.copy()
    out.xyz[:, 2] = frame.full_truth_z()
    out.masked = np.zeros(len(out), dtype=bool)
    return out
