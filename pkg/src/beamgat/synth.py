"""Synthetic spinning-LiDAR scans of a ground plane with box obstacles.

The sensor sits at the origin.  Each beam ``b`` fires at its nominal
elevation and every one of ``M`` azimuths; the nearest surface hit within
``r_max`` becomes a return with the exact beam index attached.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .beams import DESK_SENSOR, SensorSpec, cartesian_from_spherical
from .pointcloud import PointCloud

GROUND_Z = -1.73
GROUND_REFLECTANCE = 0.3
BOX_REFLECTANCE = 0.6


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # full edge lengths along x, y, z

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * np.asarray(self.size)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + 0.5 * np.asarray(self.size)


@dataclass(frozen=True)
class Scene:
    ground_z: float | None = GROUND_Z
    boxes: tuple[Box, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.ground_z is not None and self.ground_z >= 0:
            raise ValueError("ground must lie below the sensor (ground_z < 0)")
        for b in self.boxes:
            if self.ground_z is not None and b.lo[2] < self.ground_z - 1e-9:
                raise ValueError("boxes must sit on or above the ground")
            if np.all(b.lo <= 0) and np.all(b.hi >= 0):
                raise ValueError("the sensor origin lies inside a box")


def _box_hits(dirs: np.ndarray, box: Box) -> np.ndarray:
    """Entry distance of each unit ray from the origin into ``box`` (inf if missed)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = box.lo * inv
        t2 = box.hi * inv
    # rays parallel to a slab: inside the slab -> unbounded, else miss
    parallel = dirs == 0
    inside = (box.lo <= 0) & (box.hi >= 0)
    t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = t_lo.max(axis=1)
    t_far = t_hi.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def raycast_scan(scene: Scene, spec: SensorSpec = DESK_SENSOR, azimuth_steps: int = 360,
                 noise_std: float = 0.0, seed: int = 0, r_max: float = 80.0,
                 frame_id: str = "") -> PointCloud:
    """Simulate one sweep; range noise is Gaussian with ``noise_std`` metres."""
    if azimuth_steps < 8:
        raise ValueError("azimuth_steps must be at least 8")
    if scene.ground_z is None and not scene.boxes:
        raise ValueError("scene has no surfaces")
    beams = np.repeat(np.arange(spec.beam_count), azimuth_steps)
    theta = spec.beam_elevation(beams)
    phi = 2.0 * math.pi * np.tile(np.arange(azimuth_steps), spec.beam_count) / azimuth_steps
    dirs = np.column_stack(cartesian_from_spherical(np.ones_like(theta), theta, phi))

    t = np.full(len(dirs), np.inf)
    refl = np.full(len(dirs), GROUND_REFLECTANCE)
    if scene.ground_z is not None:
        down = dirs[:, 2] < 0
        t[down] = scene.ground_z / dirs[down, 2]
    for box in scene.boxes:
        tb = _box_hits(dirs, box)
        closer = tb < t
        t[closer] = tb[closer]
        refl[closer] = BOX_REFLECTANCE

    hit = t <= r_max
    r = t[hit]
    if noise_std > 0:
        r = np.maximum(r + np.random.default_rng(seed).normal(0.0, noise_std, r.shape), 0.0)
    x, y, z = cartesian_from_spherical(r, theta[hit], phi[hit])
    return PointCloud(np.column_stack([x, y, z]), refl[hit], beam=beams[hit],
                      frame_id=frame_id, sensor=spec)


def random_scene(rng: np.random.Generator, n_boxes: tuple[int, int] = (3, 6),
                 ground_z: float = GROUND_Z) -> Scene:
    """Ground plane plus 3-6 boxes resting on it, 4-25 m from the sensor."""
    boxes = []
    for _ in range(int(rng.integers(n_boxes[0], n_boxes[1] + 1))):
        sx, sy = rng.uniform(1.0, 5.0, size=2)
        sz = rng.uniform(1.0, 3.0)
        dist = rng.uniform(4.0 + max(sx, sy), 25.0)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        boxes.append(Box((dist * math.cos(ang), dist * math.sin(ang), ground_z + sz / 2),
                         (sx, sy, sz)))
    return Scene(ground_z, tuple(boxes))


def make_benchmark_set(n_frames: int = 20, seed: int = 0, spec: SensorSpec = DESK_SENSOR,
                       azimuth_steps: int = 360, noise_std: float = 0.01) -> list[PointCloud]:
    """Deterministic frames with randomised box layouts over a fixed ground plane."""
    if n_frames < 1:
        raise ValueError("n_frames must be at least 1")
    frames = []
    for i, sub in enumerate(np.random.SeedSequence(seed).spawn(n_frames)):
        rng = np.random.default_rng(sub)
        scene = random_scene(rng)
        frames.append(raycast_scan(scene, spec, azimuth_steps, noise_std,
                                   seed=int(rng.integers(2 ** 32)), frame_id=f"frame_{i:04d}"))
    return frames


def checksum(cloud: PointCloud) -> str:
    h = hashlib.sha256()
    for arr in (cloud.xyz, cloud.reflectance, cloud.beam, cloud.masked):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
