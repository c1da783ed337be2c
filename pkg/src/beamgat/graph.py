"""Directed kNN graphs in CSR form.

Segment ``i`` of ``neighbors`` (``offsets[i]:offsets[i+1]``) lists the
sources ``j`` whose messages flow into node ``i``.  Neighbours are ordered
by (distance, index), so ties always go to the lower point index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .beams import SensorSpec, nominal_z
from .pointcloud import PointCloud

SPACES = ("xyz_full", "xy_only", "xy_plus_nominal_z")


@dataclass(frozen=True)
class KnnGraph:
    offsets: np.ndarray
    neighbors: np.ndarray
    k: int
    space: str = "xy_plus_nominal_z"
    self_loops: bool = True

    @property
    def num_nodes(self) -> int:
        return len(self.offsets) - 1

    @property
    def num_edges(self) -> int:
        return len(self.neighbors)

    def destinations(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_nodes), np.diff(self.offsets))

    def segment(self, i: int) -> np.ndarray:
        return self.neighbors[self.offsets[i]:self.offsets[i + 1]]

    def relabel(self, perm: np.ndarray) -> "KnnGraph":
        """Graph on nodes reordered so that new node ``a`` is old node ``perm[a]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        deg = np.diff(self.offsets)[perm]
        offsets = np.concatenate([[0], np.cumsum(deg)])
        nbrs = np.concatenate([inv[self.segment(p)] for p in perm]) if len(perm) else self.neighbors
        return KnnGraph(offsets, nbrs, self.k, self.space, self.self_loops)

    def to_csv(self, stem) -> tuple[Path, Path]:
        """Dump ``<stem>_offsets.csv`` and ``<stem>_neighbors.csv`` for debugging."""
        stem = Path(stem)
        off = stem.with_name(stem.name + "_offsets.csv")
        nbr = stem.with_name(stem.name + "_neighbors.csv")
        np.savetxt(off, self.offsets, fmt="%d", header="offset", comments="")
        dst = self.destinations()
        np.savetxt(nbr, np.column_stack([dst, self.neighbors]), fmt="%d",
                   delimiter=",", header="destination,source", comments="")
        return off, nbr


def graph_coordinates(cloud: PointCloud, space: str, sensor: SensorSpec | None = None) -> np.ndarray:
    """The 3-column coordinates distances are measured in."""
    if space == "xyz_full":
        return cloud.xyz.copy()
    if space == "xy_only":
        return np.column_stack([cloud.x, cloud.y, np.zeros(len(cloud))])
    if space == "xy_plus_nominal_z":
        sensor = sensor or cloud.sensor
        if sensor is None or not cloud.has_beams:
            raise ValueError("xy_plus_nominal_z needs beam indices and a sensor spec")
        return np.column_stack([cloud.x, cloud.y, nominal_z(cloud, sensor)])
    raise ValueError(f"unknown graph space {space!r}; expected one of {SPACES}")


def _sq_dist(pts: np.ndarray, i, cand) -> np.ndarray:
    # both search paths use this exact expression so tie comparisons agree bitwise
    d = pts[cand] - pts[i]
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def _assemble(rows, k: int, space: str, self_loops: bool) -> KnnGraph:
    """Pack ``n`` rows of ``k`` sources each; self-loops go last in each segment."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, k)
    n = len(rows)
    if self_loops:
        rows = np.column_stack([rows, np.arange(n, dtype=np.int64)])
    offsets = np.arange(n + 1, dtype=np.int64) * rows.shape[1]
    return KnnGraph(offsets, rows.reshape(-1), k, space, self_loops)


def _check(n: int, k: int) -> None:
    if k < 1:
        raise ValueError("k must be at least 1")
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")


def brute_force_knn(cloud: PointCloud, k: int, space: str = "xy_plus_nominal_z",
                    add_self_loops: bool = True, sensor: SensorSpec | None = None) -> KnnGraph:
    """Exhaustive O(N^2) reference with the same tie rule as :func:`build_knn`."""
    pts = graph_coordinates(cloud, space, sensor)
    n = len(pts)
    _check(n, k)
    rows = []
    for i in range(n):
        d2 = _sq_dist(pts, i, np.arange(n))
        order = np.lexsort((np.arange(n), d2))
        order = order[order != i]
        rows.append(order[:k])
    return _assemble(rows, k, space, add_self_loops)


def build_knn(cloud: PointCloud, k: int = 10, space: str = "xy_plus_nominal_z",
              add_self_loops: bool = True, sensor: SensorSpec | None = None) -> KnnGraph:
    """k nearest distinct points per node (self excluded), kd-tree accelerated.

    The tree only proposes candidates: for each point every candidate within
    the k-th candidate distance is re-ranked by exact squared distance and
    index, so the result is identical to :func:`brute_force_knn`.
    """
    pts = graph_coordinates(cloud, space, sensor)
    n = len(pts)
    _check(n, k)
    tree = cKDTree(pts)
    # one spare candidate beyond self and the k neighbours exposes boundary ties
    q = min(k + 2, n)
    _, cand = tree.query(pts, k=q)
    cand = np.asarray(cand).reshape(n, q)
    own = np.arange(n)[:, None]
    d2 = np.where(cand == own, np.inf, _sq_dist(pts, own, cand))
    order = np.lexsort((cand, d2), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)
    rows = cand[:, :k].copy()
    if q == n:
        return _assemble(rows, k, space, add_self_loops)
    # a point outside the candidate set can only tie or beat the k-th neighbour
    # when the spare candidate sits at (numerically) the same distance
    kth = np.sqrt(d2[:, k - 1])
    unsure = np.flatnonzero(np.sqrt(d2[:, k]) <= kth * (1 + 1e-9) + 1e-12)
    if unsure.size:
        balls = tree.query_ball_point(pts[unsure], kth[unsure] * (1 + 1e-9) + 1e-12)
        for i, ball in zip(unsure, balls):
            ball = np.asarray(ball, dtype=np.int64)
            ball = ball[ball != i]
            di = _sq_dist(pts, i, ball)
            rows[i] = ball[np.lexsort((ball, di))[:k]]
    return _assemble(rows, k, space, add_self_loops)


def fully_connected(n: int, self_loops: bool = True) -> KnnGraph:
    """Every node receives from every other node (used for tiny examples)."""
    rows = [np.array([j for j in range(n) if j != i], dtype=np.int64) for i in range(n)]
    return _assemble(rows, n - 1, "xyz_full", self_loops)


def from_adjacency(segments: list[list[int]], k: int | None = None) -> KnnGraph:
    """Graph from explicit per-node source lists (self-loops must be included)."""
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in segments])]).astype(np.int64)
    nbrs = np.array([j for s in segments for j in s], dtype=np.int64)
    return KnnGraph(offsets, nbrs, k if k is not None else max(len(s) for s in segments),
                    "xyz_full", any(i in s for i, s in enumerate(segments)))
