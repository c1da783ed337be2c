"""A synthetic scan, a broken sensor, and the graph the network sees.

We raycast a ground plane with a few boxes using a 16-beam sensor, knock out
every fourth beam, and look at what is left: how many points lost their
height, and how the default neighbourhood graph uses each beam's nominal
elevation instead of the (unknown) height of masked points.
"""

import numpy as np

from beamgat.beams import DESK_SENSOR, DropoutPattern, apply_channel_dropout, nominal_z
from beamgat.graph import build_knn
from beamgat.pointcloud import range_filter, subsample_uniform
from beamgat.synth import Box, Scene, raycast_scan

scene = Scene(-1.73, (Box((8.0, 2.0, -0.73), (2.0, 3.0, 2.0)),
                      Box((-6.0, -5.0, -0.23), (4.0, 2.0, 3.0))))
scan = raycast_scan(scene, DESK_SENSOR, azimuth_steps=360, noise_std=0.01, seed=3)
print(f"{len(scan)} returns from {DESK_SENSOR.beam_count} beams")
print("returns per beam:", np.bincount(scan.beam, minlength=16).tolist())

scan = subsample_uniform(range_filter(scan), 2048, seed=0)
frame = apply_channel_dropout(scan, DropoutPattern("every_nth", 4, 0))
print(f"dropped beams {frame.dropped_beams}: {frame.truth_z.size} of {len(scan)} points "
      f"masked ({frame.masked_fraction:.1%})")

# the masked points keep x, y and reflectance; their z becomes a 0 sentinel
print("first masked point:", frame.cloud[int(frame.masked_index[0])])

# nominal z is the height of the beam cone at the point's horizontal range.  The
# simulator fires every ray at its beam's nominal elevation and adds noise along
# the ray, so here the cone height is exact; on a real sensor it is only a hint.
nz = nominal_z(frame.cloud, DESK_SENSOR)
err = nz[frame.masked_index] - frame.truth_z
print(f"nominal z vs truth on masked points: median |err| {np.median(np.abs(err)):.3f} m, "
      f"max {np.max(np.abs(err)):.2f} m")

g = build_knn(frame.cloud, 10, "xy_plus_nominal_z", sensor=DESK_SENSOR)
i = int(frame.masked_index[0])
print(f"graph: {g.num_nodes} nodes, {g.num_edges} edges; node {i} listens to {g.segment(i).tolist()}")
masked_nbrs = frame.cloud.masked[g.neighbors].reshape(g.num_nodes, -1)[:, :-1].mean()
print(f"share of neighbours that are themselves masked: {masked_nbrs:.1%}")
