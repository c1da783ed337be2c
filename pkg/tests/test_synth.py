import math

import numpy as np
import pytest

from beamgat.beams import DESK_SENSOR, SensorSpec, estimate_beam_index, spherical_from_cartesian
from beamgat.synth import Box, Scene, checksum, make_benchmark_set, raycast_scan


def test_plane_hit_at_minus_ten_degrees():
    # a single beam centred on -10 degrees
    spec = SensorSpec.from_degrees(2, -11.0, -7.0)
    assert math.degrees(spec.beam_elevation(0)) == pytest.approx(-10.0)
    scan = raycast_scan(Scene(-1.73), spec, azimuth_steps=8)
    first = scan.beam == 0
    r = np.linalg.norm(scan.xyz[first], axis=1)
    expected = 1.73 / math.sin(math.radians(10.0))
    assert expected == pytest.approx(9.9626, abs=1e-4)
    assert np.allclose(r, expected, rtol=0, atol=1e-12)
    assert np.allclose(scan.z[first], -1.73, rtol=0, atol=1e-12)


def test_upward_beam_misses_plane():
    spec = SensorSpec.from_degrees(2, 0.0, 4.0)
    with pytest.raises(ValueError):
        Scene(1.0)
    scan = raycast_scan(Scene(-1.73), spec, azimuth_steps=8)
    assert len(scan) == 0


def test_empty_scene_rejected():
    with pytest.raises(ValueError):
        raycast_scan(Scene(None), DESK_SENSOR)


def test_noiseless_scans_identical():
    scene = Scene(-1.73, (Box((10, 0, -0.73), (2, 2, 2)),))
    a = raycast_scan(scene, DESK_SENSOR, 64, 0.0, seed=1)
    b = raycast_scan(scene, DESK_SENSOR, 64, 0.0, seed=1)
    assert a.xyz.tobytes() == b.xyz.tobytes()


def test_plane_points_lie_on_plane():
    scan = raycast_scan(Scene(-1.73), DESK_SENSOR, 360)
    assert np.max(np.abs(scan.z + 1.73)) < 1e-12


def test_equal_counts_per_beam_on_plane():
    scan = raycast_scan(Scene(-1.73), DESK_SENSOR, 120)
    counts = np.bincount(scan.beam, minlength=16)
    assert set(counts.tolist()) <= {0, 120}


def test_box_occludes_ground():
    scene = Scene(-1.73, (Box((6, 0, -0.73), (2, 2, 2)),))
    scan = raycast_scan(scene, DESK_SENSOR, 360)
    forward = (np.abs(np.arctan2(scan.y, scan.x)) < 0.05) & (scan.z > -1.7)
    assert np.all(np.abs(scan.x[forward] - 5.0) < 1e-9)


def test_box_validation():
    with pytest.raises(ValueError):
        Scene(-1.73, (Box((0, 0, 0), (2, 2, 2)),))
    with pytest.raises(ValueError):
        Scene(-1.73, (Box((5, 0, -3), (1, 1, 1)),))


def test_benchmark_set_stable_checksums():
    a = [checksum(c) for c in make_benchmark_set(10, seed=3, azimuth_steps=60)]
    b = [checksum(c) for c in make_benchmark_set(10, seed=3, azimuth_steps=60)]
    assert a == b
    assert len(set(a)) == 10


def test_benchmark_set_rejects_zero():
    with pytest.raises(ValueError):
        make_benchmark_set(0)


def test_benchmark_geometry_consistency():
    for scan in make_benchmark_set(3, seed=0, noise_std=0.0):
        r, theta, phi = spherical_from_cartesian(scan.x, scan.y, scan.z)
        x = r * np.cos(theta) * np.cos(phi)
        assert np.max(np.abs(x - scan.x)) < 1e-12
        est = estimate_beam_index(scan.copy(), DESK_SENSOR)
        assert np.array_equal(est.beam, scan.beam)


def test_beam_recovery_survives_range_noise():
    scan = make_benchmark_set(1, seed=1, noise_std=0.01)[0]
    assert np.array_equal(estimate_beam_index(scan.copy(), DESK_SENSOR).beam, scan.beam)
