"""Fixture builders shared by the test modules."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from gcpbench.evaluation import GCPObservation, GroundControlPoint
from gcpbench.gcp_detector import DetectorConfig, detect_gcp
from gcpbench.geometry import Plane, RigidTransform, Trajectory, UnitQuaternion
from gcpbench.lidar_sim import FiducialSpec, ScannerSpec, simulate_scan

FLOOR = Plane.from_normal_offset([0.0, 0.0, 1.0], 0.0)
POSE_DT = 0.05  # 20 Hz


def yaw(angle: float) -> UnitQuaternion:
    return UnitQuaternion.from_axis_angle([0.0, 0.0, 1.0], angle)


def random_transform(rng: np.random.Generator, scale: float = 5.0) -> RigidTransform:
    q = rng.standard_normal(4)
    return RigidTransform(UnitQuaternion.from_array(q), rng.uniform(-scale, scale, 3))


# ---------------------------------------------------------------------------
# detector helpers
# ---------------------------------------------------------------------------

GRID_X = np.linspace(0.35, 0.85, 6)
GRID_Y = np.linspace(-0.25, 0.25, 6)
HINT_OFFSET = np.array([0.02, -0.01])


def grid_positions() -> np.ndarray:
    return np.array([(x, y, 0.0) for x in GRID_X for y in GRID_Y])


def detect_at(
    center_xy,
    seed: int,
    revolutions: int = 10,
    range_noise: float = 0.0,
    intensity_noise: float = 0.0,
    scanner: Optional[ScannerSpec] = None,
    cfg: Optional[DetectorConfig] = None,
) -> np.ndarray:
    """Simulate the default scanner looking at a target at ``center_xy`` on
    the floor and return the detected world-frame centre."""
    scanner = scanner or ScannerSpec(range_noise_sigma=range_noise, intensity_noise_sigma=intensity_noise)
    fid = FiducialSpec(center=np.array([center_xy[0], center_xy[1], 0.0]))
    scans = simulate_scan(scanner, FLOOR, fid, revolutions, seed=seed)
    hint = scanner.mount_pose.inverse().apply(fid.center)[:2] + HINT_OFFSET
    cfg = cfg or DetectorConfig()
    cfg = replace(cfg, roi_center=tuple(hint))
    return scanner.mount_pose.apply(detect_gcp(scans, cfg).center)


def run_grid(seed: int, revolutions: int, range_noise: float, intensity_noise: float) -> np.ndarray:
    """Detected centres for the 36-position grid; position ``k`` uses seed ``seed*1000+k``."""
    return np.array(
        [
            detect_at(p[:2], seed * 1000 + k, revolutions, range_noise, intensity_noise)
            for k, p in enumerate(grid_positions())
        ]
    )


# ---------------------------------------------------------------------------
# evaluation bundles
# ---------------------------------------------------------------------------


@dataclass
class Bundle:
    truth: Trajectory
    submitted: Trajectory
    observations: list[GCPObservation]
    gcps: list[GroundControlPoint]
    calib: dict[str, RigidTransform]


LIDAR_CALIB = RigidTransform(yaw(0.3), np.array([0.12, -0.03, 0.25]))


def truth_trajectory(duration: float, t0: float = 0.0, seed: int = 0) -> Trajectory:
    """Smooth wandering path at 20 Hz with slowly varying yaw, roll and pitch."""
    n = int(round(duration / POSE_DT)) + 1
    t = t0 + np.arange(n) * POSE_DT
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.2, 0.5, 2)
    pos = np.stack([3.0 * np.sin(a * t), 2.0 * np.cos(b * t), 0.6 + 0.05 * np.sin(t)], axis=1)
    quats = []
    for ti in t:
        q = yaw(0.2 * ti) * UnitQuaternion.from_axis_angle([1.0, 0.0, 0.0], 0.05 * np.sin(ti))
        quats.append(q.as_array())
    return Trajectory(t, pos, np.array(quats))


def knot_index(traj: Trajectory, t: float) -> int:
    i = int(np.argmin(np.abs(traj.timestamps - t)))
    assert abs(traj.timestamps[i] - t) < 1e-9, "observation time must be a trajectory knot"
    return i


def observe(traj: Trajectory, t: float, world_point, frame: str, calib) -> np.ndarray:
    """Sensor-frame coordinates of ``world_point`` seen at trajectory knot ``t``."""
    T = traj.pose(knot_index(traj, t)) @ calib[frame]
    return T.inverse().apply(np.asarray(world_point, dtype=float))


def make_bundle(
    gcp_xyz,
    obs_times: Sequence[float],
    displacements=None,
    duration: float = 20.0,
    extra_uncovered: Sequence[tuple[str, tuple[float, float, float], float]] = (),
    calib: Optional[dict] = None,
    seed: int = 0,
) -> Bundle:
    """Truth trajectory plus observations; the submitted trajectory is the truth
    with knot ``obs_times[i]`` shifted by ``displacements[i]``.

    ``extra_uncovered`` adds GCPs whose observation time lies outside the
    trajectory so they can never be covered.
    """
    calib = dict(calib or {"lidar": LIDAR_CALIB})
    gcp_xyz = np.asarray(gcp_xyz, dtype=float)
    truth = truth_trajectory(duration, seed=seed)
    names = [f"G{i + 1}" for i in range(len(gcp_xyz))]
    gcps = [GroundControlPoint(n, tuple(p)) for n, p in zip(names, gcp_xyz)]
    obs = [
        GCPObservation(float(t), n, "lidar", tuple(observe(truth, t, p, "lidar", calib)))
        for n, p, t in zip(names, gcp_xyz, obs_times)
    ]
    for name, pos, t in extra_uncovered:
        gcps.append(GroundControlPoint(name, tuple(pos)))
        obs.append(GCPObservation(float(t), name, "lidar", (1.0, 0.0, -0.5)))
    positions = np.array(truth.positions)
    if displacements is not None:
        for t, d in zip(obs_times, np.asarray(displacements, dtype=float)):
            positions[knot_index(truth, t)] += d
    return Bundle(truth, truth.with_positions(positions), obs, gcps, calib)


def knot_times(count: int, start: float = 1.0, step: float = 3.0) -> list[float]:
    """GCP observation times that fall exactly on 20 Hz knots."""
    ks = [int(round((start + i * step) / POSE_DT)) for i in range(count)]
    return [k * POSE_DT for k in ks]


GCP6 = np.array([[0, 0, 0], [10, 0, 0], [10, 8, 0], [0, 8, 0], [5, 4, 1], [3, 1, 0.5]], dtype=float)


def two_sessions(offset=np.zeros(3)):
    """Two sequences covering disjoint halves of ``GCP6``; the second one is
    expressed in a frame shifted by ``offset``."""
    first = make_bundle(GCP6[:3], knot_times(3), seed=1)
    second = make_bundle(GCP6[3:], knot_times(3, start=2.0), seed=2)
    second.gcps = [type(g)(f"G{i + 4}", g.position) for i, g in enumerate(second.gcps)]
    second.observations = [
        GCPObservation(o.timestamp, f"G{i + 4}", o.sensor_frame, o.point) for i, o in enumerate(second.observations)
    ]
    shifted = second.submitted.transformed(RigidTransform(translation=offset))
    return [first.submitted, shifted], [first.observations, second.observations], first.gcps + second.gcps


# ---------------------------------------------------------------------------
# alignment-proof error layouts
# ---------------------------------------------------------------------------

BRACKET_DELTAS = np.array([0.0025, 0.0075, -0.015, -0.045, -0.08, 0.13])
BRACKET_SCORES = [20, 10, 6, 5, 3, 1]


def floor_layout_orthogonal_to(delta, seed: int = 0, size: float = 8.0) -> np.ndarray:
    """Floor points whose x and y coordinate vectors are orthogonal to both
    ``delta`` and the all-ones vector.

    Vertical displacements ``delta`` applied to such points (with zero sum) are
    invisible to a rigid least-squares fit: the optimal transform stays the
    identity and each residual equals ``|delta_i|``.
    """
    delta = np.asarray(delta, dtype=float)
    n = len(delta)
    basis = np.stack([np.ones(n), delta], axis=1)
    proj = np.eye(n) - basis @ np.linalg.pinv(basis)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        xy = proj @ rng.standard_normal((n, 2))
        if np.linalg.matrix_rank(xy, tol=1e-6) == 2 and np.min(np.ptp(xy, axis=0)) > 0.5:
            break
    xy *= size / np.abs(xy).max()
    return np.column_stack([xy + np.array([20.0, -5.0]), np.zeros(n)])


def triangle_layout(lengths, center=(10.0, 4.0, 0.0)) -> np.ndarray:
    """Three floor points whose offsets from their centroid have the given
    lengths. Offsets must sum to zero, so the lengths have to form a triangle."""
    a, b, c = lengths
    # place offsets v1, v2, v3 head-to-tail: |v1|=a, |v2|=b, |v1+v2|=c
    cos_g = (a**2 + b**2 - c**2) / (2 * a * b)
    assert -1 < cos_g < 1, "lengths violate the triangle inequality"
    g = np.arccos(cos_g)
    v1 = np.array([a, 0.0])
    v2 = b * np.array([np.cos(np.pi - g), np.sin(np.pi - g)])
    v3 = -(v1 + v2)
    offsets = np.array([v1, v2, v3])
    return np.column_stack([offsets, np.zeros(3)]) + np.asarray(center)


def scaling_bundle(errors=(0.0045, 0.0065, 0.0105), scale: float = 0.001) -> Bundle:
    """Three covered GCPs with radial (in-plane scaling) displacements giving
    residuals ``errors`` after alignment, plus one GCP the trajectory never reaches."""
    xyz = triangle_layout([e / scale for e in errors])
    centroid = xyz.mean(axis=0)
    disp = scale * (xyz - centroid)
    times = knot_times(3)
    return make_bundle(xyz, times, disp, extra_uncovered=[("G4", (12.0, 9.0, 0.0), 50.0)])


# ---------------------------------------------------------------------------
# simulate -> detect -> evaluate pipeline
# ---------------------------------------------------------------------------

LIDAR_HEIGHT = 0.5


def stand_trajectory(gcp_xyz, lidar_offsets, yaws, stop_times, calib: RigidTransform) -> Trajectory:
    """Trajectory that stops next to each GCP so the lidar, ``LIDAR_HEIGHT``
    above the floor, sees GCP ``i`` at ``lidar_offsets[i]`` in its own frame.
    Between stops positions and yaw are interpolated at 20 Hz."""
    stands = []
    for g, off, psi in zip(np.asarray(gcp_xyz, float), lidar_offsets, yaws):
        R = yaw(psi)
        t_world_lidar = RigidTransform(
            R, g - R.as_matrix() @ np.array([off[0], off[1], 0.0]) + np.array([0.0, 0.0, LIDAR_HEIGHT])
        )
        stands.append(t_world_lidar @ calib.inverse())
    stop_k = [int(round(t / POSE_DT)) for t in stop_times]
    n = stop_k[-1] + int(round(1.0 / POSE_DT)) + 1
    t = np.arange(n) * POSE_DT
    stop_t = np.array(stop_k) * POSE_DT
    stand_pos = np.array([s.translation for s in stands])
    pos = np.column_stack([np.interp(t, stop_t, stand_pos[:, j]) for j in range(3)])
    stand_yaw = np.unwrap([2 * np.arctan2(s.rotation.as_array()[3], s.rotation.as_array()[0]) for s in stands])
    heading = np.interp(t, stop_t, stand_yaw)
    quats = np.array([yaw(h).as_array() for h in heading])
    return Trajectory(t, pos, quats)


def pipeline_bundle(
    gcp_xyz,
    vertical_errors,
    seed: int = 0,
    revolutions: int = 10,
    range_noise: float = 0.03,
    intensity_noise: float = 0.05,
) -> tuple[Bundle, np.ndarray]:
    """Simulate a scan at every GCP stop, detect the target and record it as a
    lidar-frame observation. The submitted trajectory carries an extra vertical
    offset ``vertical_errors[i]`` at stop ``i``.

    Returns the bundle and the per-stop detection errors (world frame, metres).
    """
    gcp_xyz = np.asarray(gcp_xyz, dtype=float)
    n = len(gcp_xyz)
    rng = np.random.default_rng(seed)
    offsets = np.column_stack([rng.uniform(0.45, 0.75, n), rng.uniform(-0.2, 0.2, n)])
    yaws = rng.uniform(-np.pi, np.pi, n)
    stop_times = [2.0 + 3.0 * i for i in range(n)]
    calib = LIDAR_CALIB
    truth = stand_trajectory(gcp_xyz, offsets, yaws, stop_times, calib)

    names = [f"G{i + 1}" for i in range(n)]
    obs, det_errors = [], []
    for i, (name, g, t) in enumerate(zip(names, gcp_xyz, stop_times)):
        mount = truth.pose(knot_index(truth, t)) @ calib
        scanner = ScannerSpec(
            mount_pose=mount, range_noise_sigma=range_noise, intensity_noise_sigma=intensity_noise
        )
        scans = simulate_scan(scanner, FLOOR, FiducialSpec(center=g), revolutions, seed=seed * 100 + i)
        hint = mount.inverse().apply(g)[:2] + HINT_OFFSET
        det = detect_gcp(scans, DetectorConfig(roi_center=tuple(hint)))
        obs.append(GCPObservation(t, name, "lidar", tuple(det.center)))
        det_errors.append(mount.apply(det.center) - g)

    positions = np.array(truth.positions)
    for t, dz in zip(stop_times, vertical_errors):
        positions[knot_index(truth, t), 2] += dz
    gcps = [GroundControlPoint(nm, tuple(p)) for nm, p in zip(names, gcp_xyz)]
    bundle = Bundle(truth, truth.with_positions(positions), obs, gcps, {"lidar": calib})
    return bundle, np.array(det_errors)
