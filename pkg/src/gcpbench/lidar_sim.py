"""Synthetic multi-ring scanner looking at a floor with a circular target.

The scanner spins about its own z axis. Each ring is a cone of constant
elevation; each sample is the intersection of one ray with the ground plane.
Range noise is applied along the ray, intensity is taken from the target's
reflectivity pattern at the noiseless hit point.

Sample points are returned in the scanner frame, which is what a real sensor
driver publishes. ``LidarScan.world_points`` maps them through the mount pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .geometry import Plane, RigidTransform


def default_ring_elevations() -> tuple[float, ...]:
    return tuple(np.linspace(0.0, -90.0, 32))


@dataclass(frozen=True, eq=False)
class ScannerSpec:
    """Ring geometry and noise model.

    ``ring_elevations`` are in degrees, strictly decreasing. ``mount_pose`` is
    ``T_world_lidar``.
    """

    ring_elevations: tuple[float, ...] = field(default_factory=default_ring_elevations)
    samples_per_rev: int = 1800
    mount_pose: RigidTransform = field(
        default_factory=lambda: RigidTransform(translation=np.array([0.0, 0.0, 0.5]))
    )
    range_noise_sigma: float = 0.03
    intensity_noise_sigma: float = 0.0
    azimuth_phase_jitter: bool = True
    intensity_blur_sigma: float = 0.0

    def __post_init__(self):
        elev = tuple(float(e) for e in self.ring_elevations)
        object.__setattr__(self, "ring_elevations", elev)
        if len(elev) == 0 or np.any(np.diff(elev) >= 0):
            raise ValueError("ring_elevations must be non-empty and strictly decreasing")
        if self.samples_per_rev < 8:
            raise ValueError("samples_per_rev must be at least 8")
        if self.range_noise_sigma < 0 or self.intensity_noise_sigma < 0 or self.intensity_blur_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")

    @property
    def ring_count(self) -> int:
        return len(self.ring_elevations)

    def noiseless(self) -> ScannerSpec:
        return replace(self, range_noise_sigma=0.0, intensity_noise_sigma=0.0)


@dataclass(frozen=True, eq=False)
class FiducialSpec:
    """Concentric reflectivity pattern centred on ``center``.

    ``intensity_levels`` run from the inside out: level ``k`` applies for
    ``edge_radii[k-1] <= d < edge_radii[k]`` and the last level is the
    surrounding floor.
    """

    center: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.0, 0.0]))
    edge_radii: tuple[float, ...] = (0.10, 0.15)
    intensity_levels: tuple[float, ...] = (0.9, 0.05, 0.6)

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(3)
        c.flags.writeable = False
        object.__setattr__(self, "center", c)
        radii = tuple(float(r) for r in self.edge_radii)
        levels = tuple(float(v) for v in self.intensity_levels)
        object.__setattr__(self, "edge_radii", radii)
        object.__setattr__(self, "intensity_levels", levels)
        if not radii or radii[0] <= 0 or np.any(np.diff(radii) <= 0):
            raise ValueError("edge_radii must be positive and strictly increasing")
        if len(levels) != len(radii) + 1:
            raise ValueError("intensity_levels needs exactly one more entry than edge_radii")

    def reflectivity(self, points) -> np.ndarray:
        d = np.linalg.norm(np.asarray(points, dtype=float) - self.center, axis=-1)
        idx = np.searchsorted(np.asarray(self.edge_radii), d, side="right")
        return np.asarray(self.intensity_levels)[idx]

    def transformed(self, T: RigidTransform) -> FiducialSpec:
        return replace(self, center=T.apply(self.center))


@dataclass(frozen=True, eq=False)
class Ring:
    ring_index: int
    azimuth: np.ndarray
    points: np.ndarray
    intensity: np.ndarray
    range: np.ndarray

    def __len__(self) -> int:
        return len(self.azimuth)

    def select(self, mask_or_index) -> Ring:
        return Ring(
            self.ring_index,
            self.azimuth[mask_or_index],
            self.points[mask_or_index],
            self.intensity[mask_or_index],
            self.range[mask_or_index],
        )

    def with_points(self, points: np.ndarray) -> Ring:
        points = np.asarray(points, dtype=float)
        return replace(self, points=points, range=np.linalg.norm(points, axis=1))

    def with_intensity(self, intensity: np.ndarray) -> Ring:
        return replace(self, intensity=np.asarray(intensity, dtype=float))


@dataclass(frozen=True, eq=False)
class LidarScan:
    rings: list[Ring]
    revolution_index: int = 0

    @property
    def sample_count(self) -> int:
        return sum(len(r) for r in self.rings)

    def all_points(self) -> np.ndarray:
        pts = [r.points for r in self.rings if len(r)]
        return np.vstack(pts) if pts else np.empty((0, 3))

    def world_points(self, mount_pose: RigidTransform) -> np.ndarray:
        return mount_pose.apply(self.all_points())

    def map_rings(self, fn) -> LidarScan:
        return LidarScan([fn(r) for r in self.rings], self.revolution_index)


def ground_truth_center(fiducial: FiducialSpec) -> np.ndarray:
    return np.array(fiducial.center)


def transform_scene(
    T: RigidTransform, scanner: ScannerSpec, ground: Plane, fiducial: FiducialSpec
) -> tuple[ScannerSpec, Plane, FiducialSpec]:
    """Move the whole scene (scanner, floor, target) rigidly by ``T``."""
    return (
        replace(scanner, mount_pose=T @ scanner.mount_pose),
        ground.transformed(T),
        fiducial.transformed(T),
    )


def ray_directions(elevations_deg, azimuths) -> np.ndarray:
    """Unit ray directions in the scanner frame, shape ``(rings, samples, 3)``."""
    el = np.deg2rad(np.asarray(elevations_deg, dtype=float))[:, None]
    az = np.asarray(azimuths, dtype=float)[None, :]
    ce = np.cos(el)
    return np.stack(
        np.broadcast_arrays(ce * np.cos(az), ce * np.sin(az), np.sin(el)), axis=-1
    )


def simulate_scan(
    scanner: ScannerSpec,
    ground: Plane,
    fiducial: FiducialSpec,
    revolutions: int = 1,
    seed: int = 0,
) -> list[LidarScan]:
    """Simulate ``revolutions`` full turns of the scanner.

    Rays that are parallel to the floor or point away from it produce no
    sample. Output is a deterministic function of the arguments.
    """
    if revolutions < 1:
        raise ValueError("revolutions must be >= 1")
    if abs(float(ground.signed_distance(fiducial.center)[0])) > 1e-9:
        raise ValueError("fiducial center must lie on the ground plane")

    rng = np.random.default_rng(seed)
    n_rings = scanner.ring_count
    n_samples = scanner.samples_per_rev
    step = 2.0 * np.pi / n_samples
    mount = scanner.mount_pose
    origin_w = mount.translation
    plane_origin_dist = float(origin_w @ ground.normal + ground.offset)
    max_intensity = 1.0 + 3.0 * scanner.intensity_noise_sigma

    scans = []
    for rev in range(revolutions):
        phase = rng.uniform(0.0, step) if scanner.azimuth_phase_jitter else 0.0
        range_noise = rng.standard_normal((n_rings, n_samples)) * scanner.range_noise_sigma
        intensity_noise = rng.standard_normal((n_rings, n_samples)) * scanner.intensity_noise_sigma

        azimuth = phase + step * np.arange(n_samples)
        dirs = ray_directions(scanner.ring_elevations, azimuth)
        dirs_w = dirs @ mount.matrix.T
        denom = dirs_w @ ground.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = -plane_origin_dist / denom
        valid = (np.abs(denom) > 1e-12) & np.isfinite(t_hit) & (t_hit > 0)

        t_hit = np.where(valid, t_hit, 0.0)
        hits_w = origin_w + t_hit[..., None] * dirs_w
        intensity = np.where(valid, fiducial.reflectivity(np.where(valid[..., None], hits_w, 0.0)), 0.0)
        if scanner.intensity_blur_sigma > 0:
            intensity = gaussian_filter1d(intensity, scanner.intensity_blur_sigma, axis=1, mode="wrap")
        intensity = np.clip(intensity + intensity_noise, 0.0, max_intensity)
        ranges = t_hit + range_noise

        rings = []
        for r in range(n_rings):
            m = valid[r]
            rng_r = ranges[r, m]
            rings.append(
                Ring(
                    ring_index=r,
                    azimuth=azimuth[m],
                    points=dirs[r, m] * rng_r[:, None],
                    intensity=intensity[r, m],
                    range=rng_r,
                )
            )
        scans.append(LidarScan(rings, rev))
    return scans
