"""Rigid transforms, plane fitting, Kabsch alignment and pose interpolation.

Conventions:
    * Quaternions are stored scalar-first, ``(w, x, y, z)``.
    * ``RigidTransform`` named ``T_a_b`` maps points expressed in frame ``b``
      into frame ``a``: ``p_a = R @ p_b + t``.
    * A ``Plane`` is the set ``{p : normal . p + offset = 0}``; ``offset`` is
      therefore the signed distance of the origin from the plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DegenerateInput, GapTooLarge, NoConsensus, OutOfRange

KNOT_TOLERANCE = 1e-9
DEFAULT_MAX_GAP = 0.5


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of points, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Quaternion helpers (scalar first)
# ---------------------------------------------------------------------------


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def slerp(q0: np.ndarray, q1: np.ndarray, fraction: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between two unit quaternions."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = q0 + fraction * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = np.arccos(min(dot, 1.0))
    sin_theta = np.sin(theta)
    w0 = np.sin((1.0 - fraction) * theta) / sin_theta
    w1 = np.sin(fraction * theta) / sin_theta
    q = w0 * q0 + w1 * q1
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class UnitQuaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        q = np.array([self.w, self.x, self.y, self.z], dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise DegenerateInput(f"cannot normalise quaternion {q}")
        q = q / n
        for name, value in zip("wxyz", q):
            object.__setattr__(self, name, float(value))

    @classmethod
    def from_array(cls, q) -> UnitQuaternion:
        return cls(*np.asarray(q, dtype=float))

    @classmethod
    def from_matrix(cls, R) -> UnitQuaternion:
        return cls.from_array(matrix_to_quat(R))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> UnitQuaternion:
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * angle
        return cls(np.cos(half), *(np.sin(half) * axis))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def as_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.as_array())

    def conjugate(self) -> UnitQuaternion:
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: UnitQuaternion) -> UnitQuaternion:
        return UnitQuaternion.from_array(quat_multiply(self.as_array(), other.as_array()))

    def angle_to(self, other: UnitQuaternion) -> float:
        dot = abs(float(np.dot(self.as_array(), other.as_array())))
        return 2.0 * float(np.arccos(min(dot, 1.0)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: UnitQuaternion = field(default_factory=UnitQuaternion)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(UnitQuaternion.from_matrix(R), np.asarray(t, dtype=float))

    @classmethod
    def from_homogeneous(cls, M) -> RigidTransform:
        M = np.asarray(M, dtype=float)
        return cls.from_matrix(M[:3, :3], M[:3, 3])

    @cached_property
    def matrix(self) -> np.ndarray:
        R = self.rotation.as_matrix()
        R.flags.writeable = False
        return R

    def as_homogeneous(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.matrix
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        """Transform a single point ``(3,)`` or an array of points ``(n, 3)``."""
        arr = np.asarray(points, dtype=float)
        out = arr @ self.matrix.T + self.translation
        return out

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first."""
        q = self.rotation * other.rotation
        t = self.matrix @ other.translation + self.translation
        return RigidTransform(q, t)

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        q = self.rotation.conjugate()
        t = -(self.matrix.T @ self.translation)
        return RigidTransform(q, t)

    def is_close(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.matrix, other.matrix, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )


# ---------------------------------------------------------------------------
# Planes
# ---------------------------------------------------------------------------


def _orthonormal_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Seed with the world axis least aligned with the normal.
    seed = np.zeros(3)
    seed[int(np.argmin(np.abs(normal)))] = 1.0
    u = seed - np.dot(seed, normal) * normal
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


@dataclass(frozen=True, eq=False)
class Plane:
    normal: np.ndarray
    offset: float
    basis_u: np.ndarray
    basis_v: np.ndarray

    @classmethod
    def from_normal_offset(cls, normal, offset: float) -> Plane:
        n = np.asarray(normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0.0 or not np.isfinite(norm):
            raise DegenerateInput("plane normal must be non-zero")
        n = n / norm
        u, v = _orthonormal_basis(n)
        return cls(n, float(offset) / norm, u, v)

    @classmethod
    def from_point_normal(cls, point, normal) -> Plane:
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls.from_normal_offset(n, -float(np.dot(n, point)))

    def signed_distance(self, points) -> np.ndarray:
        return _as_points(points) @ self.normal + self.offset

    def closest_point(self, points) -> np.ndarray:
        pts = _as_points(points)
        return pts - np.outer(self.signed_distance(pts), self.normal)

    @property
    def frame(self) -> RigidTransform:
        """Transform mapping the parent frame into plane coordinates (u, v, height)."""
        R = np.vstack([self.basis_u, self.basis_v, self.normal])
        if np.linalg.det(R) < 0:
            raise DegenerateInput("plane basis is left-handed")
        return RigidTransform.from_matrix(R, (0.0, 0.0, self.offset))

    def transformed(self, T: RigidTransform) -> Plane:
        """The same plane expressed in the frame ``T`` maps into."""
        n = T.matrix @ self.normal
        point = T.apply(-self.offset * self.normal)
        u = T.matrix @ self.basis_u
        v = T.matrix @ self.basis_v
        return Plane(n, -float(np.dot(n, point)), u, v)


def fit_plane(
    points,
    robust: bool = False,
    ransac_iters: int = 200,
    inlier_dist: float = 0.05,
    seed: int = 0,
    viewpoint=(0.0, 0.0, 0.0),
) -> tuple[Plane, float]:
    """Total-least-squares plane through ``points``.

    With ``robust`` set, a RANSAC consensus step selects inliers first and the
    refinement only uses those. The normal is flipped to face ``viewpoint``
    (the scanner origin by default). Returns the plane and the RMS orthogonal
    residual over the points used for the final fit.
    """
    pts = _as_points(points)
    if len(pts) < 3:
        raise DegenerateInput(f"need at least 3 points to fit a plane, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")

    inliers = pts
    if robust:
        inliers = pts[_ransac_plane_inliers(pts, ransac_iters, inlier_dist, seed)]

    centroid = inliers.mean(axis=0)
    centered = inliers - centroid
    cov = centered.T @ centered / len(inliers)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[2], np.finfo(float).tiny)
    if evals[1] <= 1e-12 * scale:
        raise DegenerateInput("points are collinear")
    normal = evecs[:, 0]
    if np.dot(normal, np.asarray(viewpoint, dtype=float) - centroid) < 0:
        normal = -normal
    plane = Plane.from_point_normal(centroid, normal)
    rms = float(np.sqrt(np.mean((centered @ plane.normal) ** 2)))
    return plane, rms


def _ransac_plane_inliers(pts: np.ndarray, iters: int, inlier_dist: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = len(pts)
    samples = np.array([rng.choice(n, size=3, replace=False) for _ in range(iters)])
    a, b, c = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-12
    if not np.any(ok):
        raise DegenerateInput("all RANSAC samples were collinear")
    normals = normals[ok] / norms[ok, None]
    offsets = -np.einsum("ij,ij->i", normals, a[ok])
    dist = np.abs(pts @ normals.T + offsets)
    counts = (dist <= inlier_dist).sum(axis=0)
    best = int(np.argmax(counts))
    if counts[best] < 0.5 * n:
        raise NoConsensus(f"best plane hypothesis has {counts[best]}/{n} inliers")
    return dist[:, best] <= inlier_dist


def fit_plane_ranges(points, origin=(0.0, 0.0, 0.0), iterations: int = 5) -> tuple[Plane, float]:
    """Plane fit minimising range residuals along rays from ``origin``.

    Scanner noise lies along each ray, not along the plane normal, so the
    orthogonal fit is biased towards the mean ray direction. Writing the plane
    as ``w . (p - origin) = 1`` makes the predicted range along unit ray ``u``
    equal to ``1 / (w . u)``; a linear inverse-range solve gives the start and
    Gauss-Newton on the range residuals refines it. The plane must not pass
    through ``origin``. Returns the plane (normal facing ``origin``) and the
    RMS range residual.
    """
    pts = _as_points(points)
    if len(pts) < 3:
        raise DegenerateInput(f"need at least 3 points to fit a plane, got {len(pts)}")
    o = np.asarray(origin, dtype=float)
    rel = pts - o
    r = np.linalg.norm(rel, axis=1)
    if np.any(r <= 0):
        raise DegenerateInput("point coincides with the ray origin")
    u = rel / r[:, None]
    if np.linalg.matrix_rank(u - u.mean(axis=0), tol=1e-9) < 2 and np.linalg.matrix_rank(u, tol=1e-9) < 3:
        raise DegenerateInput("ray directions do not span a plane")

    w, *_ = np.linalg.lstsq(u, 1.0 / r, rcond=None)
    for _ in range(iterations):
        wu = u @ w
        if np.any(wu <= 0):
            break
        resid = r - 1.0 / wu
        J = u / wu[:, None] ** 2
        step, *_ = np.linalg.lstsq(J, -resid, rcond=None)
        w = w + step
    wu = u @ w
    if np.any(wu <= 0) or not np.all(np.isfinite(w)):
        raise DegenerateInput("range plane fit diverged")
    rms = float(np.sqrt(np.mean((r - 1.0 / wu) ** 2)))
    norm = np.linalg.norm(w)
    normal = -w / norm
    return Plane.from_normal_offset(normal, 1.0 / norm - float(normal @ o)), rms


def project_to_plane(plane: Plane, points) -> np.ndarray:
    """In-plane ``(u, v)`` coordinates of the orthogonal projection of each point.

    Row ``i`` of the result corresponds to ``points[i]``.
    """
    pts = _as_points(points)
    return np.column_stack([pts @ plane.basis_u, pts @ plane.basis_v])


def lift_from_plane(plane: Plane, uv) -> np.ndarray:
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    foot = -plane.offset * plane.normal
    return foot + np.outer(uv[:, 0], plane.basis_u) + np.outer(uv[:, 1], plane.basis_v)


def ray_project_to_plane(plane: Plane, points, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    """In-plane coordinates of where the ray ``origin -> point`` meets the plane.

    Unlike orthogonal projection this discards range error along the ray,
    which is the dominant error of a time-of-flight scanner.
    """
    pts = _as_points(points)
    o = np.asarray(origin, dtype=float)
    d = pts - o
    denom = d @ plane.normal
    if np.any(np.abs(denom) < 1e-12):
        raise DegenerateInput("ray parallel to plane")
    s = -(o @ plane.normal + plane.offset) / denom
    hits = o + s[:, None] * d
    return project_to_plane(plane, hits)


# ---------------------------------------------------------------------------
# Point-set alignment
# ---------------------------------------------------------------------------


def kabsch_align(source, target) -> RigidTransform:
    """Proper rigid transform ``T`` minimising ``sum |target_i - T source_i|^2``."""
    src = _as_points(source)
    dst = _as_points(target)
    if src.shape != dst.shape:
        raise ValueError(f"shape mismatch: {src.shape} vs {dst.shape}")
    if len(src) < 3:
        raise DegenerateInput(f"need at least 3 correspondences, got {len(src)}")
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    A = src - src_c
    B = dst - dst_c
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-10 * sv[0]:
        raise DegenerateInput("source points are collinear")

    H = A.T @ B
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    t = dst_c - R @ src_c
    return RigidTransform.from_matrix(R, t)


def alignment_residuals(surveyed, estimated) -> np.ndarray:
    """Per-point error ``|surveyed_i - T estimated_i|`` after rigid alignment."""
    surveyed = _as_points(surveyed)
    estimated = _as_points(estimated)
    T = kabsch_align(estimated, surveyed)
    return np.linalg.norm(surveyed - T.apply(estimated), axis=1)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimedPose:
    timestamp: float
    pose: RigidTransform

    def __post_init__(self):
        if not np.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Poses ``T_world_body`` at strictly increasing timestamps.

    Stored column-wise for vectorised access; quaternions are scalar-first and
    normalised on construction.
    """

    timestamps: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray
    body_frame: str = "imu"

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float).reshape(-1)
        p = np.array(self.positions, dtype=float).reshape(-1, 3)
        q = np.array(self.quaternions, dtype=float).reshape(-1, 4)
        if not (len(t) == len(p) == len(q)):
            raise ValueError("timestamps, positions and quaternions differ in length")
        if not np.all(np.isfinite(t)):
            raise ValueError("timestamps must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        norms = np.linalg.norm(q, axis=1)
        if np.any(norms == 0):
            raise DegenerateInput("zero quaternion in trajectory")
        q = q / norms[:, None]
        for arr in (t, p, q):
            arr.flags.writeable = False
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "quaternions", q)

    @classmethod
    def from_poses(cls, poses: Sequence[TimedPose], body_frame: str = "imu") -> Trajectory:
        return cls(
            np.array([p.timestamp for p in poses], dtype=float),
            np.array([p.pose.translation for p in poses]).reshape(-1, 3),
            np.array([p.pose.rotation.as_array() for p in poses]).reshape(-1, 4),
            body_frame,
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def pose(self, i: int) -> RigidTransform:
        return RigidTransform(UnitQuaternion.from_array(self.quaternions[i]), self.positions[i])

    def __iter__(self):
        for i in range(len(self)):
            yield TimedPose(float(self.timestamps[i]), self.pose(i))

    @property
    def span(self) -> tuple[float, float]:
        return float(self.timestamps[0]), float(self.timestamps[-1])

    def transformed(self, T_new_world: RigidTransform) -> Trajectory:
        """Re-express every pose in a new world frame: ``T_new_body = T_new_world ∘ T_world_body``."""
        positions = T_new_world.apply(self.positions)
        qw = T_new_world.rotation.as_array()
        quats = np.array([quat_multiply(qw, q) for q in self.quaternions])
        return Trajectory(self.timestamps, positions, quats, self.body_frame)

    def with_positions(self, positions) -> Trajectory:
        return Trajectory(self.timestamps, positions, self.quaternions, self.body_frame)


def _bracket(traj: Trajectory, t: float, max_gap: float) -> tuple[int, float]:
    """Index ``i`` and fraction ``f`` such that ``t`` lies in ``[t_i, t_{i+1}]``.

    ``f`` is ``None`` when ``t`` coincides with knot ``i``.
    """
    ts = traj.timestamps
    if len(ts) == 0:
        raise OutOfRange("empty trajectory")
    k = int(np.searchsorted(ts, t))
    for j in (k - 1, k):
        if 0 <= j < len(ts) and abs(ts[j] - t) <= KNOT_TOLERANCE:
            return j, None
    if t < ts[0] or t > ts[-1]:
        raise OutOfRange(f"t={t!r} outside [{ts[0]!r}, {ts[-1]!r}]")
    i = k - 1
    gap = ts[i + 1] - ts[i]
    if gap > max_gap:
        raise GapTooLarge(f"bracketing interval {gap:.3f} s exceeds max gap {max_gap} s at t={t!r}")
    return i, (t - ts[i]) / gap


def interpolate_pose(traj: Trajectory, t: float, max_gap: float = DEFAULT_MAX_GAP) -> RigidTransform:
    """Pose at time ``t``: lerp on translation, shortest-arc slerp on rotation."""
    i, f = _bracket(traj, float(t), max_gap)
    if f is None:
        return traj.pose(i)
    p = (1.0 - f) * traj.positions[i] + f * traj.positions[i + 1]
    q = slerp(traj.quaternions[i], traj.quaternions[i + 1], f)
    return RigidTransform(UnitQuaternion.from_array(q), p)


def interpolate_positions(traj: Trajectory, times, max_gap: float = DEFAULT_MAX_GAP) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised translation-only interpolation.

    Returns ``(positions, valid)``; rows where ``valid`` is False (out of range
    or inside an over-long gap) are NaN.
    """
    ts = traj.timestamps
    times = np.asarray(times, dtype=float)
    out = np.full((len(times), 3), np.nan)
    valid = np.zeros(len(times), dtype=bool)
    if len(ts) == 0:
        return out, valid
    k = np.clip(np.searchsorted(ts, times), 1, max(len(ts) - 1, 1))
    if len(ts) == 1:
        hit = np.abs(times - ts[0]) <= KNOT_TOLERANCE
        out[hit] = traj.positions[0]
        return out, hit
    t0, t1 = ts[k - 1], ts[k]
    in_range = (times >= ts[0] - KNOT_TOLERANCE) & (times <= ts[-1] + KNOT_TOLERANCE)
    on_knot = (np.abs(times - t0) <= KNOT_TOLERANCE) | (np.abs(times - t1) <= KNOT_TOLERANCE)
    ok = in_range & (((t1 - t0) <= max_gap) | on_knot)
    f = np.clip((times - t0) / (t1 - t0), 0.0, 1.0)
    pos = (1 - f)[:, None] * traj.positions[k - 1] + f[:, None] * traj.positions[k]
    # snap to knots exactly, as interpolate_pose does
    snap0 = np.abs(times - t0) <= KNOT_TOLERANCE
    snap1 = ~snap0 & (np.abs(times - t1) <= KNOT_TOLERANCE)
    pos[snap0] = traj.positions[k - 1][snap0]
    pos[snap1] = traj.positions[k][snap1]
    out[ok] = pos[ok]
    valid[:] = ok
    return out, valid
