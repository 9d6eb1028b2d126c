"""Locate the centre of a circular floor target in multi-revolution LiDAR scans.

Pipeline: crop the region of interest, fit the floor plane, project every
sample into plane coordinates, find intensity edges ring by ring with a 1D
Canny detector, let every edge vote for all centres at the target's known
radii, blur the vote grid and take its peak.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .errors import DegenerateInput, EmptyROI, NoDetection
from .geometry import (
    Plane,
    alignment_residuals,
    fit_plane,
    fit_plane_ranges,
    lift_from_plane,
    project_to_plane,
    ray_project_to_plane,
)
from .lidar_sim import LidarScan, Ring

# Segments are split where consecutive azimuths jump by more than this many
# nominal sample steps.
SEGMENT_GAP_FACTOR = 3.0


@dataclass(frozen=True)
class DetectorConfig:
    roi_center: Optional[tuple[float, float]] = None
    roi_radius: float = 0.3
    roi_margin: float = 0.1
    hough_cell_size: float = 0.002
    hough_extent: float = 0.5
    canny_smooth_sigma: float = 2.0
    canny_high_frac: float = 0.5
    canny_low_frac: float = 0.2
    canny_reference: str = "scan"
    blur_sigma: float = 2.0
    radii: tuple[float, ...] = (0.10, 0.15)
    min_votes: Optional[int] = None
    support_tolerance: float = 0.006
    subcell_refinement: bool = True
    projection: str = "ray"
    sensor_origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    up_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    max_tilt_deg: float = 45.0
    plane_fit: str = "range"
    plane_robust: bool = False
    ransac_iters: int = 200
    ransac_inlier_dist: float = 0.1

    def __post_init__(self):
        if self.roi_center is not None:
            object.__setattr__(self, "roi_center", tuple(float(c) for c in self.roi_center))
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        object.__setattr__(self, "sensor_origin", tuple(float(c) for c in self.sensor_origin))
        object.__setattr__(self, "up_axis", tuple(float(c) for c in self.up_axis))
        if self.hough_cell_size <= 0 or self.hough_extent <= 0:
            raise ValueError("hough_cell_size and hough_extent must be positive")
        if not 0 < self.canny_low_frac < self.canny_high_frac <= 1:
            raise ValueError("need 0 < canny_low_frac < canny_high_frac <= 1")
        if not self.radii or self.radii[0] <= 0 or np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must be non-empty, positive and increasing")
        if self.canny_reference not in ("scan", "ring"):
            raise ValueError("canny_reference must be 'scan' or 'ring'")
        if self.plane_fit not in ("range", "orthogonal"):
            raise ValueError("plane_fit must be 'range' or 'orthogonal'")
        if self.projection not in ("ray", "orthogonal"):
            raise ValueError("projection must be 'ray' or 'orthogonal'")
        if self.roi_radius < 0 or self.blur_sigma < 0 or self.canny_smooth_sigma < 0:
            raise ValueError("roi_radius and sigmas must be non-negative")

    @property
    def effective_min_votes(self) -> int:
        return 3 * len(self.radii) if self.min_votes is None else int(self.min_votes)


@dataclass(frozen=True, eq=False)
class RingEdges:
    """Edges found on one ring: fractional sample index, azimuth and plane coordinates."""

    index: np.ndarray
    azimuth: np.ndarray
    uv: np.ndarray

    def __len__(self) -> int:
        return len(self.index)


@dataclass(frozen=True, eq=False)
class EdgeSet:
    uv: np.ndarray
    scan_index: np.ndarray
    ring_index: np.ndarray

    def __len__(self) -> int:
        return len(self.uv)

    @classmethod
    def empty(cls) -> EdgeSet:
        return cls(np.empty((0, 2)), np.empty(0, dtype=int), np.empty(0, dtype=int))

    @classmethod
    def concat(cls, parts: Sequence[EdgeSet]) -> EdgeSet:
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(
            np.vstack([p.uv for p in parts]),
            np.concatenate([p.scan_index for p in parts]),
            np.concatenate([p.ring_index for p in parts]),
        )


@dataclass(frozen=True, eq=False)
class HoughAccumulator:
    """Vote grid over candidate centres; ``weights[i, j]`` is centred at
    ``origin + (i, j) * cell_size`` in plane coordinates."""

    weights: np.ndarray
    cell_size: float
    origin: np.ndarray

    @classmethod
    def empty(cls, center_uv, extent: float, cell_size: float) -> HoughAccumulator:
        half = int(round(extent / cell_size))
        n = 2 * half + 1
        origin = np.asarray(center_uv, dtype=float) - half * cell_size
        return cls(np.zeros((n, n)), float(cell_size), origin)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def cell_center(self, i: float, j: float) -> np.ndarray:
        return self.origin + np.array([i, j], dtype=float) * self.cell_size

    def cell_index(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.rint((uv - self.origin) / self.cell_size).astype(np.int64)

    def with_weights(self, weights: np.ndarray) -> HoughAccumulator:
        return HoughAccumulator(weights, self.cell_size, self.origin)

    def merge(self, other: HoughAccumulator) -> HoughAccumulator:
        if self.shape != other.shape or self.cell_size != other.cell_size or not np.array_equal(
            self.origin, other.origin
        ):
            raise ValueError("accumulators cover different grids")
        return self.with_weights(self.weights + other.weights)

    __add__ = merge


@dataclass(frozen=True, eq=False)
class DetectionResult:
    center: np.ndarray
    in_plane_center: np.ndarray
    votes: int
    plane: Plane
    edge_count: int
    peak_weight: float
    accumulator: Optional[HoughAccumulator] = field(default=None, repr=False)
    edges: Optional[EdgeSet] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "center": [float(c) for c in self.center],
            "in_plane_center": [float(c) for c in self.in_plane_center],
            "votes": int(self.votes),
            "peak_weight": float(self.peak_weight),
            "edge_count": int(self.edge_count),
            "plane": {
                "normal": [float(c) for c in self.plane.normal],
                "offset": float(self.plane.offset),
            },
        }


# ---------------------------------------------------------------------------
# Region of interest
# ---------------------------------------------------------------------------


def _crop_ring(ring: Ring, center: np.ndarray, radius: float) -> Ring:
    d = np.hypot(ring.points[:, 0] - center[0], ring.points[:, 1] - center[1])
    keep = np.flatnonzero(d <= radius)
    if len(keep) == 0 or len(keep) == len(ring):
        return ring.select(keep)
    # Start the cropped arc after the largest circular azimuth gap so an arc
    # straddling azimuth 0 stays contiguous.
    az = ring.azimuth[keep]
    gaps = np.diff(np.append(az, az[0] + 2.0 * np.pi))
    start = (int(np.argmax(gaps)) + 1) % len(keep)
    if start == 0:
        return ring.select(keep)
    order = np.roll(keep, -start)
    cropped = ring.select(order)
    unwrapped = np.concatenate([ring.azimuth[keep[start:]], ring.azimuth[keep[:start]] + 2.0 * np.pi])
    return Ring(cropped.ring_index, unwrapped, cropped.points, cropped.intensity, cropped.range)


def crop_roi(scans: Sequence[LidarScan], cfg: DetectorConfig) -> list[LidarScan]:
    """Keep samples within ``roi_radius`` (horizontal distance) of ``roi_center``."""
    if cfg.roi_center is None:
        cropped = list(scans)
    else:
        if cfg.roi_radius <= 0:
            raise EmptyROI("roi_radius is zero")
        center = np.asarray(cfg.roi_center)
        cropped = [s.map_rings(lambda r: _crop_ring(r, center, cfg.roi_radius)) for s in scans]
    if sum(s.sample_count for s in cropped) == 0:
        raise EmptyROI("no samples inside the region of interest")
    return cropped


# ---------------------------------------------------------------------------
# 1D Canny
# ---------------------------------------------------------------------------


def _gradient_magnitude(signal: np.ndarray, sigma: float) -> np.ndarray:
    smoothed = gaussian_filter1d(signal, sigma, mode="nearest") if sigma > 0 else signal
    if len(smoothed) < 2:
        return np.zeros_like(smoothed)
    return np.abs(np.gradient(smoothed))


def _canny_peaks(mag: np.ndarray, high: float, low: float) -> np.ndarray:
    """Sub-sample positions of hysteresis-accepted local maxima of ``mag``."""
    n = len(mag)
    if n < 3:
        return np.empty(0)
    c = mag[1:-1]
    peak = np.zeros(n, dtype=bool)
    # >= on the left, > on the right: one winner per flat-topped plateau.
    peak[1:-1] = (c >= mag[:-2]) & (c > mag[2:]) & (c >= low) & (c > 0)
    if not np.any(peak):
        return np.empty(0)

    above = mag >= low
    run_id = np.cumsum(np.r_[above[0], above[1:] & ~above[:-1]]) * above
    strong_runs = np.unique(run_id[peak & (mag >= high)])
    keep = peak & np.isin(run_id, strong_runs[strong_runs > 0])
    idx = np.flatnonzero(keep)

    left, mid, right = mag[idx - 1], mag[idx], mag[idx + 1]
    denom = left - 2.0 * mid + right
    with np.errstate(divide="ignore", invalid="ignore"):
        offset = np.where(denom < 0, 0.5 * (left - right) / denom, 0.0)
    return idx + np.clip(offset, -0.5, 0.5)


def canny_1d(signal, sigma: float, high_frac: float, low_frac: float) -> np.ndarray:
    """Sub-sample edge positions in a 1D signal, thresholds relative to its max gradient."""
    mag = _gradient_magnitude(np.asarray(signal, dtype=float), sigma)
    gmax = float(mag.max()) if len(mag) else 0.0
    if gmax <= 0:
        return np.empty(0)
    return _canny_peaks(mag, high_frac * gmax, low_frac * gmax)


def _segments(azimuth: np.ndarray) -> list[slice]:
    if len(azimuth) < 2:
        return [slice(0, len(azimuth))]
    steps = np.diff(azimuth)
    nominal = np.median(steps)
    cuts = np.flatnonzero(steps > SEGMENT_GAP_FACTOR * nominal) + 1
    bounds = np.r_[0, cuts, len(azimuth)]
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _interp_rows(values: np.ndarray, positions: np.ndarray) -> np.ndarray:
    i0 = np.clip(np.floor(positions).astype(int), 0, len(values) - 2)
    f = (positions - i0).reshape(-1, *([1] * (values.ndim - 1)))
    return values[i0] * (1 - f) + values[i0 + 1] * f


def _ring_gradients(ring: Ring, sigma: float) -> tuple[list[slice], list[np.ndarray]]:
    segs = [s for s in _segments(ring.azimuth) if s.stop - s.start >= 5]
    return segs, [_gradient_magnitude(ring.intensity[s], sigma) for s in segs]


def max_ring_gradient(ring: Ring, cfg: DetectorConfig) -> float:
    if len(ring) < 5:
        return 0.0
    _, mags = _ring_gradients(ring, cfg.canny_smooth_sigma)
    return max((float(m.max()) for m in mags), default=0.0)


def detect_edges(
    ring: Ring,
    cfg: DetectorConfig,
    uv: Optional[np.ndarray] = None,
    reference_gradient: Optional[float] = None,
) -> RingEdges:
    """1D Canny on ring intensity versus sample index.

    Contiguous azimuth segments are processed separately. Hysteresis
    thresholds are fractions of ``reference_gradient``, which defaults to the
    largest gradient anywhere on the ring. ``uv`` (one row per sample) maps
    edges into plane coordinates; without it the ``uv`` field is NaN.
    """
    empty = RingEdges(np.empty(0), np.empty(0), np.empty((0, 2)))
    if len(ring) < 5:
        return empty
    segs, mags = _ring_gradients(ring, cfg.canny_smooth_sigma)
    gmax = max((float(m.max()) for m in mags), default=0.0)
    if reference_gradient is not None:
        gmax = float(reference_gradient)
    if gmax <= 0:
        return empty

    index, azimuth, coords = [], [], []
    for seg, mag in zip(segs, mags):
        pos = _canny_peaks(mag, cfg.canny_high_frac * gmax, cfg.canny_low_frac * gmax)
        if len(pos) == 0:
            continue
        index.append(pos + seg.start)
        azimuth.append(_interp_rows(ring.azimuth[seg], pos))
        if uv is not None:
            coords.append(_interp_rows(np.asarray(uv)[seg], pos))
        else:
            coords.append(np.full((len(pos), 2), np.nan))
    if not index:
        return empty
    return RingEdges(np.concatenate(index), np.concatenate(azimuth), np.vstack(coords))


# ---------------------------------------------------------------------------
# Hough voting
# ---------------------------------------------------------------------------

_KEY_OFFSET = 1 << 24


def _circle_offsets(radius: float, cell_size: float) -> np.ndarray:
    n = max(8, int(np.ceil(2.0 * np.pi * radius / (0.5 * cell_size))))
    theta = 2.0 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(theta), np.sin(theta)])


def hough_vote(
    acc: HoughAccumulator, edges, radii: Sequence[float], chunk: int = 256
) -> HoughAccumulator:
    """Every (edge, radius) pair spreads one unit of weight evenly over the
    distinct cells its circle passes through; cells off the grid are dropped."""
    uv = edges.uv if isinstance(edges, EdgeSet) else np.asarray(edges, dtype=float).reshape(-1, 2)
    weights = acc.weights.copy()
    n_u, n_v = acc.shape
    flat = weights.reshape(-1)
    for r in radii:
        offsets = _circle_offsets(float(r), acc.cell_size)
        for start in range(0, len(uv), chunk):
            pts = uv[start : start + chunk, None, :] + offsets[None, :, :]
            idx = np.rint((pts - acc.origin) / acc.cell_size).astype(np.int64)
            keys = np.sort((idx[..., 0] + _KEY_OFFSET) * (2 * _KEY_OFFSET) + (idx[..., 1] + _KEY_OFFSET), axis=1)
            unique = np.ones(keys.shape, dtype=bool)
            unique[:, 1:] = keys[:, 1:] != keys[:, :-1]
            share = 1.0 / unique.sum(axis=1)
            iu = keys // (2 * _KEY_OFFSET) - _KEY_OFFSET
            iv = keys % (2 * _KEY_OFFSET) - _KEY_OFFSET
            inside = unique & (iu >= 0) & (iu < n_u) & (iv >= 0) & (iv < n_v)
            w = np.broadcast_to(share[:, None], keys.shape)[inside]
            np.add.at(flat, iu[inside] * n_v + iv[inside], w)
    return acc.with_weights(weights)


def blur_accumulator(acc: HoughAccumulator, sigma: float) -> HoughAccumulator:
    if sigma <= 0:
        return acc
    return acc.with_weights(gaussian_filter(acc.weights, sigma, mode="reflect"))


def accumulator_peak(acc: HoughAccumulator, refine: bool = True) -> tuple[np.ndarray, float]:
    """Peak position in plane coordinates and the weight of the peak cell.

    Ties go to the lowest ``(row, column)``. With ``refine`` the position is
    the weighted centroid of the 3x3 neighbourhood.
    """
    w = acc.weights
    i, j = np.unravel_index(int(np.argmax(w)), w.shape)
    peak = float(w[i, j])
    if not refine:
        return acc.cell_center(i, j), peak
    i0, i1 = max(i - 1, 0), min(i + 2, w.shape[0])
    j0, j1 = max(j - 1, 0), min(j + 2, w.shape[1])
    patch = w[i0:i1, j0:j1]
    total = patch.sum()
    if total <= 0:
        return acc.cell_center(i, j), peak
    ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    return acc.cell_center((patch * ii).sum() / total, (patch * jj).sum() / total), peak


def count_support(edges_uv: np.ndarray, center_uv, radii: Sequence[float], tolerance: float) -> int:
    """Number of (edge, radius) pairs whose circle passes within ``tolerance`` of the centre."""
    if len(edges_uv) == 0:
        return 0
    d = np.linalg.norm(np.asarray(edges_uv) - np.asarray(center_uv), axis=1)
    return int(sum(np.count_nonzero(np.abs(d - r) <= tolerance) for r in radii))


# ---------------------------------------------------------------------------
# Full detector
# ---------------------------------------------------------------------------


def _plane_coordinates(plane: Plane, points: np.ndarray, cfg: DetectorConfig) -> np.ndarray:
    if cfg.projection == "ray":
        return ray_project_to_plane(plane, points, cfg.sensor_origin)
    return project_to_plane(plane, points)


def fit_ground(points: np.ndarray, cfg: DetectorConfig) -> Plane:
    plane, _ = fit_plane(
        points,
        robust=cfg.plane_robust,
        ransac_iters=cfg.ransac_iters,
        inlier_dist=cfg.ransac_inlier_dist,
        viewpoint=cfg.sensor_origin,
    )
    if cfg.plane_fit == "range":
        if cfg.plane_robust:
            points = points[np.abs(plane.signed_distance(points)) <= cfg.ransac_inlier_dist]
        plane, _ = fit_plane_ranges(points, cfg.sensor_origin)
    up = np.asarray(cfg.up_axis) / np.linalg.norm(cfg.up_axis)
    if abs(float(plane.normal @ up)) < np.cos(np.deg2rad(cfg.max_tilt_deg)):
        raise DegenerateInput(
            f"fitted plane normal {plane.normal} is more than {cfg.max_tilt_deg} deg from the up axis"
        )
    return plane


def collect_edges(scans: Sequence[LidarScan], plane: Plane, cfg: DetectorConfig) -> list[EdgeSet]:
    """Edges of every ring of every scan, mapped into plane coordinates.

    With ``canny_reference="scan"`` the hysteresis thresholds of all rings in
    a scan share the scan's largest gradient, so rings that only see plain
    floor contribute no noise edges.
    """
    per_scan = []
    for s_idx, scan in enumerate(scans):
        reference = None
        if cfg.canny_reference == "scan":
            reference = max((max_ring_gradient(r, cfg) for r in scan.rings), default=0.0)
        parts = []
        for ring in scan.rings:
            if len(ring) < 5:
                continue
            found = detect_edges(ring, cfg, _plane_coordinates(plane, ring.points, cfg), reference)
            if len(found):
                parts.append(
                    EdgeSet(
                        found.uv,
                        np.full(len(found), s_idx, dtype=int),
                        np.full(len(found), ring.ring_index, dtype=int),
                    )
                )
        per_scan.append(EdgeSet.concat(parts))
    return per_scan


def _stacked_points(scans: Sequence[LidarScan]) -> np.ndarray:
    pts = [s.all_points() for s in scans if s.sample_count]
    if not pts:
        raise EmptyROI("no samples inside the region of interest")
    return np.vstack(pts)


def refine_roi(scans: Sequence[LidarScan], plane: Plane, cfg: DetectorConfig) -> list[LidarScan]:
    """Re-crop using where each sample's ray meets ``plane`` instead of the
    measured point, so that range noise cannot decide membership."""
    center = np.asarray(cfg.roi_center)
    origin = np.asarray(cfg.sensor_origin)

    def crop(ring: Ring) -> Ring:
        if len(ring) == 0:
            return ring
        d = ring.points - origin
        denom = d @ plane.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -(origin @ plane.normal + plane.offset) / denom
        hits = origin + s[:, None] * d
        keep = (s > 0) & (np.hypot(hits[:, 0] - center[0], hits[:, 1] - center[1]) <= cfg.roi_radius)
        return ring.select(keep)

    refined = [scan.map_rings(crop) for scan in scans]
    if sum(s.sample_count for s in refined) == 0:
        raise EmptyROI("no samples inside the region of interest")
    return refined


def detect_gcp(scans: Sequence[LidarScan], cfg: DetectorConfig) -> DetectionResult:
    if len(scans) == 0:
        raise ValueError("need at least one scan")
    if cfg.roi_center is not None and cfg.roi_margin > 0:
        coarse = crop_roi(scans, replace(cfg, roi_radius=cfg.roi_radius + cfg.roi_margin))
        first, _ = fit_plane(_stacked_points(coarse), viewpoint=cfg.sensor_origin)
        cropped = refine_roi(coarse, first, cfg)
    else:
        cropped = crop_roi(scans, cfg)
    points = _stacked_points(cropped)
    plane = fit_ground(points, cfg)

    if cfg.roi_center is not None:
        center_uv = project_to_plane(plane, [cfg.roi_center[0], cfg.roi_center[1], 0.0])[0]
    else:
        center_uv = _plane_coordinates(plane, points, cfg).mean(axis=0)

    acc = HoughAccumulator.empty(center_uv, cfg.hough_extent, cfg.hough_cell_size)
    per_scan = collect_edges(cropped, plane, cfg)
    for edges in per_scan:
        acc = hough_vote(acc, edges, cfg.radii)
    edges = EdgeSet.concat(per_scan)
    if len(edges) == 0:
        raise NoDetection("no intensity edges found")

    blurred = blur_accumulator(acc, cfg.blur_sigma)
    uv, peak = accumulator_peak(blurred, refine=cfg.subcell_refinement)
    votes = count_support(edges.uv, uv, cfg.radii, cfg.support_tolerance)
    if votes < cfg.effective_min_votes:
        raise NoDetection(f"peak supported by {votes} votes, need {cfg.effective_min_votes}")
    center = lift_from_plane(plane, uv)[0]
    return DetectionResult(center, uv, votes, plane, len(edges), peak, acc, edges)


@dataclass(frozen=True, eq=False)
class GridEvaluation:
    errors: np.ndarray
    median: float
    max: float
    r95: float
    r997: float
    sigma: float

    def to_dict(self) -> dict:
        return {
            "errors": [float(e) for e in self.errors],
            "median": self.median,
            "max": self.max,
            "r95": self.r95,
            "r99_7": self.r997,
            "rayleigh_sigma": self.sigma,
        }


def evaluate_detector_grid(grid_points, detections) -> GridEvaluation:
    """Relative accuracy of detections over a surveyed grid after rigid alignment."""
    from .evaluation import rayleigh_fit

    errors = alignment_residuals(grid_points, detections)
    fit = rayleigh_fit(errors)
    return GridEvaluation(
        errors,
        float(np.median(errors)),
        float(np.max(errors)),
        fit.quantile(0.95),
        fit.quantile(0.997),
        fit.sigma,
    )
