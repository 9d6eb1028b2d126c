"""Sparse ground-control-point scoring of SLAM trajectories.

Each observation pins a GCP measurement (a point in some sensor frame) to a
timestamp. The submitted trajectory, the sensor extrinsics and the
measurement give a world-frame estimate of the GCP; after a rigid alignment
onto the surveyed coordinates each residual is converted into points by a
bracket table and the points are normalised into a sequence score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateInput,
    EmptySequence,
    GapTooLarge,
    InsufficientCoverage,
    MissingFrame,
    OutOfRange,
)
from .geometry import (
    DEFAULT_MAX_GAP,
    RigidTransform,
    Trajectory,
    interpolate_pose,
    kabsch_align,
)

MAX_POINTS_PER_GCP = 20


@dataclass(frozen=True)
class GroundControlPoint:
    name: str
    position: tuple[float, float, float]


@dataclass(frozen=True)
class GCPObservation:
    timestamp: float
    gcp_name: str
    sensor_frame: str
    point: tuple[float, float, float]


CalibrationSet = Mapping[str, RigidTransform]


@dataclass(frozen=True)
class ScoreBrackets:
    """``(upper_bound, points)`` rows; an error scores the points of the first
    row whose bound it is strictly below. Errors at or above the last bound
    score ``floor_points``."""

    brackets: tuple[tuple[float, int], ...] = (
        (0.005, 20),
        (0.01, 10),
        (0.03, 6),
        (0.06, 5),
        (0.1, 3),
        (0.4, 1),
    )
    floor_points: int = 0
    max_points: int = MAX_POINTS_PER_GCP

    def __post_init__(self):
        rows = tuple((float(b), int(p)) for b, p in self.brackets)
        object.__setattr__(self, "brackets", rows)
        bounds = [b for b, _ in rows]
        points = [p for _, p in rows] + [self.floor_points]
        if not rows or np.any(np.diff(bounds) <= 0) or bounds[0] <= 0:
            raise ValueError("bracket bounds must be positive and strictly increasing")
        if np.any(np.diff(points) >= 0):
            raise ValueError("bracket points must be strictly decreasing")
        if self.floor_points != 0:
            raise ValueError("the open-ended last bracket must award 0 points")


def score_error(e: float, brackets: ScoreBrackets = ScoreBrackets()) -> int:
    if not e >= 0:
        raise ValueError(f"error must be non-negative, got {e!r}")
    for bound, points in brackets.brackets:
        if e < bound:
            return points
    return brackets.floor_points


def sequence_score(scores: Sequence[float], multiplier: float = 100, max_points: int = MAX_POINTS_PER_GCP) -> float:
    """Fraction of the maximum attainable points, scaled by ``multiplier``."""
    n = len(scores)
    if n == 0:
        raise EmptySequence("no ground control points to score")
    return float(sum(scores)) / (max_points * n) * multiplier


def multiplier_for_site(site: int) -> int:
    # Site 3 carries no feedback plots and counts double.
    return 200 if int(site) == 3 else 100


@dataclass(frozen=True)
class GCPResult:
    name: str
    timestamp: float
    covered: bool
    error: Optional[float]
    score: int
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "timestamp": self.timestamp,
            "covered": self.covered,
            "error": self.error,
            "score": self.score,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class EvaluationReport:
    gcps: tuple[GCPResult, ...]
    score: float
    rmse_ate: float
    coverage: float
    multiplier: float
    alignment: Optional[RigidTransform] = field(default=None, compare=False)

    @property
    def errors(self) -> np.ndarray:
        return np.array([g.error for g in self.gcps if g.covered], dtype=float)

    @property
    def scores(self) -> list[int]:
        return [g.score for g in self.gcps]

    def to_dict(self) -> dict:
        out = {
            "score": self.score,
            "rmse_ate": self.rmse_ate,
            "gcp_coverage": self.coverage,
            "multiplier": self.multiplier,
            "gcps": [g.to_dict() for g in self.gcps],
        }
        if self.alignment is not None:
            out["alignment"] = {
                "t": [float(c) for c in self.alignment.translation],
                "q": [float(c) for c in self.alignment.rotation.as_array()],
            }
        return out


@dataclass(frozen=True)
class EstimatedPositions:
    names: list[str]
    timestamps: list[float]
    positions: np.ndarray
    uncovered: list[tuple[str, float, str]]


def estimated_gcp_positions(
    traj: Trajectory,
    observations: Sequence[GCPObservation],
    calib: CalibrationSet,
    max_gap: float = DEFAULT_MAX_GAP,
) -> EstimatedPositions:
    """World-frame GCP estimates ``T_world_body(t) ∘ T_body_sensor · p_sensor``.

    Observations whose timestamp cannot be interpolated are returned in
    ``uncovered`` together with the reason.
    """
    names, times, positions, uncovered = [], [], [], []
    for obs in observations:
        if obs.sensor_frame not in calib:
            raise MissingFrame(f"no extrinsic calibration for frame {obs.sensor_frame!r}")
    for obs in observations:
        try:
            pose = interpolate_pose(traj, obs.timestamp, max_gap)
        except (OutOfRange, GapTooLarge) as exc:
            uncovered.append((obs.gcp_name, obs.timestamp, f"{type(exc).__name__}: {exc}"))
            continue
        p = (pose @ calib[obs.sensor_frame]).apply(np.asarray(obs.point, dtype=float))
        names.append(obs.gcp_name)
        times.append(obs.timestamp)
        positions.append(p)
    return EstimatedPositions(names, times, np.array(positions).reshape(-1, 3), uncovered)


def _survey_lookup(gcps: Sequence[GroundControlPoint]) -> dict[str, np.ndarray]:
    lookup = {}
    for g in gcps:
        if g.name in lookup:
            raise ValueError(f"duplicate GCP name {g.name!r}")
        lookup[g.name] = np.asarray(g.position, dtype=float)
    return lookup


def report_from_errors(
    covered: Sequence[tuple[str, float, float]],
    uncovered: Sequence[tuple[str, float, str]] = (),
    brackets: ScoreBrackets = ScoreBrackets(),
    multiplier: float = 100,
    alignment: Optional[RigidTransform] = None,
) -> EvaluationReport:
    """Score already-aligned residuals ``(name, timestamp, error)``; uncovered rows score 0."""
    rows = [GCPResult(n, t, True, float(e), score_error(e, brackets)) for n, t, e in covered]
    rows += [GCPResult(n, t, False, None, 0, reason) for n, t, reason in uncovered]
    rows.sort(key=lambda r: (r.timestamp, r.name))
    errors = np.array([e for _, _, e in covered], dtype=float)
    rmse = float(np.sqrt(np.mean(errors**2))) if len(errors) else float("nan")
    return EvaluationReport(
        tuple(rows),
        sequence_score([r.score for r in rows], multiplier, brackets.max_points),
        rmse,
        len(covered) / len(rows),
        multiplier,
        alignment,
    )


def _aligned_errors(
    est: EstimatedPositions, survey: dict[str, np.ndarray], T: RigidTransform
) -> list[tuple[str, float, float]]:
    out = []
    for name, t, p in zip(est.names, est.timestamps, est.positions):
        out.append((name, t, float(np.linalg.norm(survey[name] - T.apply(p)))))
    return out


def _check_names(observations: Sequence[GCPObservation], survey: Mapping[str, np.ndarray]):
    missing = sorted({o.gcp_name for o in observations} - set(survey))
    if missing:
        raise KeyError(f"observations reference unsurveyed GCPs: {missing}")


def evaluate_sequence(
    traj: Trajectory,
    observations: Sequence[GCPObservation],
    calib: CalibrationSet,
    gcps: Sequence[GroundControlPoint],
    brackets: ScoreBrackets = ScoreBrackets(),
    multiplier: float = 100,
    max_gap: float = DEFAULT_MAX_GAP,
) -> EvaluationReport:
    """Score one trajectory. N is the number of observations for the sequence."""
    survey = _survey_lookup(gcps)
    _check_names(observations, survey)
    if not observations:
        raise EmptySequence("sequence has no GCP observations")
    est = estimated_gcp_positions(traj, observations, calib, max_gap)
    if len(est.names) < 3:
        raise InsufficientCoverage(f"only {len(est.names)} GCPs covered, need 3 for alignment")
    surveyed = np.array([survey[n] for n in est.names])
    T = kabsch_align(est.positions, surveyed)
    return report_from_errors(_aligned_errors(est, survey, T), est.uncovered, brackets, multiplier, T)


def evaluate_multi_session(
    trajs: Sequence[Trajectory],
    observations_per_traj: Sequence[Sequence[GCPObservation]],
    calib: CalibrationSet,
    gcps: Sequence[GroundControlPoint],
    brackets: ScoreBrackets = ScoreBrackets(),
    multiplier: float = 100,
    max_gap: float = DEFAULT_MAX_GAP,
    alignment: str = "reference",
) -> EvaluationReport:
    """Score several sessions recorded in one common frame as a single trajectory.

    One rigid transform is applied to every session. With
    ``alignment="reference"`` it is fitted on the first session's GCPs, so a
    later session registered into the wrong place is penalised in full. With
    ``alignment="joint"`` it is the least-squares fit over all sessions.
    """
    if len(trajs) != len(observations_per_traj):
        raise ValueError("one observation list per trajectory is required")
    if alignment not in ("reference", "joint"):
        raise ValueError("alignment must be 'reference' or 'joint'")
    if not trajs:
        raise EmptySequence("no sessions given")
    survey = _survey_lookup(gcps)
    for obs in observations_per_traj:
        _check_names(obs, survey)
    if sum(len(o) for o in observations_per_traj) == 0:
        raise EmptySequence("no GCP observations in any session")

    per_session = [
        estimated_gcp_positions(t, o, calib, max_gap) for t, o in zip(trajs, observations_per_traj)
    ]
    merged = EstimatedPositions(
        [n for e in per_session for n in e.names],
        [t for e in per_session for t in e.timestamps],
        np.vstack([e.positions for e in per_session]),
        [u for e in per_session for u in e.uncovered],
    )
    fit_on = per_session[0] if alignment == "reference" else merged
    if len(fit_on.names) < 3:
        raise InsufficientCoverage(f"only {len(fit_on.names)} GCPs available for alignment, need 3")
    T = kabsch_align(fit_on.positions, np.array([survey[n] for n in fit_on.names]))
    return report_from_errors(_aligned_errors(merged, survey, T), merged.uncovered, brackets, multiplier, T)


def challenge_score(reports: Mapping[str, EvaluationReport]) -> float:
    """Total challenge score: sum of sequence scores, accumulated in name order."""
    return float(sum(reports[name].score for name in sorted(reports)))


@dataclass(frozen=True)
class RayleighFit:
    sigma: float
    n: int
    degenerate: bool = False

    def quantile(self, p: float) -> float:
        if not 0 <= p < 1:
            raise ValueError("p must lie in [0, 1)")
        return self.sigma * math.sqrt(-2.0 * math.log1p(-p))

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.sigma == 0:
            return np.zeros_like(x)
        s2 = self.sigma**2
        return np.where(x >= 0, x / s2 * np.exp(-(x**2) / (2 * s2)), 0.0)


def rayleigh_fit(errors) -> RayleighFit:
    """Maximum-likelihood Rayleigh scale ``sqrt(sum e^2 / 2n)``."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    if len(e) < 2:
        raise DegenerateInput(f"need at least 2 errors for a Rayleigh fit, got {len(e)}")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise DegenerateInput("errors must be finite and non-negative")
    sigma = float(np.sqrt(np.sum(e**2) / (2 * len(e))))
    return RayleighFit(sigma, len(e), degenerate=sigma == 0.0)
