"""Submission integrity checks.

Three independent analyses:

* ``validate_submission`` turns a raw trajectory file into a list of findings
  (parse problems, bad quaternions, thin coverage, suspiciously low pose rate).
* ``detect_discontinuities`` looks for implausible jumps between consecutive
  poses, which matter most when they sit next to a GCP timestamp.
* ``diff_submissions`` compares two versions of a team's trajectory and
  reports edits that are local in time rather than global.

All numeric gates are heuristics with documented defaults in
``ValidationConfig``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import NoOverlap
from .findings import ERROR, WARNING, Finding, sort_findings
from .geometry import DEFAULT_MAX_GAP, Trajectory, interpolate_positions
from .io import parse_trajectory


@dataclass(frozen=True)
class ValidationConfig:
    min_pose_rate: float = 10.0  # Hz
    min_span_coverage: float = 0.9
    quaternion_tolerance: float = 1e-3
    max_gap: float = DEFAULT_MAX_GAP  # s; larger holes count as uncovered
    discontinuity_window: float = 1.0  # s either side of a GCP timestamp
    velocity_threshold: float = 5.0  # m/s
    diff_window: float = 1.0  # s
    diff_mad_k: float = 5.0
    diff_min_excess: float = 1e-3  # m, absorbs float noise when the MAD is zero

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"validation.{name} must be finite and non-negative")
        if self.min_span_coverage > 1:
            raise ValueError("validation.min_span_coverage must lie in [0, 1]")


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]
    pose_count: int
    span_coverage: Optional[float]
    pose_rate: Optional[float]

    @property
    def accepted(self) -> bool:
        return not any(f.severity == ERROR for f in self.findings)

    def codes(self) -> list[str]:
        return [f.code for f in self.findings]

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "pose_count": self.pose_count,
            "span_coverage": self.span_coverage,
            "pose_rate": self.pose_rate,
            "findings": [f.to_dict() for f in self.findings],
        }


def span_coverage(timestamps: np.ndarray, span: tuple[float, float], max_gap: float) -> float:
    """Fraction of ``span`` lying inside inter-pose intervals no longer than ``max_gap``."""
    t0, t1 = float(span[0]), float(span[1])
    if t1 <= t0:
        raise ValueError("expected span must have t1 > t0")
    ts = np.asarray(timestamps, dtype=float)
    if len(ts) < 2:
        return 0.0
    a, b = ts[:-1], ts[1:]
    ok = (b - a) <= max_gap
    lo = np.clip(a[ok], t0, t1)
    hi = np.clip(b[ok], t0, t1)
    return float(np.sum(np.maximum(hi - lo, 0.0)) / (t1 - t0))


def validate_submission(
    raw_text: str,
    expected_span: Optional[tuple[float, float]] = None,
    min_pose_rate: Optional[float] = None,
    config: ValidationConfig = ValidationConfig(),
    stamp_unit: str = "s",
) -> ValidationReport:
    """Check a raw trajectory file. Never raises on bad content; every
    problem becomes a finding. ``min_pose_rate`` overrides the config value."""
    rate_gate = config.min_pose_rate if min_pose_rate is None else float(min_pose_rate)
    parsed = parse_trajectory(raw_text, stamp_unit)
    findings = list(parsed.findings)
    ts, lines = parsed.timestamps, parsed.line_numbers

    for i in np.flatnonzero(np.diff(ts) <= 0) + 1:
        findings.append(
            Finding(
                ERROR,
                "non_monotonic_timestamp",
                f"timestamp {ts[i]!r} does not exceed previous {ts[i - 1]!r}",
                timestamp=float(ts[i]),
                line=int(lines[i]),
            )
        )

    norms = np.linalg.norm(parsed.quaternions, axis=1)
    for i in np.flatnonzero(np.abs(norms - 1.0) > config.quaternion_tolerance):
        findings.append(
            Finding(
                ERROR,
                "invalid_quaternion",
                f"quaternion norm {norms[i]:.6g} outside 1 +/- {config.quaternion_tolerance:g}",
                timestamp=float(ts[i]),
                line=int(lines[i]),
            )
        )

    coverage = None
    if expected_span is not None and len(ts):
        coverage = span_coverage(np.sort(ts), expected_span, config.max_gap)
        if coverage < config.min_span_coverage:
            findings.append(
                Finding(
                    WARNING,
                    "incomplete_trajectory",
                    f"poses cover {coverage:.1%} of the expected span, below {config.min_span_coverage:.0%}",
                )
            )

    rate = None
    if len(ts):
        duration = float(ts.max() - ts.min())
        rate = (len(ts) - 1) / duration if duration > 0 else 0.0
        if rate < rate_gate:
            findings.append(
                Finding(
                    ERROR,
                    "sparse_trajectory",
                    f"mean pose rate {rate:.3g} Hz below minimum {rate_gate:g} Hz",
                )
            )

    return ValidationReport(tuple(sort_findings(findings)), len(ts), coverage, rate)


# ---------------------------------------------------------------------------
# Discontinuities
# ---------------------------------------------------------------------------

GcpTimes = Union[Mapping[str, float], Sequence[tuple[str, float]], Sequence[float]]


def named_times(gcp_times: GcpTimes) -> list[tuple[str, float]]:
    """Normalise GCP timestamps to ``(name, t)`` pairs. Bare floats are named by index."""
    if isinstance(gcp_times, Mapping):
        return [(str(n), float(t)) for n, t in gcp_times.items()]
    out = []
    for i, item in enumerate(gcp_times):
        if isinstance(item, (tuple, list)):
            out.append((str(item[0]), float(item[1])))
        else:
            out.append((f"gcp{i}", float(item)))
    return out


@dataclass(frozen=True)
class DiscontinuityFlag:
    severity: str
    t_start: float
    t_end: float
    speed: float
    gcps: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)


def detect_discontinuities(
    traj: Trajectory,
    gcp_times: GcpTimes,
    window: float = 1.0,
    vel_threshold: float = 5.0,
) -> list[DiscontinuityFlag]:
    """Intervals whose finite-difference speed is strictly above ``vel_threshold``.

    An interval overlapping ``[t_gcp - window, t_gcp + window]`` for some GCP is
    an error naming those GCPs; any other exceedance is a warning.
    """
    if len(traj) < 2:
        return []
    gcps = named_times(gcp_times)
    ts = traj.timestamps
    speed = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1) / np.diff(ts)
    flags = []
    for i in np.flatnonzero(speed > vel_threshold):
        a, b = float(ts[i]), float(ts[i + 1])
        near = tuple(sorted({n for n, t in gcps if a <= t + window and b >= t - window}))
        flags.append(DiscontinuityFlag(ERROR if near else WARNING, a, b, float(speed[i]), near))
    return flags


# ---------------------------------------------------------------------------
# Progressive submission diff
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChangeWindow:
    t_start: float
    t_end: float
    peak_displacement: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DiffReport:
    timestamps: np.ndarray
    displacements: np.ndarray
    threshold: float
    windows: tuple[ChangeWindow, ...]
    flagged_gcps: tuple[str, ...]

    def to_dict(self) -> dict:
        d = self.displacements
        return {
            "matched_poses": len(d),
            "median_displacement": float(np.median(d)),
            "max_displacement": float(np.max(d)),
            "threshold": self.threshold,
            "windows": [w.to_dict() for w in self.windows],
            "flagged_gcps": list(self.flagged_gcps),
        }


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive index ranges of consecutive True entries."""
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(s), int(e) - 1) for s, e in zip(edges[::2], edges[1::2])]


def diff_submissions(
    prev: Trajectory,
    curr: Trajectory,
    gcp_times: GcpTimes,
    window: float = 1.0,
    k: float = 5.0,
    min_excess: float = 1e-3,
) -> DiffReport:
    """Per-pose displacement of ``curr`` relative to ``prev`` and the time
    windows where it stands out from the sequence-wide median.

    A window is a maximal run of matched poses whose displacement exceeds
    ``median + k * MAD + min_excess``. A uniform change (for example a global
    re-registration) moves the median with it and produces no window.
    """
    t0, t1 = prev.span
    ts = curr.timestamps
    inside = (ts >= t0) & (ts <= t1)
    if not np.any(inside):
        raise NoOverlap(f"current submission has no poses within [{t0!r}, {t1!r}]")
    ts = ts[inside]
    ref, _ = interpolate_positions(prev, ts, max_gap=np.inf)
    disp = np.linalg.norm(curr.positions[inside] - ref, axis=1)

    med = float(np.median(disp))
    mad = float(np.median(np.abs(disp - med)))
    threshold = med + k * mad + min_excess

    gcps = named_times(gcp_times)
    windows, flagged = [], set()
    for s, e in _runs(disp > threshold):
        w = ChangeWindow(float(ts[s]), float(ts[e]), float(disp[s : e + 1].max()))
        windows.append(w)
        flagged.update(n for n, t in gcps if w.t_start <= t + window and w.t_end >= t - window)
    return DiffReport(ts, disp, threshold, tuple(windows), tuple(sorted(flagged)))
