"""Text file formats: trajectories, scans, GCP surveys, observations, calibrations."""

from __future__ import annotations

import csv
import io as _io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .evaluation import GCPObservation, GroundControlPoint
from .findings import ERROR, Finding
from .geometry import RigidTransform, Trajectory, UnitQuaternion
from .lidar_sim import LidarScan, Ring

PathLike = Union[str, Path]

STAMP_SCALE = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
SCAN_COLUMNS = ("revolution", "ring", "azimuth_rad", "x", "y", "z", "intensity")


def fmt(x: float) -> str:
    """Shortest text that round-trips a float exactly."""
    return repr(float(x))


def _stamp_scale(unit: str) -> float:
    try:
        return STAMP_SCALE[unit]
    except KeyError:
        raise ValueError(f"unknown stamp unit {unit!r}; expected one of {sorted(STAMP_SCALE)}") from None


# ---------------------------------------------------------------------------
# Trajectories: "timestamp tx ty tz qx qy qz qw"
# ---------------------------------------------------------------------------


@dataclass
class ParsedTrajectory:
    """Raw parse result. Quaternions are stored scalar-first and are *not*
    normalised; checking their norm is left to validation."""

    timestamps: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray
    line_numbers: np.ndarray
    findings: list[Finding] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.timestamps)

    def to_trajectory(self, body_frame: str = "imu") -> Trajectory:
        return Trajectory(self.timestamps, self.positions, self.quaternions, body_frame)


def parse_trajectory(text: str, stamp_unit: str = "s") -> ParsedTrajectory:
    scale = _stamp_scale(stamp_unit)
    stamps, pos, quat, lines, findings = [], [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 8:
            findings.append(
                Finding(ERROR, "malformed_line", f"expected 8 fields, found {len(parts)}", line=lineno)
            )
            continue
        try:
            values = [float(p) for p in parts]
        except ValueError:
            findings.append(Finding(ERROR, "malformed_line", f"non-numeric field in {line!r}", line=lineno))
            continue
        if not all(np.isfinite(values)):
            findings.append(Finding(ERROR, "malformed_line", "non-finite value", line=lineno))
            continue
        t, tx, ty, tz, qx, qy, qz, qw = values
        stamps.append(t * scale)
        pos.append((tx, ty, tz))
        quat.append((qw, qx, qy, qz))
        lines.append(lineno)
    if not stamps:
        findings.append(Finding(ERROR, "empty_trajectory", "no poses found"))
    return ParsedTrajectory(
        np.array(stamps, dtype=float),
        np.array(pos, dtype=float).reshape(-1, 3),
        np.array(quat, dtype=float).reshape(-1, 4),
        np.array(lines, dtype=int),
        findings,
    )


def format_trajectory(traj: Trajectory, header: bool = True) -> str:
    out = _io.StringIO()
    if header:
        out.write("# timestamp tx ty tz qx qy qz qw\n")
    for t, p, q in zip(traj.timestamps, traj.positions, traj.quaternions):
        w, x, y, z = q
        out.write(" ".join(fmt(v) for v in (t, *p, x, y, z, w)) + "\n")
    return out.getvalue()


def read_trajectory(path: PathLike, stamp_unit: str = "s", body_frame: str = "imu") -> Trajectory:
    parsed = parse_trajectory(Path(path).read_text(), stamp_unit)
    errors = [f for f in parsed.findings if f.severity == ERROR]
    if errors:
        first = errors[0]
        where = f" (line {first.line})" if first.line else ""
        raise ValueError(f"{path}: {first.code}{where}: {first.message}")
    return parsed.to_trajectory(body_frame)


def write_trajectory(path: PathLike, traj: Trajectory) -> None:
    Path(path).write_text(format_trajectory(traj))


# ---------------------------------------------------------------------------
# GCP survey "name,x,y,z" and observations "timestamp,gcp_name,sensor_frame,px,py,pz"
# ---------------------------------------------------------------------------


def _data_rows(text: str, width: int) -> Iterable[tuple[int, list[str]]]:
    for lineno, row in enumerate(csv.reader(_io.StringIO(text)), start=1):
        if not row or row[0].strip().startswith("#"):
            continue
        row = [c.strip() for c in row]
        if len(row) != width:
            raise ValueError(f"line {lineno}: expected {width} columns, found {len(row)}")
        yield lineno, row


def _is_header(row: Sequence[str], numeric_col: int) -> bool:
    try:
        float(row[numeric_col])
        return False
    except ValueError:
        return True


def parse_gcps(text: str) -> list[GroundControlPoint]:
    gcps = []
    for lineno, row in _data_rows(text, 4):
        if not gcps and _is_header(row, 1):
            continue
        gcps.append(GroundControlPoint(row[0], tuple(float(v) for v in row[1:4])))
    return gcps


def format_gcps(gcps: Sequence[GroundControlPoint]) -> str:
    lines = ["name,x,y,z"]
    lines += [",".join([g.name, *(fmt(v) for v in g.position)]) for g in gcps]
    return "\n".join(lines) + "\n"


def parse_observations(text: str, stamp_unit: str = "s") -> list[GCPObservation]:
    scale = _stamp_scale(stamp_unit)
    obs = []
    for lineno, row in _data_rows(text, 6):
        if not obs and _is_header(row, 0):
            continue
        obs.append(
            GCPObservation(float(row[0]) * scale, row[1], row[2], tuple(float(v) for v in row[3:6]))
        )
    return obs


def format_observations(observations: Sequence[GCPObservation]) -> str:
    lines = ["timestamp,gcp_name,sensor_frame,px,py,pz"]
    for o in observations:
        lines.append(",".join([fmt(o.timestamp), o.gcp_name, o.sensor_frame, *(fmt(v) for v in o.point)]))
    return "\n".join(lines) + "\n"


def read_gcps(path: PathLike) -> list[GroundControlPoint]:
    return parse_gcps(Path(path).read_text())


def read_observations(path: PathLike, stamp_unit: str = "s") -> list[GCPObservation]:
    return parse_observations(Path(path).read_text(), stamp_unit)


# ---------------------------------------------------------------------------
# Calibration JSON {frame: {t: [x, y, z], q: [qw, qx, qy, qz]}}  (T_imu_sensor)
# ---------------------------------------------------------------------------


def calibration_from_dict(data: Mapping) -> dict[str, RigidTransform]:
    calib = {}
    for frame, entry in data.items():
        unknown = set(entry) - {"t", "q"}
        if unknown:
            raise ValueError(f"calibration entry {frame!r} has unknown keys {sorted(unknown)}")
        t = entry.get("t", [0.0, 0.0, 0.0])
        q = entry.get("q", [1.0, 0.0, 0.0, 0.0])
        if len(t) != 3 or len(q) != 4:
            raise ValueError(f"calibration entry {frame!r} needs t[3] and q[4]")
        calib[str(frame)] = RigidTransform(UnitQuaternion(*q), np.asarray(t, dtype=float))
    return calib


def calibration_to_dict(calib: Mapping[str, RigidTransform]) -> dict:
    return {
        frame: {
            "t": [float(v) for v in T.translation],
            "q": [float(v) for v in T.rotation.as_array()],
        }
        for frame, T in sorted(calib.items())
    }


def read_calibration(path: PathLike) -> dict[str, RigidTransform]:
    return calibration_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Scans "revolution,ring,azimuth_rad,x,y,z,intensity"
# ---------------------------------------------------------------------------


def format_scans(scans: Sequence[LidarScan], comments: Sequence[str] = ()) -> str:
    out = _io.StringIO()
    for c in comments:
        out.write(f"# {c}\n")
    out.write("# " + ",".join(SCAN_COLUMNS) + "\n")
    for scan in scans:
        rev = str(scan.revolution_index)
        for ring in scan.rings:
            idx = str(ring.ring_index)
            for a, p, i in zip(ring.azimuth, ring.points, ring.intensity):
                out.write(",".join((rev, idx, fmt(a), fmt(p[0]), fmt(p[1]), fmt(p[2]), fmt(i))) + "\n")
    return out.getvalue()


def parse_scans(text: str, ring_count: Optional[int] = None) -> list[LidarScan]:
    """Inverse of ``format_scans``. Ranges are recomputed as point norms.

    Rings absent from the file come back empty so every scan has the same
    ring count (``ring_count`` or one more than the largest ring index seen).
    """
    rows = [line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        return []
    data = np.array([[float(v) for v in r.split(",")] for r in rows])
    if data.shape[1] != len(SCAN_COLUMNS):
        raise ValueError(f"scan CSV needs {len(SCAN_COLUMNS)} columns, found {data.shape[1]}")
    revs = data[:, 0].astype(int)
    rings = data[:, 1].astype(int)
    n_rings = ring_count if ring_count is not None else int(rings.max()) + 1
    scans = []
    for rev in sorted(set(revs.tolist())):
        in_rev = data[revs == rev]
        ring_ids = in_rev[:, 1].astype(int)
        ring_list = []
        for r in range(n_rings):
            d = in_rev[ring_ids == r]
            pts = d[:, 3:6]
            ring_list.append(Ring(r, d[:, 2], pts, d[:, 6], np.linalg.norm(pts, axis=1)))
        scans.append(LidarScan(ring_list, rev))
    return scans


def write_scans(path: PathLike, scans: Sequence[LidarScan], comments: Sequence[str] = ()) -> None:
    Path(path).write_text(format_scans(scans, comments))


def read_scans(path: PathLike, ring_count: Optional[int] = None) -> list[LidarScan]:
    return parse_scans(Path(path).read_text(), ring_count)


def write_json(path: PathLike, payload: Mapping) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
