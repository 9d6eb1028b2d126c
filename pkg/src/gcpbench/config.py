"""Run configuration: one JSON document covering every tunable.

Unknown keys are rejected at any depth. Missing keys take their defaults, and
``RunConfig.to_dict`` returns the fully resolved document that the CLI echoes
into every output it writes.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .errors import ConfigError
from .evaluation import ScoreBrackets
from .gcp_detector import DetectorConfig
from .geometry import DEFAULT_MAX_GAP, Plane, RigidTransform, UnitQuaternion
from .lidar_sim import FiducialSpec, ScannerSpec, default_ring_elevations
from .validation import ValidationConfig

CONFIG_ENV = "GCPBENCH_CONFIG"


def _plain(value):
    if isinstance(value, np.ndarray):
        return [float(v) for v in value]
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _defaults() -> dict:
    det = {f.name: _plain(getattr(DetectorConfig(), f.name)) for f in fields(DetectorConfig)}
    val = asdict(ValidationConfig())
    return {
        "scanner": {
            "ring_elevations_deg": list(default_ring_elevations()),
            "samples_per_rev": 1800,
            "mount": {"t": [0.0, 0.0, 0.5], "q": [1.0, 0.0, 0.0, 0.0]},
            "range_noise_sigma": 0.03,
            "intensity_noise_sigma": 0.0,
            "azimuth_phase_jitter": True,
            "intensity_blur_sigma": 0.0,
        },
        "fiducial": {
            "center": [0.6, 0.0, 0.0],
            "edge_radii": [0.10, 0.15],
            "intensity_levels": [0.9, 0.05, 0.6],
        },
        "ground": {"normal": [0.0, 0.0, 1.0], "offset": 0.0},
        "revolutions": 10,
        "detector": det,
        "scoring": {
            "brackets": [list(b) for b in ScoreBrackets().brackets],
            "max_points": ScoreBrackets().max_points,
        },
        "evaluation": {"max_gap": DEFAULT_MAX_GAP, "multi_alignment": "reference"},
        "validation": val,
        "calibration": {"lidar": {"t": [0.0, 0.0, 0.0], "q": [1.0, 0.0, 0.0, 0.0]}},
    }


# Sections whose keys are free-form (frame names) rather than a fixed schema.
_OPEN_SECTIONS = {("calibration",)}


def _merge(base: dict, override: Mapping, path: tuple[str, ...] = ()) -> dict:
    out = copy.deepcopy(base)
    if not isinstance(override, Mapping):
        raise ConfigError(f"{'.'.join(path) or 'config'} must be an object")
    if path in _OPEN_SECTIONS:
        return copy.deepcopy(dict(override))
    for key, value in override.items():
        where = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(where)!r}")
        if isinstance(base[key], dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _transform(entry: Mapping, where: str) -> RigidTransform:
    if set(entry) - {"t", "q"}:
        raise ConfigError(f"{where} accepts only 't' and 'q'")
    t = entry.get("t", [0.0, 0.0, 0.0])
    q = entry.get("q", [1.0, 0.0, 0.0, 0.0])
    if len(t) != 3 or len(q) != 4:
        raise ConfigError(f"{where} needs t[3] and q[4] (q is w, x, y, z)")
    return RigidTransform(UnitQuaternion(*q), np.asarray(t, dtype=float))


def _tupled(value):
    return tuple(value) if isinstance(value, list) else value


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, data: Optional[Mapping] = None) -> RunConfig:
        cfg = cls(_merge(_defaults(), data or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Optional[str] = None) -> RunConfig:
        """Read ``path``, else the file named by ``$GCPBENCH_CONFIG``, else defaults."""
        path = path or os.environ.get(CONFIG_ENV)
        if not path:
            return cls.from_dict({})
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def validate(self) -> None:
        """Build every typed object once so bad values surface as ConfigError."""
        try:
            self.scanner()
            self.ground()
            self.fiducial()
            self.detector()
            self.brackets()
            self.validation()
            self.calibration()
            if int(self.data["revolutions"]) < 1:
                raise ValueError("revolutions must be >= 1")
            if self.data["evaluation"]["multi_alignment"] not in ("reference", "joint"):
                raise ValueError("evaluation.multi_alignment must be 'reference' or 'joint'")
            if not float(self.data["evaluation"]["max_gap"]) > 0:
                raise ValueError("evaluation.max_gap must be positive")
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    # typed views -----------------------------------------------------------

    def scanner(self) -> ScannerSpec:
        s = self.data["scanner"]
        return ScannerSpec(
            ring_elevations=tuple(s["ring_elevations_deg"]),
            samples_per_rev=int(s["samples_per_rev"]),
            mount_pose=_transform(s["mount"], "scanner.mount"),
            range_noise_sigma=float(s["range_noise_sigma"]),
            intensity_noise_sigma=float(s["intensity_noise_sigma"]),
            azimuth_phase_jitter=bool(s["azimuth_phase_jitter"]),
            intensity_blur_sigma=float(s["intensity_blur_sigma"]),
        )

    def ground(self) -> Plane:
        g = self.data["ground"]
        return Plane.from_normal_offset(g["normal"], float(g["offset"]))

    def fiducial(self) -> FiducialSpec:
        f = self.data["fiducial"]
        return FiducialSpec(np.asarray(f["center"], dtype=float), tuple(f["edge_radii"]), tuple(f["intensity_levels"]))

    @property
    def revolutions(self) -> int:
        return int(self.data["revolutions"])

    def detector(self) -> DetectorConfig:
        return DetectorConfig(**{k: _tupled(v) for k, v in self.data["detector"].items()})

    def brackets(self) -> ScoreBrackets:
        s = self.data["scoring"]
        return ScoreBrackets(tuple(tuple(b) for b in s["brackets"]), max_points=int(s["max_points"]))

    def validation(self) -> ValidationConfig:
        return ValidationConfig(**self.data["validation"])

    def calibration(self) -> dict[str, RigidTransform]:
        return {
            str(frame): _transform(entry, f"calibration.{frame}")
            for frame, entry in sorted(self.data["calibration"].items())
        }

    @property
    def max_gap(self) -> float:
        return float(self.data["evaluation"]["max_gap"])

    @property
    def multi_alignment(self) -> str:
        return self.data["evaluation"]["multi_alignment"]

    def with_overrides(self, overrides: Mapping[str, Any]) -> RunConfig:
        return RunConfig.from_dict(_merge(self.data, overrides))
