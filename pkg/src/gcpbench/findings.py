"""Diagnostic records shared by the parsers and the submission checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Finding:
    severity: str
    code: str
    message: str
    timestamp: Optional[float] = None
    line: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


def sort_findings(findings) -> list[Finding]:
    """Order by timestamp (untimed first), then code, then line number."""
    return sorted(
        findings,
        key=lambda f: (
            f.timestamp is not None,
            f.timestamp if f.timestamp is not None else 0.0,
            f.code,
            f.line if f.line is not None else -1,
            f.message,
        ),
    )
