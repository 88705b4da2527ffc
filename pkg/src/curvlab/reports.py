"""Structured verdicts returned by every inequality check, and their JSON form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class CheckReport:
    """Verdict of a numerical inequality check.

    Parameters
    ----------
    name : str
        Short identifier of the check.
    holds : bool
        True when the inequality holds everywhere it was tested.
    margin : float
        Worst (smallest) slack found; negative on failure.
    witness : object, optional
        Where the worst margin occurred (a point, a field, a time index).
    residuals : list of float
        Per-step or per-sample margins/residuals, in evaluation order.
    details : dict
        Additional scalar diagnostics (step sizes, tolerances, ...).
    """

    name: str
    holds: bool
    margin: float
    witness: Any = None
    residuals: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.holds else "fail"

    def __bool__(self) -> bool:
        return bool(self.holds)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "verdict": self.verdict,
            "margin": _fmt(self.margin),
            "witness": _encode(self.witness),
            "residuals": [_fmt(r) for r in self.residuals],
            "details": {k: _encode(self.details[k]) for k in sorted(self.details)},
        }
        return out


@dataclass
class Gamma2Report(CheckReport):
    """Bakry-Emery verdict with per-point eigenvalue margins."""

    pointwise_margins: list = field(default_factory=list)
    worst_point: int | None = None

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["pointwise_margins"] = [_fmt(v) for v in self.pointwise_margins]
        out["worst_point"] = self.worst_point
        return out


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % (x + 0.0)


def _encode(obj):
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj)
    if isinstance(obj, np.ndarray):
        return [_encode(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _encode(obj[k]) for k in sorted(obj, key=str)}
    return str(obj)


def export_report(reports) -> str:
    """Serialize reports to a JSON document with stable ordering.

    Floats are written as decimal strings with 17 significant digits so
    that a round trip through :func:`parse_reports` is lossless.
    """
    reports = list(reports)
    if not reports:
        return "[]"
    return json.dumps([r.to_dict() for r in reports], indent=1, ensure_ascii=False)


def _decode(obj):
    if isinstance(obj, str):
        try:
            return float(obj)
        except ValueError:
            return obj
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    return obj


def parse_reports(text: str) -> list:
    """Inverse of :func:`export_report`.

    Witnesses that were arrays come back as lists of floats.
    """
    out = []
    for rec in json.loads(text):
        kw = dict(
            name=rec["name"],
            holds=rec["verdict"] == "pass",
            margin=float(rec["margin"]),
            witness=_decode(rec["witness"]),
            residuals=[float(r) for r in rec["residuals"]],
            details=_decode(rec["details"]),
        )
        if "pointwise_margins" in rec:
            out.append(Gamma2Report(**kw,
                                    pointwise_margins=[float(v) for v in rec["pointwise_margins"]],
                                    worst_point=rec["worst_point"]))
        else:
            out.append(CheckReport(**kw))
    return out
