import json
import math

import numpy as np

from curvlab.reports import CheckReport, Gamma2Report, export_report, parse_reports


def test_empty_export():
    assert export_report([]) == "[]"
    assert parse_reports("[]") == []


def test_single_pass_report():
    text = export_report([CheckReport("mass", True, 0.0)])
    (rec,) = json.loads(text)
    assert rec["verdict"] == "pass" and rec["margin"] == "0"


def test_round_trip_is_lossless():
    rep = CheckReport("x", False, -1 / 3, witness=np.array([0.1, 0.2]), residuals=[1e-17, 2 / 7],
                      details={"tol": 1e-9, "n": 3, "label": "ok"})
    (back,) = parse_reports(export_report([rep]))
    assert back.name == "x" and not back.holds
    assert back.margin == rep.margin
    assert back.witness == [0.1, 0.2]
    assert back.residuals == rep.residuals
    assert back.details == {"label": "ok", "n": 3, "tol": 1e-9}


def test_gamma2_report_round_trip():
    rep = Gamma2Report("be", True, 0.5, pointwise_margins=[0.5, 1.0], worst_point=0)
    (back,) = parse_reports(export_report([rep]))
    assert isinstance(back, Gamma2Report)
    assert back.pointwise_margins == [0.5, 1.0] and back.worst_point == 0


def test_non_finite_values():
    rep = CheckReport("y", True, math.inf, residuals=[math.nan, -math.inf])
    (rec,) = json.loads(export_report([rep]))
    assert rec["margin"] == "inf" and rec["residuals"] == ["nan", "-inf"]
    (back,) = parse_reports(export_report([rep]))
    assert back.margin == math.inf and math.isnan(back.residuals[0])


def test_negative_zero_is_normalized():
    (rec,) = json.loads(export_report([CheckReport("z", True, -0.0)]))
    assert rec["margin"] == "0"


def test_export_is_deterministic():
    rep = CheckReport("d", True, 1.0, details={"b": 2.0, "a": 1.0})
    assert export_report([rep]) == export_report([rep])
    assert list(json.loads(export_report([rep]))[0]["details"]) == ["a", "b"]
