import json

import pytest

from ddurso.cases import desk6, random_desk
from ddurso.core import ValidationError
from ddurso.io import (
    CaseFormatError,
    case_from_dict,
    case_to_dict,
    dumps,
    dumps_report,
    load_case,
    save_case,
)
from ddurso.oracle import solve_exhaustive


@pytest.mark.parametrize("make", [desk6, lambda: random_desk(3), lambda: random_desk(11)])
def test_round_trip_is_identity(tmp_path, make):
    case = make()
    path = tmp_path / "case.json"
    save_case(case, path)
    back = load_case(path)
    assert case_to_dict(back) == case_to_dict(case)
    assert back.network == case.network
    assert dumps(case_to_dict(back)) == path.read_text()


def test_truncated_file_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(dumps(case_to_dict(desk6()))[:200])
    with pytest.raises(CaseFormatError, match=r"bad.json:\d+:\d+"):
        load_case(path)


def test_version_and_kind_checked():
    d = case_to_dict(desk6())
    with pytest.raises(CaseFormatError, match="format_version"):
        case_from_dict({**d, "format_version": 99})
    with pytest.raises(CaseFormatError, match="kind"):
        case_from_dict({**d, "kind": "report"})
    with pytest.raises(CaseFormatError, match="missing field"):
        case_from_dict({k: v for k, v in d.items() if k != "ddu"})
    with pytest.raises(CaseFormatError, match="unknown algorithm"):
        case_from_dict({**d, "algorithm": {"warp": 9}})


def test_probabilities_rejected_or_normalized():
    d = case_to_dict(desk6())
    for s in d["scenarios"]:
        s["probability"] = 1.0
    with pytest.raises(ValidationError):
        case_from_dict(d)
    case = case_from_dict(d, normalize=True)
    assert case.scenarios.probabilities.sum() == pytest.approx(1.0)


def test_report_is_strict_json_and_stable():
    case = random_desk(5)
    rep = solve_exhaustive(case.network, case.scenarios, case.ddu)
    a = dumps_report(rep, case_name="r5")
    b = dumps_report(solve_exhaustive(case.network, case.scenarios, case.ddu), case_name="r5")
    assert a == b
    d = json.loads(a)
    assert d["kind"] == "report" and d["format_version"] == 1
