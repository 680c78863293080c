from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pairscale.core import (
    ComparisonRecord,
    Covariates,
    Outcome,
    PairTask,
    ScaledScores,
    WinTally,
    read_roster,
    validate_roster,
    write_roster,
)
from pairscale.errors import (
    DuplicateId,
    EmptyRoster,
    InvalidCovariate,
    NonPositiveCovariate,
    ValidationError,
)


def agency_rows(n):
    return [
        {"id": f"Agency {k}", "annual_budget": str(1e6 * (k + 1)), "total_staff": str(10 * (k + 1)),
         "layoff": str(k % 2), "external_score": str(k / 10)}
        for k in range(n)
    ]


def test_roster_of_123_agencies():
    assert len(validate_roster(agency_rows(123))) == 123


def test_duplicate_row_rejected():
    rows = agency_rows(3)
    with pytest.raises(DuplicateId):
        validate_roster(rows + [rows[1]])


def test_duplicate_after_normalization():
    rows = [{"id": "Peace Corps"}, {"id": "  Peace Corps "}]
    with pytest.raises(DuplicateId):
        validate_roster(rows)


def test_nfc_normalization():
    [e] = validate_roster([{"id": "Agence d'e\u0301tat "}])
    assert e.id == "Agence d'\u00e9tat"


@pytest.mark.parametrize("field", ["total_staff", "annual_budget"])
def test_zero_covariate_rejected(field):
    row = agency_rows(1)[0] | {field: "0"}
    with pytest.raises(NonPositiveCovariate):
        validate_roster([row])


def test_layoff_must_be_binary():
    with pytest.raises(InvalidCovariate):
        validate_roster([agency_rows(1)[0] | {"layoff": "2"}])


def test_empty_roster():
    with pytest.raises(EmptyRoster):
        validate_roster([])


def test_optional_covariates_absent():
    [e] = validate_roster([{"id": "NASA", "annual_budget": "", "total_staff": None}])
    assert e.covariates == Covariates()


def test_validation_is_idempotent():
    once = validate_roster(agency_rows(5))
    assert validate_roster(once) == once


def test_roster_file_round_trip(tmp_path):
    entities = validate_roster(agency_rows(4))
    path = tmp_path / "roster.csv"
    write_roster(entities, path)
    assert read_roster(path) == entities


def test_roster_file_requires_header(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("Peace Corps,1,2\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_roster(path)


def test_pair_task_rejects_self_pair():
    with pytest.raises(ValidationError):
        PairTask("A", "A", "x")


def test_record_json_round_trip():
    rec = ComparisonRecord(PairTask("B", "A", "ideology-liberal", 2), Outcome.TIE, "s1 ü", "Tie",
                           "m", datetime(2025, 5, 12, 3, 4, 5, 6, tzinfo=timezone.utc))
    assert ComparisonRecord.from_dict(rec.to_dict()) == rec
    assert rec.to_dict()["timestamp"] == "2025-05-12T03:04:05.000006Z"
    assert rec.cache_key == ("ideology-liberal", "m", ("A", "B"), 2)


def test_tally_validation():
    with pytest.raises(ValidationError):
        WinTally(("A", "B"), [[1, 0], [0, 0]])
    with pytest.raises(ValidationError):
        WinTally(("A", "B"), [[0, -1], [0, 0]])
    t = WinTally(("A", "B"), [[0, 2], [1, 0]])
    assert not t.wins.flags.writeable


def test_scores_require_mean_zero():
    with pytest.raises(ValidationError):
        ScaledScores(("A", "B"), [1.0, 0.0], [1, 1], [0, 0], [1, 1], True, 1, 0.0)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_flip_negates_and_swaps(values):
    lam = np.array(values) - np.mean(values)
    se = np.full(len(lam), 0.3)
    s = ScaledScores(tuple(map(str, range(len(lam)))), lam, se, lam - 1, lam + 1, True, 1, 0.0)
    f = s.flipped()
    assert np.array_equal(f.lam, -s.lam)
    assert np.array_equal(f.ci_low, -s.ci_high)
    assert np.array_equal(f.ci_high, -s.ci_low)
