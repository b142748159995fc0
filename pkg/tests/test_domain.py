import io
import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trustlds.domain import (
    CollectionComplexity as C1,
    ContractError,
    EngagementEvent,
    EnvironmentParams,
    HumanAction as AH,
    LogFormatError,
    Outcome,
    RobotAction as AR,
    TrackingComplexity as C2,
    TrialRecord,
    TrustEvent,
    classify_engagement_event,
    classify_trust_event,
    engagement_events,
    experience_of,
    group_by_participant,
    read_log,
    reward_collection,
    reward_tracking,
    write_log,
)

AUTO, ASK = AR.ATTEMPT_AUTONOMOUS, AR.SEEK_ASSISTANCE
RELY, INT = AH.RELY, AH.INTERRUPT
SUC, FAIL = Outcome.SUCCESS, Outcome.FAILURE


def valid_collection_combos():
    yield ASK, None, None
    yield AUTO, INT, None
    yield AUTO, RELY, SUC
    yield AUTO, RELY, FAIL


@pytest.mark.parametrize("args, expected", [
    ((C1.LOW, AUTO, RELY, SUC), 1),
    ((C1.LOW, AUTO, RELY, FAIL), 2),
    ((C1.LOW, ASK, None, None), 3),
    ((C1.HIGH, AUTO, RELY, SUC), 4),
    ((C1.HIGH, AUTO, RELY, FAIL), 5),
    ((C1.HIGH, ASK, None, None), 6),
    ((C1.HIGH, AUTO, INT, None), 7),
    ((C1.LOW, AUTO, INT, None), 7),
])
def test_trust_event_table(args, expected):
    assert classify_trust_event(*args) == expected


@pytest.mark.parametrize("args", [
    (C1.HIGH, ASK, None, SUC),
    (C1.HIGH, ASK, RELY, None),
    (C1.LOW, AUTO, None, None),
    (C1.LOW, AUTO, INT, FAIL),
    (C1.LOW, AUTO, RELY, None),
])
def test_inconsistent_combination_raises(args):
    with pytest.raises(ContractError):
        classify_trust_event(*args)
    with pytest.raises(ContractError):
        reward_collection(*args[1:])


@pytest.mark.parametrize("args, expected", [
    ((C2.SLOW, ASK, SUC), 1),
    ((C2.NORMAL, ASK, SUC), 2),
    ((C2.SLOW, ASK, FAIL), 3),
    ((C2.NORMAL, ASK, FAIL), 4),
    ((C2.SLOW, AUTO, SUC), 5),
    ((C2.NORMAL, AUTO, SUC), 6),
    ((C2.SLOW, AUTO, FAIL), 7),
    ((C2.NORMAL, AUTO, FAIL), 8),
])
def test_engagement_event_table(args, expected):
    assert classify_engagement_event(*args) == expected


def test_classification_is_exhaustive_and_exclusive():
    seen = {}
    for c1 in C1:
        for combo in valid_collection_combos():
            seen[(c1, *combo)] = classify_trust_event(c1, *combo)
    assert set(seen.values()) == set(TrustEvent)
    phis = {classify_engagement_event(c2, a, e) for c2, a, e in itertools.product(C2, AR, Outcome)}
    assert phis == set(EngagementEvent)


def test_experience_rule():
    assert experience_of(ASK, None, None) is SUC
    assert experience_of(AUTO, INT, None) is FAIL
    assert experience_of(AUTO, RELY, SUC) is SUC
    assert experience_of(AUTO, RELY, FAIL) is FAIL


def test_collection_rewards():
    assert reward_collection(AUTO, RELY, SUC) == 3
    assert reward_collection(ASK, None, None) == 1
    assert reward_collection(AUTO, INT, None) == 0
    assert reward_collection(AUTO, RELY, FAIL) == -4
    assert {reward_collection(*c) for c in valid_collection_combos()} == {3, 1, 0, -4}


def test_tracking_rewards():
    assert reward_tracking(C2.NORMAL, 82) == 0.5
    assert reward_tracking(C2.SLOW, 89) == 0.25
    assert reward_tracking(C2.NORMAL, 74.9) == 0
    assert reward_tracking(C2.SLOW, 75.0) == 0.25
    for bad in (-0.1, 100.5, float("nan")):
        with pytest.raises(ContractError):
            reward_tracking(C2.SLOW, bad)


@given(st.floats(0, 100), st.sampled_from(list(C2)))
def test_tracking_reward_range(p, c2):
    assert reward_tracking(c2, p) in {0.0, 0.25, 0.5}


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=7, max_size=7), st.integers(1, 7))
def test_one_hot_selects_coefficient(row, i):
    ev = TrustEvent(i)
    v = ev.one_hot()
    assert v.sum() == 1 and len(v) == 7
    assert np.dot(row, v) == row[i - 1]
    assert TrustEvent.from_one_hot(v) is ev


@given(st.integers(1, 8))
def test_engagement_one_hot_bijection(i):
    ev = EngagementEvent(i)
    assert EngagementEvent.from_one_hot(ev.one_hot()) is ev and ev.one_hot().shape == (8,)


def test_enum_codes_round_trip():
    for cls in (C1, C2, AR, AH, Outcome):
        for member in cls:
            assert cls.parse(member.code) is member
    with pytest.raises(ValueError):
        C1.parse("medium")


def test_environment_params_validated():
    env = EnvironmentParams()
    assert (env.p_suc_low, env.p_suc_high) == (0.96, 0.75)
    assert env.p_suc(C1.HIGH) == 0.75
    with pytest.raises(ContractError):
        EnvironmentParams(beta1=1.5)


def _records():
    return [
        TrialRecord("P1", 1, C1.LOW, C2.SLOW, AUTO, RELY, SUC, 7.25, 80.5),
        TrialRecord("P1", 2, C1.HIGH, C2.NORMAL, ASK, None, None, None, 66.0),
        TrialRecord("P1", 3, C1.HIGH, C2.NORMAL, AUTO, INT, None, 6.0, 91.0),
        TrialRecord("P2", 1, C1.HIGH, C2.SLOW, AUTO, RELY, FAIL, 0.1 + 0.2, 100.0),
    ]


def test_record_invariants():
    with pytest.raises(ContractError):
        TrialRecord("P", 1, C1.LOW, C2.SLOW, ASK, RELY, None, None, 50.0)
    with pytest.raises(ContractError):
        TrialRecord("P", 1, C1.LOW, C2.SLOW, ASK, None, None, None, 101.0)
    with pytest.raises(ContractError):
        TrialRecord("P", 0, C1.LOW, C2.SLOW, ASK, None, None, None, 50.0)


def test_log_round_trip_is_exact(tmp_path):
    recs = _records()
    path = tmp_path / "log.csv"
    write_log(recs, path)
    back = read_log(path)
    assert back == recs
    buf = io.StringIO()
    write_log(recs, buf)
    assert buf.getvalue() == path.read_text()
    assert path.read_text().splitlines()[0] == "participant_id,trial,c1,c2,a_r,a_h,outcome,y_trust,p_track"


def test_read_log_reports_row_number():
    text = ("participant_id,trial,c1,c2,a_r,a_h,outcome,y_trust,p_track\n"
            "P1,1,L,slow,auto,rely,succ,7,80\n"
            "P1,2,L,slow,ask,rely,,7,80\n")
    with pytest.raises(LogFormatError) as err:
        read_log(io.StringIO(text))
    assert err.value.row == 2
    with pytest.raises(LogFormatError, match="missing header"):
        read_log(io.StringIO(""))
    with pytest.raises(LogFormatError, match="missing columns"):
        read_log(io.StringIO("participant_id,trial\nP1,1\n"))


def test_extra_columns_ignored_and_grouping():
    buf = io.StringIO()
    recs = _records()
    write_log(recs, buf, extra=[{"truth": float(i)} for i in range(len(recs))])
    buf.seek(0)
    back = read_log(buf)
    assert back == recs
    groups = group_by_participant(back)
    assert list(groups) == ["P1", "P2"] and len(groups["P1"]) == 3


def test_engagement_events_chain():
    recs = _records()[:3]
    # trial 1 defaults to Success; assistance counts as Success; interrupt as Failure
    assert engagement_events(recs) == [EngagementEvent(5), EngagementEvent(2), EngagementEvent(6)]
    assert engagement_events(recs, first_experience=FAIL)[0] == EngagementEvent(7)
