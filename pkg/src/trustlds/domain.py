"""Shared value types, event encodings, rewards and the trial-log CSV format."""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

N_TRUST_EVENTS = 7
N_ENGAGEMENT_EVENTS = 8
TRACKING_THRESHOLD = 75.0

LOG_COLUMNS = ("participant_id", "trial", "c1", "c2", "a_r", "a_h", "outcome", "y_trust", "p_track")


class ContractError(ValueError):
    """An argument combination violates a documented precondition."""


class LogFormatError(ValueError):
    """A trial-log CSV could not be parsed; ``row`` is the 1-based data row."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class _Coded(enum.Enum):
    """Enum whose CSV spelling is its value."""

    @classmethod
    def parse(cls, text: str):
        try:
            return cls(text.strip())
        except ValueError:
            raise ValueError(f"{text!r} is not a valid {cls.__name__}") from None

    @property
    def code(self) -> str:
        return self.value


class CollectionComplexity(_Coded):
    LOW = "L"
    HIGH = "H"


class TrackingComplexity(_Coded):
    SLOW = "slow"
    NORMAL = "norm"


class RobotAction(_Coded):
    ATTEMPT_AUTONOMOUS = "auto"
    SEEK_ASSISTANCE = "ask"


class HumanAction(_Coded):
    RELY = "rely"
    INTERRUPT = "interrupt"


class Outcome(_Coded):
    SUCCESS = "succ"
    FAILURE = "fail"


class _OneHot(enum.IntEnum):
    @classmethod
    def size(cls) -> int:
        return len(cls)

    def one_hot(self) -> np.ndarray:
        v = np.zeros(len(type(self)))
        v[self.value - 1] = 1.0
        return v

    @classmethod
    def from_one_hot(cls, vec) -> "_OneHot":
        vec = np.asarray(vec)
        if vec.shape != (len(cls),) or not np.array_equal(np.sort(vec), np.r_[np.zeros(len(cls) - 1), 1.0]):
            raise ContractError(f"not a one-hot vector of length {len(cls)}: {vec!r}")
        return cls(int(np.argmax(vec)) + 1)

    @property
    def column(self) -> int:
        """Zero-based position in a coefficient row."""
        return self.value - 1


class TrustEvent(_OneHot):
    """θ¹..θ⁷: the collection-trial context that drives trust."""

    LOW_SUCCESS = 1
    LOW_FAILURE = 2
    LOW_ASSIST = 3
    HIGH_SUCCESS = 4
    HIGH_FAILURE = 5
    HIGH_ASSIST = 6
    INTERRUPT = 7


class EngagementEvent(_OneHot):
    """φ¹..φ⁸: tracking speed x robot action x previous experience."""

    SLOW_ASSIST_POS = 1
    NORM_ASSIST_POS = 2
    SLOW_ASSIST_NEG = 3
    NORM_ASSIST_NEG = 4
    SLOW_AUTO_POS = 5
    NORM_AUTO_POS = 6
    SLOW_AUTO_NEG = 7
    NORM_AUTO_NEG = 8


@dataclass(frozen=True)
class EnvironmentParams:
    """Success rates per complexity and the per-trial complexity mix."""

    p_suc_low: float = 0.96
    p_suc_high: float = 0.75
    beta1: float = 0.5
    beta2: float = 0.5

    def __post_init__(self):
        for name in ("p_suc_low", "p_suc_high", "beta1", "beta2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ContractError(f"{name}={v} outside [0, 1]")

    def p_suc(self, c1: CollectionComplexity) -> float:
        return self.p_suc_high if c1 is CollectionComplexity.HIGH else self.p_suc_low


def _check_collection_args(robot_action, human_action, outcome):
    if robot_action is RobotAction.SEEK_ASSISTANCE:
        if human_action is not None or outcome is not None:
            raise ContractError("assistance trials carry no human action or outcome")
        return
    if human_action is None:
        raise ContractError("autonomous attempts require a human action")
    if human_action is HumanAction.RELY and outcome is None:
        raise ContractError("relied autonomous attempts require an outcome")
    if human_action is HumanAction.INTERRUPT and outcome is not None:
        raise ContractError("interrupted attempts have no autonomous outcome")


def classify_trust_event(
    c1: CollectionComplexity,
    robot_action: RobotAction,
    human_action: Optional[HumanAction] = None,
    outcome: Optional[Outcome] = None,
) -> TrustEvent:
    _check_collection_args(robot_action, human_action, outcome)
    high = c1 is CollectionComplexity.HIGH
    if robot_action is RobotAction.SEEK_ASSISTANCE:
        return TrustEvent.HIGH_ASSIST if high else TrustEvent.LOW_ASSIST
    if human_action is HumanAction.INTERRUPT:
        return TrustEvent.INTERRUPT
    if outcome is Outcome.SUCCESS:
        return TrustEvent.HIGH_SUCCESS if high else TrustEvent.LOW_SUCCESS
    return TrustEvent.HIGH_FAILURE if high else TrustEvent.LOW_FAILURE


def classify_engagement_event(
    c2: TrackingComplexity, robot_action: RobotAction, prev_experience: Outcome
) -> EngagementEvent:
    index = 1
    if robot_action is RobotAction.ATTEMPT_AUTONOMOUS:
        index += 4
    if prev_experience is Outcome.FAILURE:
        index += 2
    if c2 is TrackingComplexity.NORMAL:
        index += 1
    return EngagementEvent(index)


def experience_of(robot_action: RobotAction, human_action: Optional[HumanAction], outcome: Optional[Outcome]) -> Outcome:
    """Resolve how a finished trial counts as "previous experience" for engagement.

    Assistance counts as a success and an interruption as a failure;
    otherwise the autonomous outcome is used.
    """
    _check_collection_args(robot_action, human_action, outcome)
    if robot_action is RobotAction.SEEK_ASSISTANCE:
        return Outcome.SUCCESS
    if human_action is HumanAction.INTERRUPT:
        return Outcome.FAILURE
    return outcome


def reward_collection(
    robot_action: RobotAction, human_action: Optional[HumanAction] = None, outcome: Optional[Outcome] = None
) -> float:
    _check_collection_args(robot_action, human_action, outcome)
    if robot_action is RobotAction.SEEK_ASSISTANCE:
        return 1.0
    if human_action is HumanAction.INTERRUPT:
        return 0.0
    return 3.0 if outcome is Outcome.SUCCESS else -4.0


def reward_tracking(c2: TrackingComplexity, p: float) -> float:
    if not (0.0 <= p <= 100.0) or math.isnan(p):
        raise ContractError(f"tracking score {p} outside [0, 100]")
    if p < TRACKING_THRESHOLD:
        return 0.0
    return 0.5 if c2 is TrackingComplexity.NORMAL else 0.25


@dataclass(frozen=True)
class TrialRecord:
    participant_id: str
    trial_index: int
    c1: CollectionComplexity
    c2: TrackingComplexity
    robot_action: RobotAction
    human_action: Optional[HumanAction]
    outcome: Optional[Outcome]
    trust_report: Optional[float]
    tracking_score: float

    def __post_init__(self):
        if self.trial_index < 1:
            raise ContractError(f"trial index must be positive, got {self.trial_index}")
        _check_collection_args(self.robot_action, self.human_action, self.outcome)
        if not (0.0 <= self.tracking_score <= 100.0):
            raise ContractError(f"tracking score {self.tracking_score} outside [0, 100]")

    @property
    def trust_event(self) -> TrustEvent:
        return classify_trust_event(self.c1, self.robot_action, self.human_action, self.outcome)

    @property
    def experience(self) -> Outcome:
        return experience_of(self.robot_action, self.human_action, self.outcome)

    @property
    def collection_reward(self) -> float:
        return reward_collection(self.robot_action, self.human_action, self.outcome)

    @property
    def tracking_reward(self) -> float:
        return reward_tracking(self.c2, self.tracking_score)

    def to_row(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "trial": str(self.trial_index),
            "c1": self.c1.code,
            "c2": self.c2.code,
            "a_r": self.robot_action.code,
            "a_h": "" if self.human_action is None else self.human_action.code,
            "outcome": "" if self.outcome is None else self.outcome.code,
            "y_trust": "" if self.trust_report is None else repr(float(self.trust_report)),
            "p_track": repr(float(self.tracking_score)),
        }

    @classmethod
    def from_row(cls, row: dict) -> "TrialRecord":
        def opt(text, parser):
            text = (text or "").strip()
            return None if text == "" else parser(text)

        return cls(
            participant_id=row["participant_id"].strip(),
            trial_index=int(row["trial"]),
            c1=CollectionComplexity.parse(row["c1"]),
            c2=TrackingComplexity.parse(row["c2"]),
            robot_action=RobotAction.parse(row["a_r"]),
            human_action=opt(row["a_h"], HumanAction.parse),
            outcome=opt(row["outcome"], Outcome.parse),
            trust_report=opt(row["y_trust"], float),
            tracking_score=float(row["p_track"]),
        )


def engagement_events(records: Sequence[TrialRecord], first_experience: Outcome = Outcome.SUCCESS) -> list:
    """φ events for one participant's ordered trials."""
    events = []
    prev = first_experience
    for rec in records:
        events.append(classify_engagement_event(rec.c2, rec.robot_action, prev))
        prev = rec.experience
    return events


def write_log(records: Iterable[TrialRecord], path_or_buf, extra: Sequence[dict] | None = None) -> None:
    """Write trial records as CSV; ``extra`` rows append additional columns."""
    records = list(records)
    extra_cols: list = []
    if extra:
        for row in extra:
            for k in row:
                if k not in extra_cols:
                    extra_cols.append(k)
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        writer = csv.DictWriter(fh, fieldnames=list(LOG_COLUMNS) + extra_cols, lineterminator="\n")
        writer.writeheader()
        for i, rec in enumerate(records):
            row = rec.to_row()
            if extra:
                row.update({k: _fmt(v) for k, v in extra[i].items()})
            writer.writerow(row)
    finally:
        if own:
            fh.close()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_log(source) -> list:
    """Parse a trial-log CSV (path or open text file) into TrialRecords.

    Columns beyond the standard header are ignored.
    """
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise LogFormatError("empty file: missing header")
    missing = [c for c in LOG_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise LogFormatError(f"header is missing columns {missing}")
    records = []
    for i, row in enumerate(reader, start=1):
        try:
            records.append(TrialRecord.from_row(row))
        except (ValueError, TypeError, KeyError) as exc:
            raise LogFormatError(str(exc), row=i) from exc
    return records


def group_by_participant(records: Iterable[TrialRecord]) -> dict:
    """Ordered ``participant_id -> records sorted by trial``."""
    out: dict = {}
    for rec in records:
        out.setdefault(rec.participant_id, []).append(rec)
    for pid, recs in out.items():
        recs.sort(key=lambda r: r.trial_index)
    return out
