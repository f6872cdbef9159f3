"""Activity taxonomy and the session data model, plus Session JSONL I/O."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

from .errors import ContractError, ValidationError


class ActivityType(IntEnum):
    WEEKDAY_LOGON = 0
    AFTERHOUR_WEEKDAY_LOGON = 1
    WEEKEND_LOGON = 2
    LOGOFF = 3
    SEND_INTERNAL_EMAIL = 4
    SEND_EXTERNAL_EMAIL = 5
    VIEW_INTERNAL_EMAIL = 6
    VIEW_EXTERNAL_EMAIL = 7
    WWW_VISIT = 8
    WWW_DOWNLOAD = 9
    WWW_UPLOAD = 10
    WEEKDAY_DEVICE_CONNECT = 11
    AFTERHOUR_WEEKDAY_DEVICE_CONNECT = 12
    WEEKEND_DEVICE_CONNECT = 13
    DISCONNECT_DEVICE = 14
    OPEN_FILE = 15
    COPY_FILE = 16
    WRITE_FILE = 17
    DELETE_FILE = 18

    @property
    def label(self) -> str:
        return TYPE_NAMES[self]


TYPE_NAMES = (
    "Weekday Logon",
    "Afterhour Weekday Logon",
    "Weekend Logon",
    "Logoff",
    "Send Internal Email",
    "Send External Email",
    "View Internal Email",
    "View External Email",
    "WWW Visit",
    "WWW Download",
    "WWW Upload",
    "Weekday Device Connect",
    "Afterhour Weekday Device Connect",
    "Weekend Device Connect",
    "Disconnect Device",
    "Open doc/jpg/txt/zip File",
    "Copy doc/jpg/txt/zip File",
    "Write doc/jpg/txt/zip File",
    "Delete doc/jpg/txt/zip File",
)
N_TYPES = len(TYPE_NAMES)
LOGON_TYPES = frozenset({ActivityType.WEEKDAY_LOGON, ActivityType.AFTERHOUR_WEEKDAY_LOGON,
                         ActivityType.WEEKEND_LOGON})
LOGOFF_TYPES = frozenset({ActivityType.LOGOFF})
LABELS = ("benign", "malicious", "unknown")


def taxonomy_hash() -> str:
    return hashlib.sha256("\n".join(TYPE_NAMES).encode()).hexdigest()[:16]


class Event(NamedTuple):
    time: float
    type: int


@dataclass(frozen=True)
class Session:
    user: str
    k: int
    events: tuple
    label: str = "unknown"
    _times: np.ndarray = field(init=False, repr=False, compare=False)
    _types: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        events = tuple(Event(float(t), int(a)) for t, a in self.events)
        if not events:
            raise ContractError(f"session {self.user}/{self.k} has no events")
        for e in events:
            if not 0 <= e.type < N_TYPES:
                raise ContractError(f"unknown activity type id {e.type}")
            if not np.isfinite(e.time):
                raise ContractError(f"non-finite event time in session {self.user}/{self.k}")
        if self.label not in LABELS:
            raise ValidationError(f"unknown label {self.label!r}")
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "_times", np.array([e.time for e in events]))
        object.__setattr__(self, "_types", np.array([e.type for e in events], dtype=np.intp))

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def types(self) -> np.ndarray:
        return self._types

    @property
    def start(self) -> float:
        return self._times[0]

    @property
    def end(self) -> float:
        return self._times[-1]

    @property
    def duration(self) -> float:
        return float(self._times[-1] - self._times[0])

    @property
    def well_formed(self) -> bool:
        return (len(self.events) >= 2 and self.events[0].type in LOGON_TYPES
                and self.events[-1].type in LOGOFF_TYPES)

    def __len__(self):
        return len(self.events)


def inter_activity_durations(s: Session) -> np.ndarray:
    """Gaps between consecutive events, length ``len(s) - 1``."""
    d = np.diff(s.times)
    if np.any(d < 0):
        raise ContractError(f"session {s.user}/{s.k} has unsorted event times")
    return d


def encoder_durations(s: Session) -> np.ndarray:
    """Per-event duration inputs: 0 for the first event, then the gaps."""
    return np.concatenate([[0.0], inter_activity_durations(s)])


@dataclass(frozen=True)
class WeekSequence:
    """A user's sessions in one ISO week.

    ``gaps[i]`` is the time since the user's previous session (possibly in an
    earlier week) or ``None`` for the user's first session; ``previous`` is
    the session preceding ``sessions[0]``, if any.
    """
    user: str
    week: str
    sessions: tuple
    gaps: tuple
    previous: Optional[Session] = None

    def __len__(self):
        return len(self.sessions)

    @property
    def n_gaps(self) -> int:
        return sum(g is not None for g in self.gaps)


def session_to_dict(s: Session) -> dict:
    return {"user": s.user, "k": s.k, "label": s.label,
            "events": [{"t": e.time, "a": e.type} for e in s.events]}


def session_from_dict(obj: dict) -> Session:
    return Session(str(obj["user"]), int(obj["k"]),
                   tuple((e["t"], e["a"]) for e in obj["events"]), obj.get("label", "unknown"))


def dumps_session(s: Session) -> str:
    return json.dumps(session_to_dict(s), separators=(",", ":"))


def write_sessions(path, sessions: Iterable[Session]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(dumps_session(s))
            fh.write("\n")
            n += 1
    return n


def iter_sessions(path) -> Iterator[Session]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield session_from_dict(json.loads(line))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad session record ({exc})") from exc


def read_sessions(path) -> list[Session]:
    return list(iter_sessions(path))


def group_by_user(sessions: Iterable[Session]) -> dict[str, list[Session]]:
    """Sessions per user, sorted by (start time, k); users in sorted order."""
    out: dict[str, list[Session]] = {}
    for s in sessions:
        out.setdefault(s.user, []).append(s)
    return {u: sorted(out[u], key=lambda s: (s.start, s.k)) for u in sorted(out)}
