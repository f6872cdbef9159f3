"""CERT-style log parsing, sessionization and weekly grouping."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping
from zoneinfo import ZoneInfo

from .errors import ValidationError
from .sessions import (LOGOFF_TYPES, LOGON_TYPES, ActivityType as T, Event, Session,
                       WeekSequence, group_by_user)

log = logging.getLogger(__name__)

SOURCES = ("logon", "device", "file", "email", "http")
REQUIRED_COLUMNS = {
    "logon": {"date", "user", "activity"},
    "device": {"date", "user", "activity"},
    "file": {"date", "user", "activity"},
    "email": {"date", "user", "activity", "to", "from"},
    "http": {"date", "user"},
}
DATE_FORMATS = ("%m/%d/%Y %H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S")


@dataclass(frozen=True)
class Calendar:
    """Work-hours window and timezone used to split logon/connect events."""
    work_start: int = 8
    work_end: int = 17
    timezone: str = "UTC"

    @property
    def tz(self):
        return timezone.utc if self.timezone == "UTC" else ZoneInfo(self.timezone)

    def local(self, t: float) -> datetime:
        return datetime.fromtimestamp(t, tz=self.tz)

    def period(self, t: float) -> str:
        dt = self.local(t)
        if dt.weekday() >= 5:
            return "weekend"
        return "weekday" if self.work_start <= dt.hour < self.work_end else "afterhour"

    def logon_type(self, t: float) -> T:
        return {"weekday": T.WEEKDAY_LOGON, "afterhour": T.AFTERHOUR_WEEKDAY_LOGON,
                "weekend": T.WEEKEND_LOGON}[self.period(t)]

    def connect_type(self, t: float) -> T:
        return {"weekday": T.WEEKDAY_DEVICE_CONNECT,
                "afterhour": T.AFTERHOUR_WEEKDAY_DEVICE_CONNECT,
                "weekend": T.WEEKEND_DEVICE_CONNECT}[self.period(t)]

    def iso_week(self, t: float) -> str:
        year, week, _ = self.local(t).isocalendar()
        return f"{year}-W{week:02d}"

    def parse_time(self, text: str) -> float:
        text = text.strip()
        for fmt in DATE_FORMATS:
            try:
                dt = datetime.strptime(text, fmt)
            except ValueError:
                continue
            return dt.replace(tzinfo=self.tz).timestamp()
        raise ValueError(f"unparseable timestamp {text!r}")

    def format_time(self, t: float) -> str:
        return self.local(t).strftime(DATE_FORMATS[0])


@dataclass
class IngestStats:
    rows: int = 0
    malformed_rows: int = 0
    ill_formed_sessions: int = 0
    dropped_sessions: int = 0
    dropped_events: int = 0
    per_source: dict = field(default_factory=dict)


def _is_internal(address: str, domain: str) -> bool:
    return address.strip().lower().endswith("@" + domain.lower())


def _classify(source: str, row: Mapping[str, str], t: float, cal: Calendar,
              internal_domain: str) -> T:
    activity = (row.get("activity") or "").strip()
    key = activity.lower()
    if source == "logon":
        if key == "logon":
            return cal.logon_type(t)
        if key == "logoff":
            return T.LOGOFF
    elif source == "device":
        if key == "connect":
            return cal.connect_type(t)
        if key == "disconnect":
            return T.DISCONNECT_DEVICE
    elif source == "http":
        key = key.removeprefix("www ").strip()
        http = {"": T.WWW_VISIT, "visit": T.WWW_VISIT, "download": T.WWW_DOWNLOAD,
                "upload": T.WWW_UPLOAD}
        if key in http:
            return http[key]
    elif source == "email":
        if key == "send":
            recipients = [a for col in ("to", "cc", "bcc")
                          for a in (row.get(col) or "").split(";") if a.strip()]
            internal = all(_is_internal(a, internal_domain) for a in recipients)
            return T.SEND_INTERNAL_EMAIL if internal else T.SEND_EXTERNAL_EMAIL
        if key == "view":
            internal = _is_internal(row.get("from") or "", internal_domain)
            return T.VIEW_INTERNAL_EMAIL if internal else T.VIEW_EXTERNAL_EMAIL
    elif source == "file":
        verb = key.removeprefix("file ").strip()
        files = {"open": T.OPEN_FILE, "copy": T.COPY_FILE, "write": T.WRITE_FILE,
                 "delete": T.DELETE_FILE}
        if verb in files:
            return files[verb]
    raise ValidationError(f"{source}.csv: unknown operation {activity!r}")


def _source_of(path: Path) -> str:
    stem = path.stem.lower()
    for source in SOURCES:
        if stem.startswith(source):
            return source
    raise ValidationError(f"cannot tell log source from file name {path.name}")


def resolve_log_paths(paths) -> dict[str, Path]:
    """Accept a directory, a list of CSV paths, or a ``{source: path}`` mapping."""
    if isinstance(paths, Mapping):
        return {s: Path(p) for s, p in paths.items()}
    if isinstance(paths, (str, Path)) and Path(paths).is_dir():
        found = sorted(Path(paths).glob("*.csv"))
    else:
        found = [Path(p) for p in ([paths] if isinstance(paths, (str, Path)) else paths)]
    out = {}
    for p in found:
        try:
            out[_source_of(p)] = p
        except ValidationError:
            log.warning("ignoring %s: not a recognised log file", p)
    return out


def parse_logs(paths, calendar: Calendar = Calendar(), internal_domain: str = "dtaa.com",
               stats: IngestStats | None = None) -> dict[str, list[Event]]:
    """Join log files into one time-sorted event stream per user (users sorted).

    Equal timestamps keep source order (logon, device, file, email, http) and
    then row order.
    """
    stats = stats if stats is not None else IngestStats()
    files = resolve_log_paths(paths)
    if not files:
        raise ValidationError(f"no log files found in {paths}")
    streams: dict[str, list[Event]] = {}
    for source in SOURCES:
        if source not in files:
            continue
        path = files[source]
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = set(reader.fieldnames or ())
            missing = REQUIRED_COLUMNS[source] - header
            if missing:
                raise ValidationError(f"{path}: header lacks columns {sorted(missing)}")
            count = 0
            for row in reader:
                stats.rows += 1
                user = (row.get("user") or "").strip()
                try:
                    if not user:
                        raise ValueError("empty user")
                    t = calendar.parse_time(row.get("date") or "")
                except ValueError as exc:
                    stats.malformed_rows += 1
                    log.warning("%s:%d skipped: %s", path.name, reader.line_num, exc)
                    continue
                streams.setdefault(user, []).append(
                    Event(t, int(_classify(source, row, t, calendar, internal_domain))))
                count += 1
            stats.per_source[source] = count
    return {u: sorted(streams[u], key=lambda e: e.time) for u in sorted(streams)}


def sessionize(events: Iterable[Event], user: str = "", label: str = "unknown",
               stats: IngestStats | None = None) -> list[Session]:
    """Split a sorted event stream into Logon..Logoff sessions.

    A Logon while a session is open closes it implicitly; events outside any
    Logon..Logoff run are gathered into an ill-formed session that ends at the
    next Logon or Logoff.  Sessions with fewer than two events are dropped.
    """
    stats = stats if stats is not None else IngestStats()
    runs: list[list[Event]] = []
    current: list[Event] | None = None
    last_time = float("-inf")
    for e in events:
        if e.time < last_time:
            raise ValidationError(f"events for user {user!r} are not sorted")
        last_time = e.time
        if e.type in LOGON_TYPES:
            if current:
                runs.append(current)
            current = [e]
        elif e.type in LOGOFF_TYPES:
            (current if current is not None else (current := [])).append(e)
            runs.append(current)
            current = None
        else:
            (current if current is not None else (current := [])).append(e)
    if current:
        runs.append(current)

    sessions = []
    for run in runs:
        if len(run) < 2:
            stats.dropped_sessions += 1
            stats.dropped_events += len(run)
            continue
        s = Session(user, len(sessions) + 1, tuple(run), label)
        if not s.well_formed:
            stats.ill_formed_sessions += 1
        sessions.append(s)
    return sessions


def ingest(paths, calendar: Calendar = Calendar(), internal_domain: str = "dtaa.com",
           labels: Mapping[tuple, str] | None = None) -> tuple[list[Session], IngestStats]:
    stats = IngestStats()
    out = []
    for user, events in parse_logs(paths, calendar, internal_domain, stats).items():
        for s in sessionize(events, user, stats=stats):
            label = (labels or {}).get((s.user, s.k))
            out.append(s if label is None else Session(s.user, s.k, s.events, label))
    log.info("ingested %d sessions from %d rows (%d malformed, %d ill-formed, %d dropped)",
             len(out), stats.rows, stats.malformed_rows, stats.ill_formed_sessions,
             stats.dropped_sessions)
    return out, stats


def weekly_sequences(sessions: Iterable[Session], calendar: Calendar = Calendar()
                     ) -> list[WeekSequence]:
    """Bucket each user's sessions by ISO week of their first event.

    Gaps are measured from the user's true previous session, which may lie in
    an earlier week.
    """
    out = []
    for user, user_sessions in group_by_user(sessions).items():
        buckets: dict[str, list[int]] = {}
        for i, s in enumerate(user_sessions):
            buckets.setdefault(calendar.iso_week(s.start), []).append(i)
        for week in sorted(buckets, key=lambda w: buckets[w][0]):
            idx = buckets[week]
            gaps = tuple(None if i == 0 else float(user_sessions[i].start - user_sessions[i - 1].end)
                         for i in idx)
            prev = user_sessions[idx[0] - 1] if idx[0] > 0 else None
            out.append(WeekSequence(user, week, tuple(user_sessions[i] for i in idx), gaps, prev))
    return out


def write_labels(path, sessions: Iterable[Session]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "k", "label"])
        for s in sessions:
            w.writerow([s.user, s.k, s.label])


def read_labels(path) -> dict[tuple, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(row["user"], int(row["k"])): row["label"] for row in csv.DictReader(fh)}


_CERT_HEADERS = {
    "logon": ["id", "date", "user", "pc", "activity"],
    "device": ["id", "date", "user", "pc", "file_tree", "activity"],
    "file": ["id", "date", "user", "pc", "filename", "activity", "to_removable_media",
             "from_removable_media", "content"],
    "email": ["id", "date", "user", "pc", "to", "cc", "bcc", "from", "activity", "size",
              "attachments", "content"],
    "http": ["id", "date", "user", "pc", "url", "activity", "content"],
}


def write_cert_logs(sessions: Iterable[Session], out_dir, calendar: Calendar = Calendar(),
                    internal_domain: str = "dtaa.com") -> dict[str, Path]:
    """Render sessions as CERT r6.2-style CSV files (inverse of ``parse_logs``).

    Event times must be whole seconds for the rendering to be lossless.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: dict[str, list[list]] = {s: [] for s in SOURCES}
    internal, external = f"colleague@{internal_domain}", "contact@example.org"
    for s in sessions:
        me = f"{s.user.lower()}@{internal_domain}"
        pc = f"PC-{s.user}"
        for e in s.events:
            date = calendar.format_time(e.time)
            a = T(e.type)
            rid = f"{{{s.user}-{s.k}-{len(rows['logon']) + len(rows['http'])}}}"
            if a in LOGON_TYPES or a == T.LOGOFF:
                rows["logon"].append([rid, date, s.user, pc, "Logoff" if a == T.LOGOFF else "Logon"])
            elif a in (T.WEEKDAY_DEVICE_CONNECT, T.AFTERHOUR_WEEKDAY_DEVICE_CONNECT,
                       T.WEEKEND_DEVICE_CONNECT):
                rows["device"].append([rid, date, s.user, pc, "R:\\", "Connect"])
            elif a == T.DISCONNECT_DEVICE:
                rows["device"].append([rid, date, s.user, pc, "", "Disconnect"])
            elif a in (T.OPEN_FILE, T.COPY_FILE, T.WRITE_FILE, T.DELETE_FILE):
                verb = {T.OPEN_FILE: "Open", T.COPY_FILE: "Copy", T.WRITE_FILE: "Write",
                        T.DELETE_FILE: "Delete"}[a]
                rows["file"].append([rid, date, s.user, pc, "R:\\report.doc", f"File {verb}",
                                     "True", "False", ""])
            elif a in (T.SEND_INTERNAL_EMAIL, T.SEND_EXTERNAL_EMAIL):
                to = internal if a == T.SEND_INTERNAL_EMAIL else external
                rows["email"].append([rid, date, s.user, pc, to, "", "", me, "Send", 1000, "", ""])
            elif a in (T.VIEW_INTERNAL_EMAIL, T.VIEW_EXTERNAL_EMAIL):
                sender = internal if a == T.VIEW_INTERNAL_EMAIL else external
                rows["email"].append([rid, date, s.user, pc, me, "", "", sender, "View", 1000, "", ""])
            else:
                verb = {T.WWW_VISIT: "Visit", T.WWW_DOWNLOAD: "Download", T.WWW_UPLOAD: "Upload"}[a]
                rows["http"].append([rid, date, s.user, pc, "http://example.org", f"WWW {verb}", ""])
    paths = {}
    for source, source_rows in rows.items():
        path = out_dir / f"{source}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_CERT_HEADERS[source])
            w.writerows(source_rows)
        paths[source] = path
    return paths
