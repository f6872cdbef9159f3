"""Synthetic CERT-like session corpora.

Benign users log on every weekday morning and work through the day; their
interior activities arrive as a Hawkes process with types from a sticky
Markov chain.  Insiders keep that routine but add short evening or weekend
sessions with a different activity mix and a faster tempo.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .hawkes import HawkesParams, simulate_hawkes
from .ingest import Calendar, write_labels
from .sessions import ActivityType as T, Session, write_sessions

# interior activity categories; "device_connect" resolves to a time-dependent type
CATEGORIES = ("send_internal_email", "send_external_email", "view_internal_email",
              "view_external_email", "www_visit", "www_download", "www_upload",
              "device_connect", "disconnect_device", "open_file", "copy_file",
              "write_file", "delete_file")
_CATEGORY_TYPE = {
    "send_internal_email": T.SEND_INTERNAL_EMAIL, "send_external_email": T.SEND_EXTERNAL_EMAIL,
    "view_internal_email": T.VIEW_INTERNAL_EMAIL, "view_external_email": T.VIEW_EXTERNAL_EMAIL,
    "www_visit": T.WWW_VISIT, "www_download": T.WWW_DOWNLOAD, "www_upload": T.WWW_UPLOAD,
    "disconnect_device": T.DISCONNECT_DEVICE, "open_file": T.OPEN_FILE,
    "copy_file": T.COPY_FILE, "write_file": T.WRITE_FILE, "delete_file": T.DELETE_FILE,
}

BENIGN_MIXTURE = {
    "send_internal_email": 0.08, "send_external_email": 0.03, "view_internal_email": 0.14,
    "view_external_email": 0.05, "www_visit": 0.40, "www_download": 0.06, "www_upload": 0.01,
    "device_connect": 0.03, "disconnect_device": 0.03, "open_file": 0.07, "copy_file": 0.01,
    "write_file": 0.07, "delete_file": 0.02,
}
MALICIOUS_MIXTURE = {
    "send_internal_email": 0.03, "send_external_email": 0.10, "view_internal_email": 0.04,
    "view_external_email": 0.05, "www_visit": 0.15, "www_download": 0.08, "www_upload": 0.12,
    "device_connect": 0.10, "disconnect_device": 0.08, "open_file": 0.07, "copy_file": 0.12,
    "write_file": 0.03, "delete_file": 0.03,
}


@dataclass
class Profile:
    """Generator parameters for one population; rates are per hour."""
    mixture: dict = field(default_factory=lambda: dict(BENIGN_MIXTURE))
    stickiness: float = 0.3
    transition: list | None = None
    base_rate: float = 1.2
    excitation: float = 2.0
    decay: float = -4.0
    start_hour_mean: float = 8.5
    start_hour_sd: float = 0.6
    start_hour_range: tuple = (6.5, 11.0)
    duration_hours_mean: float = 8.5
    duration_hours_sd: float = 0.7
    duration_hours_range: tuple = (4.0, 11.0)
    weekend_prob: float = 0.0

    def mixture_vector(self) -> np.ndarray:
        unknown = set(self.mixture) - set(CATEGORIES)
        if unknown:
            raise ValidationError(f"unknown activity categories {sorted(unknown)}")
        return np.array([float(self.mixture.get(c, 0.0)) for c in CATEGORIES])

    def transition_matrix(self) -> np.ndarray:
        if self.transition is not None:
            return np.asarray(self.transition, dtype=np.float64)
        pi = self.mixture_vector()
        n = len(CATEGORIES)
        return (1.0 - self.stickiness) * np.tile(pi, (n, 1)) + self.stickiness * np.eye(n)

    def hawkes(self) -> HawkesParams:
        return HawkesParams(self.base_rate, self.excitation, self.decay)

    def validate(self, name: str) -> None:
        pi = self.mixture_vector()
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValidationError(f"{name}.mixture must be non-negative and sum to 1")
        P = self.transition_matrix()
        if P.shape != (len(CATEGORIES),) * 2:
            raise ValidationError(f"{name}.transition must be {len(CATEGORIES)}x{len(CATEGORIES)}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError(f"{name}.transition rows must be non-negative and sum to 1")
        if not 0.0 <= self.stickiness < 1.0:
            raise ValidationError(f"{name}.stickiness must be in [0, 1)")
        if not 0.0 <= self.weekend_prob <= 1.0:
            raise ValidationError(f"{name}.weekend_prob must be in [0, 1]")
        if not (self.start_hour_sd >= 0 and self.duration_hours_sd >= 0
                and self.duration_hours_range[0] > 0):
            raise ValidationError(f"{name}: spreads must be >= 0 and durations > 0")
        self.hawkes()


def _malicious_profile() -> Profile:
    return Profile(mixture=dict(MALICIOUS_MIXTURE), stickiness=0.3, base_rate=6.0,
                   excitation=3.0, decay=-6.0, start_hour_mean=21.0, start_hour_sd=1.2,
                   start_hour_range=(18.5, 23.5), duration_hours_mean=1.5,
                   duration_hours_sd=0.5, duration_hours_range=(0.3, 4.0), weekend_prob=0.3)


@dataclass
class SynthConfig:
    n_train_users: int = 100
    n_test_benign_users: int = 20
    n_malicious_users: int = 5
    train_sessions_per_user: int = 20
    test_sessions_per_user: int = 21
    malicious_sessions_per_user: int = 10
    start_date: str = "2010-01-04"
    timezone: str = "UTC"
    seed: int = 7
    benign: Profile = field(default_factory=Profile)
    malicious: Profile = field(default_factory=_malicious_profile)

    def validate(self) -> None:
        counts = {k: getattr(self, k) for k in ("n_train_users", "n_test_benign_users",
                                                 "n_malicious_users", "train_sessions_per_user",
                                                 "test_sessions_per_user",
                                                 "malicious_sessions_per_user")}
        for k, v in counts.items():
            if v < 0:
                raise ValidationError(f"{k} must be >= 0")
        if self.n_train_users < 1 or self.train_sessions_per_user < 2:
            raise ValidationError("need at least one training user with two sessions")
        if self.n_malicious_users and self.malicious_sessions_per_user >= self.test_sessions_per_user:
            raise ValidationError("malicious_sessions_per_user must be < test_sessions_per_user")
        self.benign.validate("benign")
        self.malicious.validate("malicious")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("benign", "malicious"):
            if key in d and isinstance(d[key], dict):
                base = Profile() if key == "benign" else _malicious_profile()
                merged = {**asdict(base), **d[key]}
                for rng_key in ("start_hour_range", "duration_hours_range"):
                    merged[rng_key] = tuple(merged[rng_key])
                d[key] = Profile(**merged)
        return cls(**d)


@dataclass
class SynthDataset:
    train: list
    test: list

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"train": out / "train.jsonl", "test": out / "test.jsonl",
                 "labels": out / "labels.csv"}
        write_sessions(paths["train"], self.train)
        write_sessions(paths["test"], self.test)
        write_labels(paths["labels"], self.test)
        return paths


class _Generator:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.cal = Calendar(timezone=cfg.timezone)
        self.rng = np.random.default_rng(cfg.seed)
        start = date.fromisoformat(cfg.start_date)
        self.origin = datetime(start.year, start.month, start.day, tzinfo=self.cal.tz).timestamp()
        self.first_day = start

    def day_start(self, day: date) -> float:
        return datetime(day.year, day.month, day.day, tzinfo=self.cal.tz).timestamp()

    def weekdays(self, n: int) -> list[date]:
        days, d = [], self.first_day
        while len(days) < n:
            if d.weekday() < 5:
                days.append(d)
            d += timedelta(days=1)
        return days

    def _clip_normal(self, mean, sd, lo_hi):
        return float(np.clip(self.rng.normal(mean, sd), *lo_hi))

    def categories(self, n: int, prof: Profile) -> list[str]:
        P = prof.transition_matrix()
        pi = prof.mixture_vector()
        out = []
        c = self.rng.choice(len(CATEGORIES), p=pi)
        for i in range(n):
            if i:
                c = self.rng.choice(len(CATEGORIES), p=P[c])
            out.append(CATEGORIES[c])
        return out

    def session_events(self, start: float, hours: float, prof: Profile) -> list[tuple]:
        """Logon at ``start``, Hawkes interior, Logoff; whole, strictly increasing seconds."""
        start = float(round(start))
        length = max(2, int(round(hours * 3600.0)))
        offsets = np.round(simulate_hawkes(prof.hawkes(), hours, self.rng) * 3600.0)
        kept, last = [], 0
        for off in offsets:
            off = max(int(off), last + 1)
            if off >= length:
                break
            kept.append(off)
            last = off
        cats = self.categories(len(kept), prof)
        events = [(start, int(self.cal.logon_type(start)))]
        for off, cat in zip(kept, cats):
            t = start + off
            a = self.cal.connect_type(t) if cat == "device_connect" else _CATEGORY_TYPE[cat]
            events.append((t, int(a)))
        events.append((start + length, int(T.LOGOFF)))
        return events

    def routine(self, n_sessions: int, prof: Profile) -> list[list[tuple]]:
        out = []
        for day in self.weekdays(n_sessions):
            hour = self._clip_normal(prof.start_hour_mean, prof.start_hour_sd, prof.start_hour_range)
            hours = self._clip_normal(prof.duration_hours_mean, prof.duration_hours_sd,
                                      prof.duration_hours_range)
            out.append(self.session_events(self.day_start(day) + hour * 3600.0, hours, prof))
        return out

    def insider_extras(self, routine: list[list[tuple]], n_extra: int, prof: Profile):
        """Extra sessions placed in evenings after routine days or on weekends."""
        days = self.weekdays(len(routine))
        evening_slots = list(range(1, len(days)))
        weekend_slots = sorted({days[i] + timedelta(days=5 - days[i].weekday() + w)
                                for i in range(1, len(days)) for w in (0, 1)})
        extras = []
        for _ in range(n_extra):
            use_weekend = weekend_slots and (self.rng.uniform() < prof.weekend_prob
                                             or not evening_slots)
            hour = self._clip_normal(prof.start_hour_mean, prof.start_hour_sd, prof.start_hour_range)
            hours = self._clip_normal(prof.duration_hours_mean, prof.duration_hours_sd,
                                      prof.duration_hours_range)
            if use_weekend:
                day = weekend_slots.pop(int(self.rng.integers(len(weekend_slots))))
                start = self.day_start(day) + hour * 3600.0
                limit = self.day_start(day + timedelta(days=1)) + 6 * 3600.0
            else:
                i = evening_slots.pop(int(self.rng.integers(len(evening_slots))))
                start = max(self.day_start(days[i]) + hour * 3600.0, routine[i][-1][0] + 1800.0)
                limit = self.day_start(days[i] + timedelta(days=1)) + 6 * 3600.0
            hours = min(hours, (limit - start) / 3600.0)
            extras.append(self.session_events(start, hours, prof))
        return extras


def _to_sessions(user: str, runs: list[tuple[list[tuple], str]]) -> list[Session]:
    runs = sorted(runs, key=lambda r: r[0][0][0])
    return [Session(user, k, tuple(events), label) for k, (events, label) in enumerate(runs, 1)]


def synth_generate(cfg: SynthConfig) -> SynthDataset:
    cfg.validate()
    gen = _Generator(cfg)
    train = []
    for i in range(cfg.n_train_users):
        runs = gen.routine(cfg.train_sessions_per_user, cfg.benign)
        train.extend(_to_sessions(f"U{i:04d}", [(r, "benign") for r in runs]))
    n_test = cfg.n_test_benign_users + cfg.n_malicious_users
    insiders = set(gen.rng.choice(n_test, size=cfg.n_malicious_users, replace=False).tolist())
    test = []
    for i in range(n_test):
        runs = [(r, "benign") for r in gen.routine(cfg.test_sessions_per_user, cfg.benign)]
        if i in insiders:
            extra = gen.insider_extras([r for r, _ in runs], cfg.malicious_sessions_per_user,
                                       cfg.malicious)
            runs += [(r, "malicious") for r in extra]
        test.extend(_to_sessions(f"T{i:04d}", runs))
    return SynthDataset(train, test)
