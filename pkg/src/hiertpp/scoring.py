"""Fraudulent sub-scores, their combination, and FraudReport CSV I/O."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ValidationError
from .ingest import Calendar, weekly_sequences
from .sessions import Session, group_by_user, inter_activity_durations

SCORE_NAMES = ("score_a", "score_t", "score_d", "score_delta")
DEFAULT_ALPHAS = (1.0, 0.0, 1.0, 1.0)
HOUR = 3600.0
REPORT_COLUMNS = ("user", "k", "score_a", "score_t", "score_d", "score_delta", "fs", "label")


def _ngrams(seq, n) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(reference: Sequence, hypothesis: Sequence, max_n: int = 4) -> float:
    """Sentence BLEU with add-one smoothing of zero-match precisions.

    Orders 1..min(max_n, len(hypothesis)) contribute with equal weight;
    brevity penalty is min(1, exp(1 - len(reference) / len(hypothesis))).
    """
    reference, hypothesis = list(reference), list(hypothesis)
    if not reference or not hypothesis:
        raise ContractError("bleu needs non-empty reference and hypothesis")
    orders = min(max_n, len(hypothesis))
    log_p = 0.0
    for n in range(1, orders + 1):
        hyp, ref = _ngrams(hypothesis, n), _ngrams(reference, n)
        total = sum(hyp.values())
        matched = sum((hyp & ref).values())
        if matched == 0:
            matched, total = 1, total + 1
        log_p += math.log(matched / total)
    bp = min(1.0, math.exp(1.0 - len(reference) / len(hypothesis)))
    return bp * math.exp(log_p / orders)


def score_activity_types(observed, predicted) -> float:
    obs = observed.types if isinstance(observed, Session) else observed
    pred = getattr(predicted, "types", predicted)
    return 1.0 - bleu(list(obs), list(pred), 4)


def score_activity_time(observed, predicted) -> float:
    observed, predicted = np.asarray(observed, float), np.asarray(predicted, float)
    if observed.shape != predicted.shape:
        raise ContractError(f"length mismatch: {observed.shape} vs {predicted.shape}")
    if observed.size == 0:
        return 0.0
    return float(np.mean(np.abs(observed - predicted)))


def score_gap(observed: float, predicted: float) -> float:
    return abs(predicted - observed)


score_duration = score_gap


@dataclass
class Standardizer:
    """Robust (median / IQR) rescaling of the time-based sub-scores."""
    median: dict
    iqr: dict

    @classmethod
    def fit(cls, reports: Sequence["FraudReport"]) -> "Standardizer":
        med, iqr = {}, {}
        for name in SCORE_NAMES[1:]:
            vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
            if vals.size == 0:
                med[name], iqr[name] = 0.0, 1.0
                continue
            q1, q2, q3 = np.percentile(vals, [25, 50, 75])
            med[name] = float(q2)
            iqr[name] = float(q3 - q1) if q3 - q1 > 1e-12 else 1.0
        return cls(med, iqr)

    def transform(self, name: str, value: float) -> float:
        if name == "score_a":
            return value
        return (value - self.median[name]) / self.iqr[name]

    def to_dict(self) -> dict:
        return {"median": dict(self.median), "iqr": dict(self.iqr)}


def combine(scores: Sequence[float], alphas: Sequence[float] = DEFAULT_ALPHAS,
            standardizer: Standardizer | None = None) -> float:
    """Weighted fraudulent score over (score_a, score_t, score_d, score_delta)."""
    if len(alphas) != 4 or len(scores) != 4:
        raise ValidationError("combine expects four scores and four weights")
    if any(a < 0 for a in alphas):
        raise ValidationError(f"weights must be >= 0, got {list(alphas)}")
    total = 0.0
    for name, a, s in zip(SCORE_NAMES, alphas, scores):
        if a:
            total += a * (standardizer.transform(name, s) if standardizer else s)
    return total


@dataclass
class FraudReport:
    user: str
    k: int
    score_a: float
    score_t: float
    score_d: float
    score_delta: float
    fs: float = 0.0
    label: str = "unknown"

    @property
    def scores(self) -> tuple:
        return (self.score_a, self.score_t, self.score_d, self.score_delta)


def raw_reports(model, sessions: Iterable[Session], max_len: int = 200,
                calendar: Calendar = Calendar()) -> list[FraudReport]:
    """Sub-scores for every session that has a predecessor (fs left at 0).

    Time-based scores are in hours.
    """
    out = []
    both = model.config.levels == "both"
    for user, user_sessions in group_by_user(sessions).items():
        preds = {}
        if both:
            weeks = weekly_sequences(user_sessions, calendar)
            summaries = model.week_summaries(weeks)
            for w in weeks:
                for s, p in zip(w.sessions, model.predict_week(w, summaries)):
                    preds[id(s)] = p
        for prev, cur in zip(user_sessions, user_sessions[1:]):
            decoded = model.decode_session(prev, max_len)
            s_a = score_activity_types(cur, decoded)
            s_t = score_activity_time(inter_activity_durations(cur),
                                      model.teacher_forced_durations(prev, cur)) / HOUR
            s_d = s_delta = 0.0
            if both:
                p = preds[id(cur)]
                s_d = score_duration(cur.duration, p.duration) / HOUR
                s_delta = score_gap(cur.start - prev.end, p.gap) / HOUR
            out.append(FraudReport(user, cur.k, s_a, s_t, s_d, s_delta, 0.0, cur.label))
    return out


def finalize(reports: Sequence[FraudReport], alphas=DEFAULT_ALPHAS,
             standardizer: Standardizer | None = None) -> list[FraudReport]:
    for r in reports:
        r.fs = combine(r.scores, alphas, standardizer)
    return list(reports)


def score_sessions(model, sessions, max_len=200, alphas=DEFAULT_ALPHAS,
                   standardizer: Standardizer | None = None,
                   calendar: Calendar = Calendar()) -> list[FraudReport]:
    return finalize(raw_reports(model, sessions, max_len, calendar), alphas, standardizer)


def write_reports(path, reports: Iterable[FraudReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([r.user, r.k] + [repr(float(getattr(r, c))) for c in REPORT_COLUMNS[2:7]]
                       + [r.label])


def read_reports(path) -> list[FraudReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(REPORT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        return [FraudReport(row["user"], int(row["k"]),
                            *(float(row[c]) for c in REPORT_COLUMNS[2:7]), row["label"])
                for row in reader]
