"""Two-stage maximum-likelihood training.

Stage 1 fits the encoder/decoder on consecutive session pairs.  Stage 2
freezes every stage-1 tensor and fits the upper LSTM on weekly sequences.
Both stages use Adam with global-norm clipping and keep the parameters with
the best held-out negative log-likelihood.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NumericError, ValidationError
from .ingest import Calendar, weekly_sequences
from .model import LOWER_PARAMS, HierModel, ModelConfig
from .nn import Adam
from .scoring import Standardizer, raw_reports
from .sessions import Session, group_by_user, inter_activity_durations

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    upper_learning_rate: float = 1e-3
    epochs_lower: int = 15
    epochs_upper: int = 40
    batch_size: int = 32          # session pairs per Adam step
    upper_batch_size: int = 16    # weeks per Adam step
    patience: int = 4
    val_fraction: float = 0.1
    clip_norm: float = 5.0
    calibration_sessions: int = 300
    max_decode_len: int = 200

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.upper_learning_rate <= 0:
            raise ValidationError("learning rates must be > 0")
        if self.epochs_lower < 0 or self.epochs_upper < 0:
            raise ValidationError("epoch counts must be >= 0")
        if self.batch_size < 1 or self.upper_batch_size < 1:
            raise ValidationError("batch sizes must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError("val_fraction must be in [0, 1)")
        if self.max_decode_len < 1:
            raise ValidationError("max_decode_len must be >= 1")


@dataclass
class TrainResult:
    model: HierModel
    curve: list = field(default_factory=list)   # rows: stage, epoch, train_nll, val_nll
    stage1_state: dict = field(default_factory=dict)
    standardizer: Standardizer | None = None

    def checkpoint_extra(self) -> dict:
        return {"standardization": self.standardizer.to_dict() if self.standardizer else None}


def duration_scales(sessions) -> dict[str, float]:
    """Mean inter-activity duration, session gap and session duration (seconds)."""
    acts = np.concatenate([inter_activity_durations(s) for s in sessions] or [np.zeros(0)])
    gaps, durs = [], []
    for user_sessions in group_by_user(sessions).values():
        durs += [s.duration for s in user_sessions]
        gaps += [b.start - a.end for a, b in zip(user_sessions, user_sessions[1:])]

    def positive_mean(x):
        m = float(np.mean(x)) if len(x) else 0.0
        return m if m > 0 else 1.0

    return {"time_scale": positive_mean(acts), "gap_scale": positive_mean(gaps),
            "duration_scale": positive_mean(durs)}


def consecutive_pairs(sessions) -> list[tuple[Session, Session]]:
    return [(a, b) for user_sessions in group_by_user(sessions).values()
            for a, b in zip(user_sessions, user_sessions[1:]) if len(b) >= 2]


def split_users(sessions, fraction: float, rng) -> tuple[list, list]:
    users = sorted({s.user for s in sessions})
    n_val = int(math.ceil(fraction * len(users))) if fraction > 0 and len(users) > 1 else 0
    val_users = set(rng.permutation(users)[:n_val].tolist())
    train = [s for s in sessions if s.user not in val_users]
    val = [s for s in sessions if s.user in val_users]
    return train, val


def _batches(items, size, rng):
    order = rng.permutation(len(items))
    return [[items[i] for i in order[k:k + size]] for k in range(0, len(items), size)]


def _check_loss(value, stage, epoch):
    if not math.isfinite(value):
        raise NumericError(f"{stage}: non-finite loss {value} in epoch {epoch}")


def _fit(stage, params, loss_fn, train_items, val_items, epochs, batch_size, lr, clip,
         patience, rng, curve, count):
    """Generic Adam loop with early stopping on held-out NLL per target."""
    opt = Adam(params, learning_rate=lr, clip_norm=clip)
    n_train = max(1, sum(count(x) for x in train_items))
    n_val = max(1, sum(count(x) for x in val_items))

    def evaluate(items):
        total = 0.0
        with ad.no_grad():
            for k in range(0, len(items), 256):
                total += float(loss_fn(items[k:k + 256]).value)
        return total

    init_val = evaluate(val_items) / n_val if val_items else math.nan
    curve.append((stage, 0, evaluate(train_items) / n_train, init_val))
    best = init_val if val_items else math.inf
    best_state = [p.value.copy() for p in params]
    stale = 0
    for epoch in range(1, epochs + 1):
        total = 0.0
        for batch in _batches(train_items, batch_size, rng):
            value, grads = ad.forward_backward(lambda: loss_fn(batch), params)
            _check_loss(value, stage, epoch)
            opt.step(grads)
            total += value
        train_nll = total / n_train
        val_nll = evaluate(val_items) / n_val if val_items else math.nan
        _check_loss(train_nll, stage, epoch)
        curve.append((stage, epoch, train_nll, val_nll))
        log.info("%s epoch %d: train NLL %.5f, held-out NLL %.5f", stage, epoch, train_nll, val_nll)
        score = val_nll if val_items else train_nll
        if score < best:
            best, stale = score, 0
            best_state = [p.value.copy() for p in params]
        else:
            stale += 1
            if stale >= patience:
                break
    for p, v in zip(params, best_state):
        p.value[...] = v


def train_lower(model: HierModel, train, val, cfg: TrainConfig, rng, curve) -> None:
    pairs, val_pairs = consecutive_pairs(train), consecutive_pairs(val)
    if not pairs:
        raise ValidationError("training corpus has no consecutive session pairs")
    _fit("lower", model.parameters("lower"),
         lambda batch: model.session_nll_batch([a for a, _ in batch], [b for _, b in batch]),
         pairs, val_pairs, cfg.epochs_lower, cfg.batch_size, cfg.learning_rate, cfg.clip_norm,
         cfg.patience, rng, curve, count=lambda pair: 2 * len(pair[1]) - 1)


def train_upper(model: HierModel, train, val, cfg: TrainConfig, rng, curve,
                calendar: Calendar = Calendar()) -> None:
    weeks = weekly_sequences(train, calendar)
    val_weeks = weekly_sequences(val, calendar)
    summaries = model.week_summaries(weeks + val_weeks)
    _fit("upper", model.parameters("upper"),
         lambda batch: model.inter_session_nll_batch(batch, summaries),
         weeks, val_weeks, cfg.epochs_upper, cfg.upper_batch_size, cfg.upper_learning_rate,
         cfg.clip_norm, cfg.patience, rng, curve, count=lambda w: len(w) + w.n_gaps)


def train(sessions, model_cfg: ModelConfig, cfg: TrainConfig = TrainConfig(), seed: int = 0,
          calendar: Calendar = Calendar()) -> TrainResult:
    sessions = list(sessions)
    if not sessions:
        raise ValidationError("training corpus is empty")
    bad = [s for s in sessions if s.label == "malicious"]
    if bad:
        raise ValidationError(f"training corpus must be benign; found {len(bad)} malicious sessions")
    cfg.validate()
    rng = np.random.default_rng(seed)
    fit_sessions, val_sessions = split_users(sessions, cfg.val_fraction, rng)
    scales = duration_scales(fit_sessions)
    model_cfg = ModelConfig(**{**asdict(model_cfg), **scales})
    model = HierModel.init(model_cfg, rng)
    log.info("training on %d sessions (%d held out); scales %s", len(fit_sessions),
             len(val_sessions), scales)

    curve: list = []
    train_lower(model, fit_sessions, val_sessions, cfg, rng, curve)
    stage1 = {n: model.params[n].value.copy() for n in LOWER_PARAMS}
    if model_cfg.levels == "both":
        train_upper(model, fit_sessions, val_sessions, cfg, rng, curve, calendar)
        for n, v in stage1.items():
            if not np.array_equal(model.params[n].value, v):
                raise RuntimeError(f"stage-1 tensor {n} changed during stage 2")

    calib = val_sessions if val_sessions else fit_sessions
    calib = _calibration_subset(calib, cfg.calibration_sessions)
    standardizer = Standardizer.fit(raw_reports(model, calib, cfg.max_decode_len, calendar))
    return TrainResult(model, curve, stage1, standardizer)


def _calibration_subset(sessions, limit):
    """Whole users, in sorted order, until ``limit`` scorable sessions are covered."""
    out, covered = [], 0
    for user_sessions in group_by_user(sessions).values():
        if covered >= limit:
            break
        out.extend(user_sessions)
        covered += len(user_sessions) - 1
    return out
