"""Finite-difference gradient suites for the LSTM cell and both training losses."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .ingest import weekly_sequences
from .model import HierModel, ModelConfig
from .nn import init_lstm, lstm_step, zero_state
from .sessions import N_TYPES, ActivityType as T, Session

TOLERANCE = 1e-4
SMALL = dict(embed_dim=3, hidden_dim=4, upper_input_dim=3, upper_hidden_dim=4)


def random_session(rng, user: str, k: int, start: float, n_events: int,
                   label: str = "benign") -> Session:
    """Logon, random interior types, Logoff; gaps of a few minutes."""
    interior = rng.integers(4, N_TYPES, size=n_events - 2).tolist()
    types = [int(T.WEEKDAY_LOGON)] + interior + [int(T.LOGOFF)]
    times = start + np.concatenate([[0.0], np.cumsum(rng.uniform(10.0, 900.0, n_events - 1))])
    return Session(user, k, tuple(zip(times.tolist(), types)), label)


def small_model(rng, levels: str = "both") -> HierModel:
    cfg = ModelConfig(**SMALL, time_scale=300.0, gap_scale=3600.0 * 12, duration_scale=3600.0,
                      levels=levels)
    return HierModel.init(cfg, rng)


def lstm_suite(seed: int) -> float:
    rng = np.random.default_rng(seed)
    w = init_lstm(rng, 3, 4, "cell")
    xs = rng.normal(size=(4, 3))

    def loss():
        state = zero_state(4)
        for x in xs:
            state = lstm_step(x, state, w)
        return ad.sum(state.hidden * state.hidden) + ad.sum(state.cell)

    return ad.grad_check(loss, list(w))


def lower_suite(seed: int, n_events: int = 5) -> float:
    """Intra-session NLL of one random session given a random predecessor."""
    rng = np.random.default_rng(seed)
    model = small_model(rng, "lower")
    prev = random_session(rng, "u", 1, 1.0e9, 4)
    cur = random_session(rng, "u", 2, 1.0e9 + 86_400.0, n_events)
    return ad.grad_check(lambda: model.session_nll(prev, cur), model.parameters("lower"))


def upper_suite(seed: int, n_sessions: int = 3) -> float:
    """Inter-session NLL of one random week (lower level frozen)."""
    rng = np.random.default_rng(seed)
    model = small_model(rng, "both")
    monday = 1262563200.0  # 2010-01-04 00:00 UTC
    sessions = [random_session(rng, "u", k + 1, monday + 86_400.0 * k + 30_000.0,
                               int(rng.integers(3, 6))) for k in range(n_sessions + 1)]
    week = weekly_sequences(sessions)[0]
    # drop the very first session so every step of the checked week has a gap
    week = type(week)(week.user, week.week, week.sessions[1:], week.gaps[1:], week.sessions[0])
    return ad.grad_check(lambda: model.inter_session_nll(week), model.parameters("upper"))


SUITES = {"lstm": lstm_suite, "intra_session": lower_suite, "inter_session": upper_suite}


def run_suites(seeds) -> dict[str, float]:
    """Worst relative error per suite over the given seeds."""
    return {name: max(fn(int(s)) for s in seeds) for name, fn in SUITES.items()}
