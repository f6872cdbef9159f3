"""Hierarchical neural point-process model.

Lower level: an encoder LSTM reads the previous session, a decoder LSTM
(initialised from the encoder's final state) emits the next session's
activity types through a softmax and their inter-activity durations through
an exponential-affine intensity head.  Upper level: an LSTM over a week's
sessions consumes projected first/last encoder states and predicts session
gaps and session durations with two more intensity heads.

All durations are divided by corpus-level scales before entering the
network; public prediction methods return seconds.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .errors import ContractError, DimensionError, ValidationError
from .nn import LstmState, LstmWeights, lstm_step, zero_state
from .sessions import LOGOFF_TYPES, N_TYPES, Session, WeekSequence, encoder_durations, taxonomy_hash
from .tpp import TppParams, log_density_graph, mean_duration

LOWER_PARAMS = ("embed", "time_weight", "enc.wx", "enc.wh", "enc.b", "dec.wx", "dec.wh",
                "dec.b", "mark.w", "head.v", "head.u", "head.b")
UPPER_PARAMS = ("upper.U", "upper.wx", "upper.wh", "upper.b", "gap.v", "gap.u", "gap.b",
                "dur.v", "dur.u", "dur.b")


@dataclass(frozen=True)
class ModelConfig:
    n_types: int = N_TYPES
    embed_dim: int = 50
    hidden_dim: int = 100
    upper_input_dim: int = 100
    upper_hidden_dim: int = 100
    time_scale: float = 1.0      # seconds per model unit, inter-activity durations
    gap_scale: float = 1.0       # seconds per model unit, session gaps
    duration_scale: float = 1.0  # seconds per model unit, session durations
    levels: str = "both"         # "both" or "lower"
    taxonomy: str = field(default_factory=taxonomy_hash)

    def __post_init__(self):
        for name in ("n_types", "embed_dim", "hidden_dim", "upper_input_dim", "upper_hidden_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        for name in ("time_scale", "gap_scale", "duration_scale"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.levels not in ("both", "lower"):
            raise ValidationError(f"levels must be 'both' or 'lower', got {self.levels!r}")

    def shapes(self) -> dict[str, tuple]:
        a, e, h = self.n_types, self.embed_dim, self.hidden_dim
        ui, uh = self.upper_input_dim, self.upper_hidden_dim
        return {
            "embed": (a, e), "time_weight": (e,),
            "enc.wx": (e, 4 * h), "enc.wh": (h, 4 * h), "enc.b": (4 * h,),
            "dec.wx": (e, 4 * h), "dec.wh": (h, 4 * h), "dec.b": (4 * h,),
            "mark.w": (a, h), "head.v": (h,), "head.u": (), "head.b": (),
            "upper.U": (ui, h),
            "upper.wx": (ui, 4 * uh), "upper.wh": (uh, 4 * uh), "upper.b": (4 * uh,),
            "gap.v": (uh,), "gap.u": (), "gap.b": (),
            "dur.v": (uh,), "dur.u": (), "dur.b": (),
        }


class PredictedSession(NamedTuple):
    types: list
    durations: list  # seconds; the first entry (session opener) is 0
    stop_reason: str  # "end-token" or "max-length"


class GapDurationPrediction(NamedTuple):
    gap: float | None       # seconds, None when the session has no predecessor
    duration: float         # seconds
    truncated: bool


class HierModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        shapes = config.shapes()
        if set(params) != set(shapes):
            raise ValidationError(f"parameter set mismatch: {sorted(set(params) ^ set(shapes))}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise DimensionError(f"{name} has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "HierModel":
        bound = 1.0 / np.sqrt(config.hidden_dim)
        params = {}
        for name, shape in config.shapes().items():
            params[name] = ad.parameter(rng.uniform(-bound, bound, shape), name)
        return cls(config, params)

    # parameter bookkeeping

    def parameters(self, group: str = "all") -> list[Tensor]:
        names = {"all": LOWER_PARAMS + UPPER_PARAMS, "lower": LOWER_PARAMS,
                 "upper": UPPER_PARAMS}[group]
        return [self.params[n] for n in names]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: self.params[n].value.copy() for n in LOWER_PARAMS + UPPER_PARAMS}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, v in state.items():
            self.params[n].value[...] = v

    def save(self, path, extra: dict | None = None) -> None:
        cfg = {"model": asdict(self.config)}
        cfg.update(extra or {})
        checkpoint.save_checkpoint(path, self.state_dict(), cfg)

    @classmethod
    def load(cls, path) -> tuple["HierModel", dict]:
        header, _ = checkpoint.load_checkpoint(path)
        config = ModelConfig(**header["model"])
        if config.taxonomy != taxonomy_hash():
            raise ValidationError(f"{path}: model was trained on a different activity taxonomy")
        _, tensors = checkpoint.load_checkpoint(path, config.shapes())
        params = {n: ad.parameter(v, n) for n, v in tensors.items()}
        return cls(config, params), header

    # sub-modules

    def _lstm(self, prefix) -> LstmWeights:
        p = self.params
        return LstmWeights(p[f"{prefix}.wx"], p[f"{prefix}.wh"], p[f"{prefix}.b"])

    @property
    def encoder(self) -> LstmWeights:
        return self._lstm("enc")

    @property
    def decoder(self) -> LstmWeights:
        return self._lstm("dec")

    @property
    def upper(self) -> LstmWeights:
        return self._lstm("upper")

    def head(self, name: str = "head") -> TppParams:
        p = self.params
        return TppParams(p[f"{name}.v"].value, float(p[f"{name}.u"].value),
                         float(p[f"{name}.b"].value))

    # lower level

    def embed(self, types, d) -> Tensor:
        """Input vector(s) ``w_t * d + W_em[type]``; ``d`` in model time units."""
        types = np.asarray(types, dtype=np.intp)
        if np.any((types < 0) | (types >= self.config.n_types)):
            raise ContractError(f"activity type id out of range: {types}")
        d = np.asarray(d, dtype=np.float64)
        if np.any(d < 0):
            raise ContractError("durations must be >= 0")
        rows = ad.take_rows(self.params["embed"], types)
        time_term = self.params["time_weight"] * (d[..., None] if d.ndim else d)
        return rows + time_term

    def _padded(self, sessions: Sequence[Session]):
        lengths = np.array([len(s) for s in sessions])
        width = lengths.max()
        types = np.zeros((len(sessions), width), dtype=np.intp)
        durs = np.zeros((len(sessions), width))
        scale = self.config.time_scale
        for i, s in enumerate(sessions):
            types[i, :len(s)] = s.types
            durs[i, :len(s)] = encoder_durations(s) / scale
        return types, durs, lengths

    def encode_batch(self, sessions: Sequence[Session]):
        """Run the encoder over a batch; returns (h_first, final LstmState)."""
        if any(len(s) == 0 for s in sessions):
            raise ContractError("cannot encode an empty session")
        types, durs, lengths = self._padded(sessions)
        w = self.encoder
        state = zero_state(w.hidden_dim, len(sessions))
        h_first = None
        for j in range(types.shape[1]):
            new = lstm_step(self.embed(types[:, j], durs[:, j]), state, w)
            live = (j < lengths)[:, None]
            if live.all():
                state = new
            else:
                state = LstmState(ad.where_mask(live, new.hidden, state.hidden),
                                  ad.where_mask(live, new.cell, state.cell))
            if j == 0:
                h_first = state.hidden
        return h_first, state

    def encode_session(self, s: Session):
        """Encoder pass over one session: (h_first, h_last, all hidden states)."""
        if len(s) == 0:
            raise ContractError("cannot encode an empty session")
        w = self.encoder
        state = zero_state(w.hidden_dim)
        hidden = []
        d = encoder_durations(s) / self.config.time_scale
        for a, dj in zip(s.types, d):
            state = lstm_step(self.embed(a, dj), state, w)
            hidden.append(state.hidden.value.copy())
        return hidden[0], hidden[-1], hidden

    def decoder_step(self, prev_type, prev_d, state: LstmState | None):
        """Advance the decoder one event; returns (state', mark logits, hidden)."""
        if state is None:
            raise ContractError("decoder state is not initialised (encode the previous session first)")
        state = lstm_step(self.embed(prev_type, prev_d), state, self.decoder)
        logits = state.hidden @ self.params["mark.w"].T
        return state, logits, state.hidden

    def _decoder_start(self, prevs: Sequence[Session]):
        _, state = self.encode_batch(prevs)
        scale = self.config.time_scale
        first_types = np.array([s.types[-1] for s in prevs])
        first_d = np.array([encoder_durations(s)[-1] / scale for s in prevs])
        return state, first_types, first_d

    def _time_base(self, hidden: Tensor, name="head") -> Tensor:
        return hidden @ self.params[f"{name}.v"] + self.params[f"{name}.b"]

    def session_nll_batch(self, prevs: Sequence[Session], curs: Sequence[Session]) -> Tensor:
        """Summed teacher-forced negative log-likelihood of ``curs`` given ``prevs``.

        Step 0 is fed the previous session's last event and predicts the
        first type of the current session (no time term: its timing belongs
        to the session gap).  Step j >= 1 is fed event j - 1 and predicts the
        type and inter-activity duration of event j.
        """
        if len(prevs) != len(curs) or not curs:
            raise ContractError("prevs and curs must be equally long and non-empty")
        if any(len(c) < 2 for c in curs):
            raise ContractError("target sessions need at least two events")
        state, in_types, in_d = self._decoder_start(prevs)
        types, durs, lengths = self._padded(curs)
        total = None
        for j in range(types.shape[1]):
            if j > 0:
                in_types, in_d = types[:, j - 1], durs[:, j - 1]
            state, logits, hidden = self.decoder_step(in_types, in_d, state)
            live = (j < lengths).astype(np.float64)
            term = ad.pick(ad.log_softmax(logits), types[:, j])
            if j > 0:
                term = term + log_density_graph(self._time_base(hidden), self.params["head.u"],
                                                durs[:, j])
            term = ad.sum(term * live)
            total = term if total is None else total + term
        return -total

    def session_nll(self, prev: Session, cur: Session) -> Tensor:
        return self.session_nll_batch([prev], [cur])

    def decode_session(self, prev: Session, max_len: int = 200) -> PredictedSession:
        """Greedy free-running decode of the session following ``prev``."""
        if max_len < 1:
            raise ContractError("max_len must be >= 1")
        head = self.head()
        types, durations = [], []
        stop = "max-length"
        with ad.no_grad():
            state, in_types, in_d = self._decoder_start([prev])
            a, d = int(in_types[0]), float(in_d[0])
            for j in range(max_len):
                state, logits, hidden = self.decoder_step([a], [d], state)
                a = int(np.argmax(logits.value[0]))
                if j == 0:
                    d = 0.0
                else:
                    d = mean_duration(head.base(hidden.value[0]), head.u).mean
                types.append(a)
                durations.append(d * self.config.time_scale)
                if a in LOGOFF_TYPES:
                    stop = "end-token"
                    break
        return PredictedSession(types, durations, stop)

    def teacher_forced_durations(self, prev: Session, cur: Session) -> np.ndarray:
        """Expected inter-activity durations (seconds) aligned with ``cur``'s gaps."""
        head = self.head()
        out = []
        with ad.no_grad():
            state, in_types, in_d = self._decoder_start([prev])
            types, durs, _ = self._padded([cur])
            for j in range(len(cur)):
                if j > 0:
                    in_types, in_d = types[:, j - 1], durs[:, j - 1]
                state, _, hidden = self.decoder_step(in_types, in_d, state)
                if j > 0:
                    out.append(mean_duration(head.base(hidden.value[0]), head.u).mean)
        return np.asarray(out) * self.config.time_scale

    # upper level

    def upper_inputs(self, h_last_prev, h_first_cur):
        """Project encoder states into upper-LSTM inputs: (U h_last_prev, U h_first_cur)."""
        U = self.params["upper.U"]
        for name, h in (("h_last_prev", h_last_prev), ("h_first_cur", h_first_cur)):
            if np.shape(ad.as_tensor(h).value)[-1] != U.shape[1]:
                raise DimensionError(f"{name} has dim {np.shape(ad.as_tensor(h).value)[-1]}, "
                                     f"expected {U.shape[1]}")
        return ad.as_tensor(h_last_prev) @ U.T, ad.as_tensor(h_first_cur) @ U.T

    def encoder_summaries(self, sessions: Sequence[Session], batch_size: int = 256):
        """Frozen (no-grad) first and last encoder hidden states, one row per session."""
        firsts, lasts = [], []
        with ad.no_grad():
            for i in range(0, len(sessions), batch_size):
                h_first, state = self.encode_batch(sessions[i:i + batch_size])
                firsts.append(h_first.value)
                lasts.append(state.hidden.value)
        if not firsts:
            h = self.config.hidden_dim
            return np.zeros((0, h)), np.zeros((0, h))
        return np.concatenate(firsts), np.concatenate(lasts)

    def _week_steps(self, week: WeekSequence, summaries: dict):
        """Interleaved (encoder state, kind, target) steps for one week."""
        steps = []
        prev = week.previous
        for s, gap in zip(week.sessions, week.gaps):
            if gap is not None:
                if prev is None:
                    raise ContractError(f"week {week.user}/{week.week} has a gap but no previous session")
                steps.append((summaries[id(prev)][1], "gap", gap / self.config.gap_scale))
            steps.append((summaries[id(s)][0], "dur", s.duration / self.config.duration_scale))
            prev = s
        return steps

    def week_summaries(self, weeks: Sequence[WeekSequence]) -> dict:
        sessions, seen = [], set()
        for w in weeks:
            for s in ((w.previous,) if w.previous is not None else ()) + tuple(w.sessions):
                if id(s) not in seen:
                    seen.add(id(s))
                    sessions.append(s)
        firsts, lasts = self.encoder_summaries(sessions)
        return {id(s): (firsts[i], lasts[i]) for i, s in enumerate(sessions)}

    def inter_session_nll_batch(self, weeks: Sequence[WeekSequence],
                                summaries: dict | None = None) -> Tensor:
        """Summed negative log-likelihood of session gaps and durations.

        Encoder states enter as constants, so no gradient reaches the lower level.
        """
        if not weeks:
            raise ContractError("no weeks given")
        if summaries is None:
            summaries = self.week_summaries(weeks)
        seqs = [self._week_steps(w, summaries) for w in weeks]
        width = max(len(s) for s in seqs)
        H = self.config.hidden_dim
        inputs = np.zeros((len(seqs), width, H))
        gap_mask = np.zeros((len(seqs), width))
        dur_mask = np.zeros((len(seqs), width))
        targets = np.zeros((len(seqs), width))
        for i, seq in enumerate(seqs):
            for j, (h, kind, target) in enumerate(seq):
                inputs[i, j] = h
                (gap_mask if kind == "gap" else dur_mask)[i, j] = 1.0
                targets[i, j] = target
        w = self.upper
        U = self.params["upper.U"]
        state = zero_state(w.hidden_dim, len(seqs))
        total = None
        for j in range(width):
            x = Tensor(inputs[:, j]) @ U.T
            state = lstm_step(x, state, w)
            term = None
            for name, mask in (("gap", gap_mask[:, j]), ("dur", dur_mask[:, j])):
                if not mask.any():
                    continue
                lp = log_density_graph(self._time_base(state.hidden, name),
                                       self.params[f"{name}.u"], targets[:, j])
                lp = ad.sum(lp * mask)
                term = lp if term is None else term + lp
            total = term if total is None else total + term
        if total is None:
            raise ContractError("weeks contain no targets")
        return -total

    def inter_session_nll(self, week: WeekSequence) -> Tensor:
        if week.n_gaps == 0:
            raise ContractError(f"week {week.user}/{week.week} has no defined session gap")
        return self.inter_session_nll_batch([week])

    def predict_week(self, week: WeekSequence, summaries: dict | None = None
                     ) -> list[GapDurationPrediction]:
        """Expected gap and duration (seconds) for every session of a week.

        Each prediction only uses sessions before it plus the current
        session's first event.
        """
        if summaries is None:
            summaries = self.week_summaries([week])
        gap_head, dur_head = self.head("gap"), self.head("dur")
        w = self.upper
        U = self.params["upper.U"]
        out = []
        with ad.no_grad():
            state = zero_state(w.hidden_dim)
            pending_gap, truncated = None, False
            for h, kind, _ in self._week_steps(week, summaries):
                state = lstm_step(Tensor(h) @ U.T, state, w)
                hv = state.hidden.value
                if kind == "gap":
                    est = mean_duration(gap_head.base(hv), gap_head.u)
                    pending_gap, truncated = est.mean * self.config.gap_scale, est.truncated
                else:
                    est = mean_duration(dur_head.base(hv), dur_head.u)
                    out.append(GapDurationPrediction(pending_gap,
                                                     est.mean * self.config.duration_scale,
                                                     truncated or est.truncated))
                    pending_gap, truncated = None, False
        return out

    def predict_gap_and_duration(self, week: WeekSequence, index: int) -> GapDurationPrediction:
        return self.predict_week(week)[index]
