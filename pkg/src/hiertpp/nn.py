"""LSTM cell, initialisation, gradient clipping and the Adam update."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError


class LstmState(NamedTuple):
    hidden: Tensor
    cell: Tensor


class LstmWeights(NamedTuple):
    """Gate pre-activations are ``x @ wx + h @ wh + b`` with blocks (input, forget, output, candidate)."""
    wx: Tensor  # (input_dim, 4 * hidden_dim)
    wh: Tensor  # (hidden_dim, 4 * hidden_dim)
    b: Tensor   # (4 * hidden_dim,)

    @property
    def input_dim(self):
        return self.wx.shape[0]

    @property
    def hidden_dim(self):
        return self.wh.shape[0]


def init_lstm(rng: np.random.Generator, input_dim: int, hidden_dim: int, prefix: str) -> LstmWeights:
    bound = 1.0 / np.sqrt(hidden_dim)
    return LstmWeights(
        ad.parameter(rng.uniform(-bound, bound, (input_dim, 4 * hidden_dim)), f"{prefix}.wx"),
        ad.parameter(rng.uniform(-bound, bound, (hidden_dim, 4 * hidden_dim)), f"{prefix}.wh"),
        ad.parameter(rng.uniform(-bound, bound, 4 * hidden_dim), f"{prefix}.b"),
    )


def zero_state(hidden_dim: int, batch: int | None = None) -> LstmState:
    shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
    return LstmState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def _check_shapes(x: Tensor, state: LstmState, w: LstmWeights) -> None:
    n_in, n_hid = w.input_dim, w.hidden_dim
    if w.wx.shape != (n_in, 4 * n_hid):
        raise DimensionError(f"wx has shape {w.wx.shape}, expected {(n_in, 4 * n_hid)}")
    if w.wh.shape != (n_hid, 4 * n_hid):
        raise DimensionError(f"wh has shape {w.wh.shape}, expected {(n_hid, 4 * n_hid)}")
    if w.b.shape != (4 * n_hid,):
        raise DimensionError(f"b has shape {w.b.shape}, expected {(4 * n_hid,)}")
    if x.shape[-1] != n_in:
        raise DimensionError(f"x has trailing dim {x.shape[-1]}, expected input_dim {n_in}")
    if state.hidden.shape[-1] != n_hid:
        raise DimensionError(f"hidden has trailing dim {state.hidden.shape[-1]}, expected {n_hid}")
    if state.cell.shape != state.hidden.shape:
        raise DimensionError(f"cell shape {state.cell.shape} differs from hidden {state.hidden.shape}")


def lstm_step(x: Tensor, state: LstmState, w: LstmWeights) -> LstmState:
    """One step of the standard LSTM recurrence; works on vectors or row batches."""
    x = ad.as_tensor(x)
    _check_shapes(x, state, w)
    n = w.hidden_dim
    gates = x @ w.wx + state.hidden @ w.wh + w.b
    if gates.value.ndim == 1:
        blocks = [gates[k * n:(k + 1) * n] for k in range(4)]
    else:
        blocks = [gates[:, k * n:(k + 1) * n] for k in range(4)]
    i, f, o = (ad.sigmoid(blk) for blk in blocks[:3])
    candidate = ad.tanh(blocks[3])
    cell = f * state.cell + i * candidate
    return LstmState(o * ad.tanh(cell), cell)


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


@dataclass(frozen=True)
class AdamState:
    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def fresh(cls, shape, learning_rate=1e-3, **kw) -> "AdamState":
        return cls(0, np.zeros(shape), np.zeros(shape), learning_rate=learning_rate, **kw)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update.

    Entries whose gradient is exactly zero keep their parameter value and
    moments (lazy update), so a zero gradient never moves a parameter.
    """
    param, grad = np.asarray(param, dtype=np.float64), np.asarray(grad, dtype=np.float64)
    if not (param.shape == grad.shape == state.first_moment.shape == state.second_moment.shape):
        raise DimensionError(f"shape mismatch: param {param.shape}, grad {grad.shape}, "
                             f"moments {state.first_moment.shape}/{state.second_moment.shape}")
    step = state.step + 1
    live = grad != 0.0
    m = np.where(live, state.beta1 * state.first_moment + (1.0 - state.beta1) * grad,
                 state.first_moment)
    v = np.where(live, state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad,
                 state.second_moment)
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_param = np.where(live, param - update, param)
    return new_param, replace(state, step=step, first_moment=m, second_moment=v)


class Adam:
    """Adam over a list of parameter tensors, updated in place, with global-norm clipping."""

    def __init__(self, params: Sequence[Tensor], learning_rate=1e-3, clip_norm=5.0):
        self.params = list(params)
        self.clip_norm = clip_norm
        self.states = [AdamState.fresh(p.shape, learning_rate) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> float:
        if self.clip_norm is not None:
            grads, norm = clip_global_norm(grads, self.clip_norm)
        else:
            norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        for k, (p, g) in enumerate(zip(self.params, grads)):
            new, self.states[k] = adam_step(p.value, g, self.states[k])
            p.value[...] = new
        return norm
