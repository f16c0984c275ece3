"""LSTM, GRU and vanilla RNN cells on top of :mod:`lgstime.tensor`.

Every weight matrix has extent ``hidden x (hidden + input)`` and acts on the
concatenation ``[h_prev, x]`` in that order.  Rows of ``x`` and of the states
are independent sequences (a batch); a single sequence is a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError
from .tensor import Tensor, add, add_bias, concat, matmul, mul, parameter, sigmoid, tanh, transpose


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _Params:
    """Shared helpers for dataclasses whose fields are all tensors."""

    def parameters(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def hidden_size(self) -> int:
        return self.parameters()[self._first].shape[0]

    @property
    def input_size(self) -> int:
        w = self.parameters()[self._first]
        return w.shape[1] - w.shape[0]

    def _check(self) -> None:
        ps = self.parameters()
        ws = {k: v.shape for k, v in ps.items() if k.startswith("W")}
        bs = {k: v.shape for k, v in ps.items() if k.startswith("b")}
        if len(set(ws.values())) != 1 or len(set(bs.values())) != 1:
            raise DimensionError(f"{type(self).__name__}: inconsistent extents {ws} {bs}")
        (h, hx), = set(ws.values())
        if hx <= h or set(bs.values()) != {(h,)}:
            raise DimensionError(f"{type(self).__name__}: weights {ws} and biases {bs} disagree")


@dataclass
class LstmParams(_Params):
    W_f: Tensor
    W_i: Tensor
    W_c: Tensor
    W_o: Tensor
    b_f: Tensor
    b_i: Tensor
    b_c: Tensor
    b_o: Tensor
    _first = "W_f"

    def __post_init__(self):
        self._check()

    @classmethod
    def init(cls, input_size: int, hidden: int, rng: np.random.Generator) -> "LstmParams":
        fan_in = hidden + input_size
        ws = [parameter(uniform_init(rng, (hidden, fan_in), fan_in)) for _ in range(4)]
        bs = [parameter(np.zeros(hidden)) for _ in range(4)]
        return cls(*ws, *bs)

    @classmethod
    def zeros(cls, input_size: int, hidden: int) -> "LstmParams":
        fan_in = hidden + input_size
        return cls(*[parameter(np.zeros((hidden, fan_in))) for _ in range(4)],
                   *[parameter(np.zeros(hidden)) for _ in range(4)])


@dataclass
class GruParams(_Params):
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor
    _first = "W_z"

    def __post_init__(self):
        self._check()

    @classmethod
    def init(cls, input_size: int, hidden: int, rng: np.random.Generator) -> "GruParams":
        fan_in = hidden + input_size
        ws = [parameter(uniform_init(rng, (hidden, fan_in), fan_in)) for _ in range(3)]
        bs = [parameter(np.zeros(hidden)) for _ in range(3)]
        return cls(*ws, *bs)

    @classmethod
    def zeros(cls, input_size: int, hidden: int) -> "GruParams":
        fan_in = hidden + input_size
        return cls(*[parameter(np.zeros((hidden, fan_in))) for _ in range(3)],
                   *[parameter(np.zeros(hidden)) for _ in range(3)])


@dataclass
class RnnParams(_Params):
    W: Tensor
    b: Tensor
    _first = "W"

    def __post_init__(self):
        self._check()

    @classmethod
    def init(cls, input_size: int, hidden: int, rng: np.random.Generator) -> "RnnParams":
        fan_in = hidden + input_size
        return cls(parameter(uniform_init(rng, (hidden, fan_in), fan_in)),
                   parameter(np.zeros(hidden)))

    @classmethod
    def zeros(cls, input_size: int, hidden: int) -> "RnnParams":
        return cls(parameter(np.zeros((hidden, hidden + input_size))), parameter(np.zeros(hidden)))


@dataclass
class LstmState:
    h: Tensor
    C: Tensor
    # step-local intermediates, kept for inspection
    f: Tensor | None = None
    i: Tensor | None = None
    C_tilde: Tensor | None = None
    o: Tensor | None = None

    @classmethod
    def zeros(cls, hidden: int, batch: int = 1) -> "LstmState":
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


@dataclass
class GruState:
    h: Tensor
    z: Tensor | None = None
    r: Tensor | None = None
    h_tilde: Tensor | None = None

    @classmethod
    def zeros(cls, hidden: int, batch: int = 1) -> "GruState":
        return cls(Tensor(np.zeros((batch, hidden))))


def _check_step(hidden: int, input_size: int, h: Tensor, x: Tensor) -> None:
    if x.ndim != 2 or x.shape[1] != input_size:
        raise DimensionError(f"input rows {x.shape} do not have width {input_size}")
    if h.shape != (x.shape[0], hidden):
        raise DimensionError(f"state {h.shape} does not match ({x.shape[0]}, {hidden})")


def _gate(hx: Tensor, WT: Tensor, b: Tensor) -> Tensor:
    return add_bias(matmul(hx, WT), b)


def _lstm_step(WT: dict[str, Tensor], p: LstmParams, state: LstmState, x: Tensor) -> LstmState:
    hx = concat([state.h, x])
    f = sigmoid(_gate(hx, WT["f"], p.b_f))
    i = sigmoid(_gate(hx, WT["i"], p.b_i))
    C_tilde = tanh(_gate(hx, WT["c"], p.b_c))
    C = add(mul(f, state.C), mul(i, C_tilde))
    o = sigmoid(_gate(hx, WT["o"], p.b_o))
    h = mul(o, tanh(C))
    return LstmState(h, C, f, i, C_tilde, o)


def _lstm_transposed(p: LstmParams) -> dict[str, Tensor]:
    return {"f": transpose(p.W_f), "i": transpose(p.W_i), "c": transpose(p.W_c), "o": transpose(p.W_o)}


def lstm_step(params: LstmParams, state: LstmState, x: Tensor) -> LstmState:
    """One LSTM step: forget/input gates, candidate, cell update, output gate, hidden."""
    _check_step(params.hidden_size, params.input_size, state.h, x)
    if state.C.shape != state.h.shape:
        raise DimensionError(f"cell {state.C.shape} and hidden {state.h.shape} differ")
    return _lstm_step(_lstm_transposed(params), params, state, x)


def lstm_forward(params: LstmParams, xs: Sequence[Tensor], init: LstmState | None = None) -> list[LstmState]:
    if len(xs) == 0:
        raise EmptyInputError("lstm_forward needs at least one time step")
    state = init if init is not None else LstmState.zeros(params.hidden_size, xs[0].shape[0])
    WT = _lstm_transposed(params)
    out = []
    for x in xs:
        _check_step(params.hidden_size, params.input_size, state.h, x)
        state = _lstm_step(WT, params, state, x)
        out.append(state)
    return out


def _gru_step(WT: dict[str, Tensor], p: GruParams, state: GruState, x: Tensor) -> GruState:
    h_prev = state.h
    hx = concat([h_prev, x])
    z = sigmoid(_gate(hx, WT["z"], p.b_z))
    r = sigmoid(_gate(hx, WT["r"], p.b_r))
    # reset is applied to h_prev before concatenation
    h_tilde = tanh(_gate(concat([mul(r, h_prev), x]), WT["h"], p.b_h))
    h = add(mul(1.0 - z, h_prev), mul(z, h_tilde))
    return GruState(h, z, r, h_tilde)


def _gru_transposed(p: GruParams) -> dict[str, Tensor]:
    return {"z": transpose(p.W_z), "r": transpose(p.W_r), "h": transpose(p.W_h)}


def gru_step(params: GruParams, state: GruState, x: Tensor) -> GruState:
    _check_step(params.hidden_size, params.input_size, state.h, x)
    return _gru_step(_gru_transposed(params), params, state, x)


def gru_forward(params: GruParams, xs: Sequence[Tensor], init: GruState | None = None) -> list[GruState]:
    if len(xs) == 0:
        raise EmptyInputError("gru_forward needs at least one time step")
    state = init if init is not None else GruState.zeros(params.hidden_size, xs[0].shape[0])
    WT = _gru_transposed(params)
    out = []
    for x in xs:
        _check_step(params.hidden_size, params.input_size, state.h, x)
        state = _gru_step(WT, params, state, x)
        out.append(state)
    return out


def rnn_forward(params: RnnParams, xs: Sequence[Tensor], init: Tensor | None = None) -> list[Tensor]:
    """Elman recurrence ``h_t = tanh(W [h_{t-1}, x_t] + b)``; returns every h_t."""
    if len(xs) == 0:
        raise EmptyInputError("rnn_forward needs at least one time step")
    h = init if init is not None else Tensor(np.zeros((xs[0].shape[0], params.hidden_size)))
    WT = transpose(params.W)
    out = []
    for x in xs:
        _check_step(params.hidden_size, params.input_size, h, x)
        h = tanh(_gate(concat([h, x]), WT, params.b))
        out.append(h)
    return out
