"""Adam with bias correction and optional L2 / decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import IncompleteGradientError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1
    decoupled: bool = False
    t: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Mapping[Tensor, np.ndarray]) -> None:
    """One update of every tensor in ``params``, in place.

    With ``decoupled=False`` the decay is added to the gradient before the
    moment updates (classic L2 form); otherwise it shrinks the weights directly
    as in AdamW.
    """
    missing = [i for i, p in enumerate(params) if p not in grads]
    if missing:
        names = [params[i].name or f"#{i}" for i in missing]
        raise IncompleteGradientError(f"no gradient for parameters {names}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, p in enumerate(params):
        g = grads[p]
        if state.weight_decay and not state.decoupled:
            g = g + state.weight_decay * p.data
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay and state.decoupled:
            update = update + state.lr * state.weight_decay * p.data
        p.data = p.data - update


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-5, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.1, decoupled: bool = False):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                               weight_decay=weight_decay, decoupled=decoupled)

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> None:
        adam_step(self.state, self.params, grads)
