"""Banded multi-head sparse self-attention.

Each role (query, key, value) has one ``d_model x d_model`` projection whose
columns are split into ``heads`` contiguous blocks of width ``d_model // heads``.
Scores outside the band ``|j - k| <= w`` are replaced by ``MASK_VALUE`` before
the row softmax.  Scores are computed densely and then masked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRowError, DimensionError
from .recurrent import uniform_init
from .tensor import (
    MASK_VALUE,
    Tensor,
    add,
    affine,
    concat,
    matmul,
    mul,
    parameter,
    slice_columns,
    softmax_rows,
    transpose,
)


@dataclass
class AttentionParams:
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    W_O: Tensor
    heads: int

    def __post_init__(self):
        d = self.W_Q.shape[0]
        for name in ("W_Q", "W_K", "W_V", "W_O"):
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"{name} must be {d}x{d}, got {getattr(self, name).shape}")
        if self.heads < 1 or d % self.heads:
            raise DimensionError(f"d_model={d} is not divisible by heads={self.heads}")

    @property
    def d_model(self) -> int:
        return self.W_Q.shape[0]

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def parameters(self) -> dict[str, Tensor]:
        return {"W_Q": self.W_Q, "W_K": self.W_K, "W_V": self.W_V, "W_O": self.W_O}

    @classmethod
    def init(cls, d_model: int, heads: int, rng: np.random.Generator) -> "AttentionParams":
        ws = [parameter(uniform_init(rng, (d_model, d_model), d_model)) for _ in range(4)]
        return cls(*ws, heads=heads)

    @classmethod
    def zeros(cls, d_model: int, heads: int) -> "AttentionParams":
        return cls(*[parameter(np.zeros((d_model, d_model))) for _ in range(4)], heads=heads)


@dataclass(frozen=True)
class BandMask:
    n: int
    w: int
    M: np.ndarray

    @property
    def density(self) -> float:
        return float(self.M.sum()) / (self.n * self.n)


def build_band_mask(n: int, w: int) -> BandMask:
    if n < 1 or w < 0:
        raise ValueError(f"band mask needs n >= 1 and w >= 0, got n={n}, w={w}")
    idx = np.arange(n)
    M = (np.abs(idx[:, None] - idx[None, :]) <= w).astype(np.float64)
    M.setflags(write=False)
    return BandMask(n, w, M)


def split_heads(T: Tensor, heads: int) -> list[Tensor]:
    d = T.shape[-1]
    if d % heads:
        raise DimensionError(f"width {d} is not divisible by {heads} heads")
    dh = d // heads
    return [slice_columns(T, i * dh, (i + 1) * dh) for i in range(heads)]


def project_qkv(params: AttentionParams, X: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Full-width Q, K, V; use :func:`split_heads` for the per-head views."""
    if X.ndim < 2 or X.shape[-1] != params.d_model:
        raise DimensionError(f"input {X.shape} does not have width d_model={params.d_model}")
    return matmul(X, params.W_Q), matmul(X, params.W_K), matmul(X, params.W_V)


def attention_scores(Q_i: Tensor, K_i: Tensor) -> Tensor:
    if Q_i.shape != K_i.shape:
        raise DimensionError(f"query {Q_i.shape} and key {K_i.shape} differ")
    return affine(matmul(Q_i, transpose(K_i)), 1.0 / np.sqrt(Q_i.shape[-1]))


def masked_attention(S_i: Tensor, mask: BandMask) -> Tensor:
    """Row softmax of ``S * M + MASK_VALUE * (1 - M)``."""
    n = mask.n
    if S_i.shape[-2:] != (n, n):
        raise DimensionError(f"scores {S_i.shape} do not match a {n}x{n} mask")
    if not np.all(mask.M.any(axis=1)):
        raise DegenerateRowError("mask has a row with no admitted position")
    M = np.broadcast_to(mask.M, S_i.shape)
    fill = Tensor(MASK_VALUE * (1.0 - M))
    return softmax_rows(add(mul(S_i, Tensor(M)), fill))


@dataclass
class AttentionTrace:
    """Per-head intermediates of one forward pass."""

    weights: list[Tensor]
    heads: list[Tensor]


def multi_head_forward(
    params: AttentionParams, X: Tensor, w: int, trace: AttentionTrace | None = None
) -> Tensor:
    """Sparse self-attention of ``X`` (n x d_model, optionally batched)."""
    Q, K, V = project_qkv(params, X)
    mask = build_band_mask(X.shape[-2], w)
    h = params.heads
    outs = []
    for Q_i, K_i, V_i in zip(split_heads(Q, h), split_heads(K, h), split_heads(V, h)):
        A_i = masked_attention(attention_scores(Q_i, K_i), mask)
        head = matmul(A_i, V_i)
        if trace is not None:
            trace.weights.append(A_i)
            trace.heads.append(head)
        outs.append(head)
    return matmul(concat(outs), params.W_O)
