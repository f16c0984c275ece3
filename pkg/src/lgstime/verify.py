"""Registry of numerical properties run by ``lgstime verify``.

Every property returns a measured error (or violation count) that passes when
it is at most the registered tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import AttentionParams, build_band_mask, masked_attention, multi_head_forward, AttentionTrace
from .data import SeriesTable, chronological_split, fit_scaler, windowize
from .gradcheck import check_gradients, relative_error
from .metrics import compute_metrics
from .model import LGSTime, ModelConfig, forward
from .optim import AdamState, adam_step
from .recurrent import (GruParams, GruState, LstmParams, LstmState, gru_forward, gru_step,
                        lstm_forward, lstm_step)
from .reference import dense_attention
from .tensor import GradTape, Tensor, mse_loss, parameter

DESK = ModelConfig(n_features=3, input_len=12, pred_len=1, hidden=8, d_model=8, heads=2,
                   sparse_factor=2, variant="lgstime")


@dataclass(frozen=True)
class Property:
    name: str
    tolerance: float
    fn: Callable[[], float]


@dataclass(frozen=True)
class Outcome:
    name: str
    measured: float
    tolerance: float
    passed: bool
    error: str | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = f"  ({self.error})" if self.error else ""
        return f"{status}  {self.name:<36} measured={self.measured:.3e}  tol={self.tolerance:.1e}{detail}"


REGISTRY: list[Property] = []


def register(name: str, tolerance: float):
    def deco(fn):
        REGISTRY.append(Property(name, tolerance, fn))
        return fn
    return deco


def run_all(emit: Callable[[str], None] | None = print) -> list[Outcome]:
    outcomes = []
    for prop in REGISTRY:
        try:
            measured = float(prop.fn())
            ok = bool(measured <= prop.tolerance)
            out = Outcome(prop.name, measured, prop.tolerance, ok)
        except Exception as exc:  # a crashing property is a failing one
            out = Outcome(prop.name, math.inf, prop.tolerance, False, f"{type(exc).__name__}: {exc}")
        outcomes.append(out)
        if emit is not None:
            emit(out.line())
    return outcomes


# -- helpers -------------------------------------------------------------------


def _rand(rng, *shape, scale=1.0):
    return rng.uniform(-scale, scale, size=shape)


def _sum_loss(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.sum_(T.mul(out, Tensor(weights)))


def lstm_case(seed: int, input_size=3, hidden=4, length=8, batch=2):
    rng = np.random.default_rng(seed)
    p = LstmParams.init(input_size, hidden, rng)
    for b in (p.b_f, p.b_i, p.b_c, p.b_o):
        b.data = _rand(rng, hidden, scale=0.5)
    xs = [Tensor(_rand(rng, batch, input_size)) for _ in range(length)]
    w = rng.standard_normal((batch, hidden))
    return p, lambda: _sum_loss(lstm_forward(p, xs)[-1].h, w)


def gru_case(seed: int, input_size=3, hidden=4, length=8, batch=2):
    rng = np.random.default_rng(seed)
    p = GruParams.init(input_size, hidden, rng)
    for b in (p.b_z, p.b_r, p.b_h):
        b.data = _rand(rng, hidden, scale=0.5)
    init = GruState(Tensor(_rand(rng, batch, hidden, scale=0.9)))
    xs = [Tensor(_rand(rng, batch, input_size)) for _ in range(length)]
    w = rng.standard_normal((batch, hidden))
    return p, lambda: _sum_loss(gru_forward(p, xs, init)[-1].h, w)


def attention_case(seed: int, n=6, d_model=8, heads=2, w=2):
    rng = np.random.default_rng(seed)
    p = AttentionParams(*[parameter(_rand(rng, d_model, d_model)) for _ in range(4)], heads=heads)
    X = Tensor(_rand(rng, n, d_model))
    G = rng.standard_normal((n, d_model))
    return p, lambda: _sum_loss(multi_head_forward(p, X, w), G)


def model_case(seed: int, cfg: ModelConfig = DESK, batch=2):
    rng = np.random.default_rng(seed)
    model = LGSTime(cfg, seed=seed)
    for name, t in model.named_parameters():
        if name.endswith(("b", "b_f", "b_i", "b_c", "b_o", "b_z", "b_r", "b_h")):
            t.data = _rand(rng, *t.shape, scale=0.3)
    X = _rand(rng, batch, cfg.input_len, cfg.n_features)
    y = Tensor(rng.standard_normal((batch, cfg.pred_len, cfg.n_features)))
    return model, lambda: mse_loss(forward(model.params, cfg, X), y)


def dense_equivalence(seed: int, n: int, d_model=8, heads=2) -> tuple[float, float]:
    """Max value and gradient discrepancy between full-band sparse and dense attention."""
    rng = np.random.default_rng(seed)
    Ws = [rng.standard_normal((d_model, d_model)) / math.sqrt(d_model) for _ in range(4)]
    Xv = rng.standard_normal((n, d_model))
    G = rng.standard_normal((n, d_model))
    ref_out, ref_grads = dense_attention(Xv, *Ws, heads=heads, upstream=G)

    p = AttentionParams(*[parameter(W.copy()) for W in Ws], heads=heads)
    X = parameter(Xv.copy())
    with GradTape() as tape:
        out = multi_head_forward(p, X, w=n - 1)
        loss = _sum_loss(out, G)
    grads = tape.backward(loss)
    val_err = float(np.max(np.abs(out.data - ref_out)))
    mine = {"W_Q": p.W_Q, "W_K": p.W_K, "W_V": p.W_V, "W_O": p.W_O, "X": X}
    grad_err = max(float(np.max(np.abs(grads[t] - ref_grads[k]))) for k, t in mine.items())
    return val_err, grad_err


# -- registered properties -------------------------------------------------------


@register("tensor.matmul_gradient", 1e-4)
def _matmul_grad():
    rng = np.random.default_rng(0)
    a, b = parameter(_rand(rng, 3, 4)), parameter(_rand(rng, 4, 2))
    errs = check_gradients(lambda: T.sum_(T.matmul(a, b)), {"a": a, "b": b})
    return max(errs.values())


@register("tensor.activation_gradients", 1e-4)
def _act_grad():
    rng = np.random.default_rng(1)
    x = parameter(_rand(rng, 4, 5))
    w = rng.standard_normal((4, 5))
    errs = [check_gradients(lambda: _sum_loss(f(x), w), {"x": x})["x"] for f in (T.sigmoid, T.tanh)]
    return max(errs)


@register("tensor.softmax_row_sums", 1e-9)
def _softmax_rows():
    rng = np.random.default_rng(2)
    s = T.softmax_rows(Tensor(rng.standard_normal((50, 17)) * 20)).data
    return float(np.max(np.abs(s.sum(axis=1) - 1.0)))


@register("tensor.diamond_accumulation", 1e-4)
def _diamond():
    rng = np.random.default_rng(3)
    x = parameter(_rand(rng, 3, 3))
    W = Tensor(_rand(rng, 3, 3))

    def loss():
        return T.sum_(T.mul(T.tanh(T.matmul(x, W)), T.sigmoid(x)))

    return check_gradients(loss, {"x": x})["x"]


@register("recurrent.lstm_zero_identity", 1e-12)
def _lstm_zero():
    p = LstmParams.zeros(1, 1)
    s = lstm_step(p, LstmState(Tensor([[0.0]]), Tensor([[1.0]])), Tensor([[0.7]]))
    return max(abs(s.C.item() - 0.5), abs(s.h.item() - 0.5 * math.tanh(0.5)))


@register("recurrent.gru_zero_identity", 1e-12)
def _gru_zero():
    s = gru_step(GruParams.zeros(1, 1), GruState(Tensor([[1.0]])), Tensor([[-0.3]]))
    return max(abs(s.z.item() - 0.5), abs(s.r.item() - 0.5), abs(s.h_tilde.item()), abs(s.h.item() - 0.5))


@register("recurrent.forget_saturation", 1e-9)
def _forget():
    p = LstmParams.zeros(2, 3)
    p.b_f.data[:] = 50.0
    C_prev = np.array([[0.3, -0.8, 0.5]])
    s = lstm_step(p, LstmState(Tensor(np.zeros((1, 3))), Tensor(C_prev)), Tensor([[1.0, -1.0]]))
    return float(np.max(np.abs(s.C.data - C_prev)))


@register("recurrent.lstm_gradient", 1e-4)
def _lstm_grad():
    p, loss = lstm_case(0)
    return max(check_gradients(loss, p.parameters()).values())


@register("recurrent.gru_gradient", 1e-4)
def _gru_grad():
    p, loss = gru_case(0)
    return max(check_gradients(loss, p.parameters()).values())


@register("attention.band_mask_counts", 0)
def _band_counts():
    bad = 0
    for n in range(1, 12):
        for w in range(0, 13):
            M = build_band_mask(n, w).M
            brute = sum(abs(j - k) <= w for j in range(n) for k in range(n))
            rows_ok = all(M[j].sum() == min(j, w) + min(n - 1 - j, w) + 1 for j in range(n))
            bad += int(M.sum() != brute) + int(not rows_ok) + int(not np.array_equal(M, M.T))
    return bad


@register("attention.mask_respect", 1e-30)
def _mask_respect():
    rng = np.random.default_rng(4)
    mask = build_band_mask(9, 2)
    A = masked_attention(Tensor(rng.standard_normal((9, 9)) * 10), mask).data
    return float(np.max(A[mask.M == 0]))


@register("attention.dense_equivalence_values", 1e-12)
def _dense_values():
    return max(dense_equivalence(s, n)[0] for s, n in enumerate((3, 7, 12)))


@register("attention.dense_equivalence_gradients", 1e-10)
def _dense_grads():
    return max(dense_equivalence(s, n)[1] for s, n in enumerate((3, 7, 12)))


@register("attention.gradient", 1e-4)
def _attn_grad():
    p, loss = attention_case(0)
    return max(check_gradients(loss, p.parameters()).values())


@register("model.lgstime_gradient", 1e-4)
def _model_grad():
    model, loss = model_case(0)
    return max(check_gradients(loss, dict(model.named_parameters()), max_entries=12).values())


@register("metrics.hand_example", 1e-12)
def _metric_hand():
    r = compute_metrics([1.0, 2.0, 3.0], [2.0, 2.0, 5.0])
    return max(abs(r.mse - 5 / 3), abs(r.mae - 1.0), abs(r.rmse - math.sqrt(5 / 3)))


@register("metrics.rmse_squared_ulps", 1)
def _metric_ulps():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 50))
        r = compute_metrics(rng.standard_normal(n), rng.standard_normal(n) * rng.uniform(0.1, 10))
        worst = max(worst, abs(r.rmse * r.rmse - r.mse) / math.ulp(r.mse))
        if r.mae > r.rmse:
            return math.inf
    return worst


@register("optim.adam_first_step", 1e-15)
def _adam_first():
    theta = parameter([0.0])
    st = AdamState(lr=1e-5, weight_decay=0.0)
    adam_step(st, [theta], {theta: np.array([1.0])})
    return abs(theta.data[0] - (-1e-5 / (1 + 1e-8)))


@register("data.split_invariants", 0)
def _split():
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(25):
        n = int(rng.integers(10, 400))
        tab = SeriesTable(np.cumsum(rng.uniform(1, 5, n)), rng.standard_normal((n, 3)))
        tr, va, te = chronological_split(tab)
        bad += int(len(tr) + len(va) + len(te) != n)
        bad += int(len(tr) != n * 7 // 10 or len(va) != n // 10)
        bad += int(not (tr.timestamps[-1] < va.timestamps[0] and (len(va) == 0 or va.timestamps[-1] < te.timestamps[0])))
    return bad


@register("data.scaler_no_leakage", 0)
def _leak():
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(25):
        n = int(rng.integers(20, 300))
        vals = rng.standard_normal((n, 4))
        tab = SeriesTable(np.arange(n, dtype=float), vals)
        s1 = fit_scaler(chronological_split(tab)[0])
        cut = n * 7 // 10
        vals2 = vals.copy()
        vals2[cut:] = rng.standard_normal(vals2[cut:].shape) * 100
        s2 = fit_scaler(chronological_split(SeriesTable(np.arange(n, dtype=float), vals2))[0])
        bad += int(not (np.array_equal(s1.mean, s2.mean) and np.array_equal(s1.std, s2.std)))
    return bad


@register("data.window_targets", 0)
def _windows():
    rng = np.random.default_rng(8)
    tab = SeriesTable(np.arange(200, dtype=float), rng.standard_normal((200, 3)))
    w = windowize(tab, 12, 1)
    bad = int(len(w) != 200 - 12 - 1 + 1)
    for i in range(len(w)):
        bad += int(not np.array_equal(w.y[i, 0], tab.values[i + 12]))
    return bad
