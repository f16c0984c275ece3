"""Central finite-difference gradient checks against the tape."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import GradTape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / (|a| + |n|)`` in the 2-norm; 0 when both vanish."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(loss_fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-5,
                 indices=None) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. selected entries of ``tensor``.

    ``indices`` is an iterable of flat positions (all entries by default);
    unevaluated positions are left at zero.
    """
    flat = tensor.data.reshape(-1)
    out = np.zeros(flat.size)
    for k in range(flat.size) if indices is None else indices:
        orig = flat[k]
        flat[k] = orig + eps
        up = loss_fn().item()
        flat[k] = orig - eps
        down = loss_fn().item()
        flat[k] = orig
        out[k] = (up - down) / (2 * eps)
    return out.reshape(tensor.shape)


def analytic_grads(loss_fn: Callable[[], Tensor], tensors: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    with GradTape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss)
    return {k: grads.get(t, np.zeros_like(t.data)) for k, t in tensors.items()}


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Mapping[str, Tensor], eps: float = 1e-5,
                    max_entries: int | None = None, seed: int = 0) -> dict[str, float]:
    """Relative error per named tensor.

    With ``max_entries`` each tensor is checked on at most that many randomly
    chosen entries (the analytic side is restricted to the same entries).
    """
    analytic = analytic_grads(loss_fn, tensors)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, t in tensors.items():
        if max_entries is not None and t.size > max_entries:
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        else:
            idx = np.arange(t.size)
        num = numeric_grad(loss_fn, t, eps, idx).reshape(-1)[idx]
        errors[name] = relative_error(analytic[name].reshape(-1)[idx], num)
    return errors
