"""Point-forecast error metrics and repeat-run aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError
from .tensor import Tensor

METRIC_NAMES = ("mse", "mae", "rmse")


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    mae: float
    rmse: float
    n: int

    def as_dict(self) -> dict[str, float]:
        return {"mse": self.mse, "mae": self.mae, "rmse": self.rmse}


def _array(v) -> np.ndarray:
    return v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)


def compute_metrics(y, y_hat) -> MetricsReport:
    """MSE, MAE and RMSE over every scalar of ``y`` and ``y_hat``.

    RMSE is the square root of the MSE, never computed separately.
    """
    y, y_hat = _array(y), _array(y_hat)
    if y.shape != y_hat.shape:
        raise DimensionError(f"targets {y.shape} and predictions {y_hat.shape} differ")
    n = y.size
    if n == 0:
        raise EmptyInputError("no points to score")
    err = (y - y_hat).ravel()
    mse = float(np.mean(err * err))
    mae = float(np.mean(np.abs(err)))
    return MetricsReport(mse=mse, mae=mae, rmse=math.sqrt(mse), n=int(n))


@dataclass(frozen=True)
class AggregateReport:
    runs: tuple[MetricsReport, ...]
    mean: MetricsReport
    std: MetricsReport
    seeds: tuple[int, ...] = ()


def aggregate(runs: Sequence[MetricsReport], seeds: Sequence[int] = ()) -> AggregateReport:
    """Per-metric mean and sample (n-1) standard deviation.

    A single run has std 0.
    """
    if not runs:
        raise EmptyInputError("nothing to aggregate")
    stats = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in runs]
        if all(v == vals[0] for v in vals):
            stats[name] = (vals[0], 0.0)
            continue
        m = math.fsum(vals) / len(vals)
        if len(vals) > 1:
            var = math.fsum((v - m) ** 2 for v in vals) / (len(vals) - 1)
        else:
            var = 0.0
        stats[name] = (m, math.sqrt(var))
    n = runs[0].n
    mean = MetricsReport(*(stats[k][0] for k in METRIC_NAMES), n=n)
    std = MetricsReport(*(stats[k][1] for k in METRIC_NAMES), n=n)
    return AggregateReport(tuple(runs), mean, std, tuple(seeds))


def repeat_and_aggregate(
    runner: Callable[[int], MetricsReport], repeats: int = 3, seed: int = 0
) -> AggregateReport:
    """Call ``runner(seed + r)`` for r in range(repeats) and aggregate."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    seeds = [seed + r for r in range(repeats)]
    return aggregate([runner(s) for s in seeds], seeds)
