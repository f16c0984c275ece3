"""Mini-batch training loop and evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Windows
from .errors import EmptyInputError, ValidationError
from .metrics import MetricsReport, compute_metrics
from .model import LGSTime
from .optim import Adam
from .tensor import GradTape, Tensor, mse_loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    repeats: int = 3
    lr: float = 1e-5
    weight_decay: float = 0.1
    decoupled_weight_decay: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    track_validation: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.repeats < 1:
            raise ValidationError(f"repeats must be >= 1, got {self.repeats}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValidationError("lr and weight_decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse: float | None = None


@dataclass
class TrainResult:
    model: LGSTime
    trace: list[EpochRecord] = field(default_factory=list)
    best_val_epoch: int | None = None
    best_val: MetricsReport | None = None

    @property
    def losses(self) -> list[float]:
        return [r.train_loss for r in self.trace]


def evaluate(model: LGSTime, windows: Windows, batch_size: int = 256) -> MetricsReport:
    if len(windows) == 0:
        raise EmptyInputError("no windows to evaluate")
    return compute_metrics(windows.y, model.predict(windows.X, batch_size))


def train(model: LGSTime, data: Windows, cfg: TrainConfig, val: Windows | None = None) -> TrainResult:
    """Train ``model`` in place for ``cfg.epochs`` shuffled passes over ``data``.

    The recorded epoch loss is the sample-weighted mean of the batch losses seen
    during that epoch.  Validation metrics are logged for information only; the
    returned model is always the final one.
    """
    n = len(data)
    if n == 0:
        raise EmptyInputError("training split has no windows")
    opt = Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
               weight_decay=cfg.weight_decay, decoupled=cfg.decoupled_weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    result = TrainResult(model)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            with GradTape() as tape:
                loss = mse_loss(model(data.X[idx]), Tensor(data.y[idx]))
            grads = tape.backward(loss)
            opt.step(grads)
            total += loss.item() * len(idx)
        rec = EpochRecord(epoch, total / n)
        if val is not None and len(val) and cfg.track_validation:
            report = evaluate(model, val)
            rec.val_mse = report.mse
            if result.best_val is None or report.mse < result.best_val.mse:
                result.best_val, result.best_val_epoch = report, epoch
        result.trace.append(rec)
        logger.info("epoch %d loss %.6f val %s (%.1fs)", epoch, rec.train_loss, rec.val_mse,
                    time.perf_counter() - t0)
    return result
