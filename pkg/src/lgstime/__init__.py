"""LSTM + GRU + banded sparse self-attention forecaster on a small numpy autodiff."""

from .errors import (DegenerateRowError, DimensionError, EmptyInputError, IncompleteGradientError,
                     InsufficientDataError, LGSTimeError, StaleTapeError, ValidationError)
from .metrics import MetricsReport, compute_metrics, repeat_and_aggregate
from .model import LGSTime, ModelConfig, count_parameters, forward, init_params
from .tensor import GradTape, Tensor, parameter
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"
