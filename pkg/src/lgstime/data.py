"""Series ingestion, chronological splitting, scaling and windowing.

CSV layout: a header ``timestamp,f1,...,f12`` (names configurable through a
:class:`Schema`), ISO-8601 or epoch-second timestamps, UTF-8, comma delimited.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_FEATURES = tuple(f"f{i}" for i in range(1, 13))
SPLIT_RATIOS = (7, 1, 2)


@dataclass(frozen=True)
class Schema:
    timestamp: str = "timestamp"
    features: tuple[str, ...] = DEFAULT_FEATURES

    @property
    def header(self) -> list[str]:
        return [self.timestamp, *self.features]

    @classmethod
    def for_width(cls, n: int) -> "Schema":
        return cls(features=tuple(f"f{i}" for i in range(1, n + 1)))

    @classmethod
    def load(cls, path) -> "Schema":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(timestamp=d.get("timestamp", "timestamp"), features=tuple(d["features"]))


@dataclass
class SeriesTable:
    timestamps: np.ndarray  # epoch seconds, strictly increasing
    values: np.ndarray  # (rows, n_features)
    columns: tuple[str, ...] = DEFAULT_FEATURES
    dropped_rows: int = 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or len(self.values) != len(self.timestamps):
            raise ValidationError(
                f"values {self.values.shape} do not align with {len(self.timestamps)} timestamps"
            )
        if len(self.columns) != self.values.shape[1]:
            self.columns = tuple(f"f{i}" for i in range(1, self.values.shape[1] + 1))

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> "SeriesTable":
        return SeriesTable(self.timestamps[start:stop], self.values[start:stop], self.columns)


def parse_timestamp(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


_MISSING = {"", "na", "nan", "null", "none"}


def load_csv(path, schema: Schema | None = None) -> SeriesTable:
    """Parse, sort and validate a multivariate series.

    Rows with a non-numeric value are dropped (counted in ``dropped_rows``);
    empty cells are forward-filled and leading incomplete rows removed.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InsufficientDataError(f"{path}: empty file")
        if schema is None:
            schema = Schema(timestamp=header[0], features=tuple(header[1:]))
        if header != schema.header:
            raise ValidationError(f"{path}: header {header} does not match schema {schema.header}")
        stamps, rows, dropped = [], [], 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                dropped += 1
                logger.warning("%s:%d: expected %d fields, got %d", path, lineno, len(header), len(rec))
                continue
            try:
                ts = parse_timestamp(rec[0])
                vals = [math.nan if c.strip().lower() in _MISSING else float(c) for c in rec[1:]]
            except ValueError:
                dropped += 1
                logger.warning("%s:%d: unparseable row dropped", path, lineno)
                continue
            if any(math.isinf(v) for v in vals):
                dropped += 1
                continue
            stamps.append(ts)
            rows.append(vals)

    ts = np.asarray(stamps, dtype=np.float64)
    vals = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(schema.features))
    order = np.argsort(ts, kind="stable")
    ts, vals = ts[order], vals[order]
    dup = ts[1:][np.diff(ts) == 0]
    if dup.size:
        offenders = sorted({format_timestamp(t) for t in dup})
        raise ValidationError(f"{path}: duplicate timestamps {offenders}")
    vals, ts = _forward_fill(vals, ts)
    if len(ts) < 2:
        raise InsufficientDataError(f"{path}: need at least 2 usable rows, found {len(ts)}")
    if dropped:
        logger.warning("%s: dropped %d malformed row(s)", path, dropped)
    return SeriesTable(ts, vals, schema.features, dropped_rows=dropped)


def _forward_fill(vals: np.ndarray, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals = vals.copy()
    for j in range(vals.shape[1]):
        col = vals[:, j]
        for i in range(1, len(col)):
            if math.isnan(col[i]):
                col[i] = col[i - 1]
    complete = ~np.isnan(vals).any(axis=1)
    if not complete.any():
        return vals[:0], ts[:0]
    first = int(np.argmax(complete))
    return vals[first:], ts[first:]


def write_csv(path, table: SeriesTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *table.columns])
        for ts, row in zip(table.timestamps, table.values):
            w.writerow([format_timestamp(ts), *(repr(float(v)) for v in row)])


def aggregate_incidents(path, timestamp_col: str = "timestamp", category_col: str = "category",
                        categories: list[str] | None = None) -> SeriesTable:
    """Bin a per-incident log into daily counts per category.

    Days with no incidents inside the observed range become rows of zeros.
    """
    counts: dict[int, Counter] = defaultdict(Counter)
    seen: Counter = Counter()
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            try:
                day = int(parse_timestamp(rec[timestamp_col]) // 86400)
            except (ValueError, KeyError):
                continue
            cat = rec.get(category_col, "").strip()
            counts[day][cat] += 1
            seen[cat] += 1
    if not counts:
        raise InsufficientDataError(f"{path}: no incidents parsed")
    cats = categories or sorted(seen)
    days = range(min(counts), max(counts) + 1)
    values = [[counts[d][c] for c in cats] for d in days]
    return SeriesTable([d * 86400.0 for d in days], values, tuple(cats))


def subsample(table: SeriesTable, n: int, seed: int) -> SeriesTable:
    """``n`` rows drawn without replacement, kept in time order."""
    if n >= len(table):
        return table
    idx = np.sort(np.random.default_rng(seed).choice(len(table), size=n, replace=False))
    return SeriesTable(table.timestamps[idx], table.values[idx], table.columns)


# -- splitting and scaling ----------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train: int = 7
    val: int = 1
    test: int = 2

    def sizes(self, n: int) -> tuple[int, int, int]:
        total = self.train + self.val + self.test
        n_train = n * self.train // total
        n_val = n * self.val // total
        return n_train, n_val, n - n_train - n_val


def chronological_split(table: SeriesTable, spec: SplitSpec = SplitSpec()):
    if len(table) < 10:
        raise InsufficientDataError(f"need at least 10 rows to split, got {len(table)}")
    a, b, _ = spec.sizes(len(table))
    return table.rows(0, a), table.rows(a, a + b), table.rows(a + b, len(table))


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def apply(self, table: SeriesTable) -> SeriesTable:
        return SeriesTable(table.timestamps, self.transform(table.values), table.columns)


def fit_scaler(train: SeriesTable) -> Scaler:
    """Per-channel mean and population std; constant channels get std 1."""
    v = train.values
    if len(v) == 0:
        raise EmptyInputError("cannot fit a scaler on an empty split")
    mean = v.mean(axis=0)
    std = v.std(axis=0)
    std = np.where(np.ptp(v, axis=0) == 0, 1.0, std)
    return Scaler(mean, std)


def apply(scaler: Scaler, table: SeriesTable) -> SeriesTable:
    return scaler.apply(table)


# -- windows ------------------------------------------------------------------


@dataclass(frozen=True)
class WindowSample:
    X: np.ndarray  # (input_len, n_features)
    y: np.ndarray  # (pred_len, n_features)
    start: int = 0


@dataclass
class Windows:
    """Stride-1 windows of one split, stored as stacked arrays."""

    X: np.ndarray  # (count, input_len, n_features)
    y: np.ndarray  # (count, pred_len, n_features)
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.X)

    def __getitem__(self, i: int) -> WindowSample:
        return WindowSample(self.X[i], self.y[i], int(self.starts[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def windowize(table: SeriesTable, input_len: int, pred_len: int) -> Windows:
    v = table.values
    count = len(v) - input_len - pred_len + 1
    if count < 1:
        raise InsufficientDataError(
            f"{len(v)} rows cannot hold one window of {input_len}+{pred_len}"
        )
    span = np.lib.stride_tricks.sliding_window_view(v, input_len + pred_len, axis=0)
    span = np.moveaxis(span, -1, 1)  # (count, input_len + pred_len, n_features)
    return Windows(
        X=np.ascontiguousarray(span[:, :input_len]),
        y=np.ascontiguousarray(span[:, input_len:]),
        starts=np.arange(count),
    )


@dataclass
class PreparedData:
    train: Windows
    val: Windows
    test: Windows
    scaler: Scaler
    splits: tuple[SeriesTable, SeriesTable, SeriesTable]


def prepare(table: SeriesTable, input_len: int, pred_len: int,
            spec: SplitSpec = SplitSpec()) -> PreparedData:
    """Split, fit the scaler on train only, standardise and windowise each split."""
    train, val, test = chronological_split(table, spec)
    scaler = fit_scaler(train)
    parts = tuple(scaler.apply(t) for t in (train, val, test))
    w = tuple(windowize(t, input_len, pred_len) for t in parts)
    return PreparedData(*w, scaler=scaler, splits=parts)


# -- synthetic data -----------------------------------------------------------


def synthesize(n_rows: int, n_features: int = 12, seed: int = 0, *, ar_coef: float = 0.8,
               noise: float = 1.0, mixing: float = 0.3, seasonal_amplitude: float = 1.0,
               period: float = 7.0, obs_noise: float = 0.1,
               start: str = "2020-01-01T00:00:00") -> SeriesTable:
    """Daily multivariate series with learnable structure.

    Each channel is a latent AR(1) process (innovation scale ``noise``) mixed
    with the other channels' latents, plus a weekly sinusoid with a
    per-channel phase and observation noise scaled by ``noise * obs_noise``.
    """
    if n_rows < 2:
        raise InsufficientDataError(f"n_rows must be >= 2, got {n_rows}")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n_rows, n_features)) * noise
    z = np.zeros((n_rows, n_features))
    z[0] = eps[0]
    for t in range(1, n_rows):
        z[t] = ar_coef * z[t - 1] + eps[t]
    mix = np.eye(n_features) + mixing * rng.standard_normal((n_features, n_features)) / np.sqrt(n_features)
    phase = rng.uniform(0, 2 * np.pi, n_features)
    level = rng.uniform(0.0, 5.0, n_features)
    # reduce the phase before sin so integer periods repeat bit for bit
    t = np.mod(np.arange(n_rows), period)[:, None]
    season = seasonal_amplitude * np.sin(2 * np.pi * t / period + phase)
    obs = rng.standard_normal((n_rows, n_features)) * noise * obs_noise
    values = level + z @ mix.T + season + obs
    t0 = parse_timestamp(start)
    return SeriesTable(t0 + 86400.0 * np.arange(n_rows), values, Schema.for_width(n_features).features)
