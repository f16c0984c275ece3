"""Experiment specs, single runs with persisted artifacts, and comparison tables."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .data import PreparedData, Schema, SeriesTable, load_csv, prepare, subsample, synthesize
from .errors import ValidationError
from .metrics import METRIC_NAMES, AggregateReport, repeat_and_aggregate
from .model import LGSTime, ModelConfig, save_checkpoint
from .trainer import TrainConfig, evaluate, train

logger = logging.getLogger(__name__)

TABLE1_VARIANTS = ("lgstime", "cnn", "rnn", "gru")
TABLE2_VARIANTS = ("lgstime", "lstm_gru", "lstm")
DISPLAY = {"lgstime": "LGSTime", "cnn": "CNN", "rnn": "RNN", "gru": "GRU",
           "lstm_gru": "LSTM+GRU", "lstm": "LSTM"}
ARTIFACTS = ("spec.json", "metrics.csv", "trace.jsonl", "checkpoint.bin")
METRICS_HEADER = ["dataset", "variant", "repeat", "mse", "mae", "rmse"]


@dataclass(frozen=True)
class DatasetSpec:
    name: str = "DS1"
    path: str | None = None
    synthetic_rows: int | None = None
    n_features: int = 12
    seed: int = 0
    sample_n: int | None = None
    sample_seed: int = 0
    schema: str | None = None

    def __post_init__(self):
        if (self.path is None) == (self.synthetic_rows is None):
            raise ValidationError("dataset needs exactly one of a CSV path or a synthetic row count")
        if self.synthetic_rows is not None and self.synthetic_rows < 2:
            raise ValidationError("synthetic datasets need at least 2 rows")
        if self.sample_n is not None and self.sample_n < 10:
            raise ValidationError("sample_n must be >= 10")

    def load(self) -> SeriesTable:
        if self.path is not None:
            schema = Schema.load(self.schema) if self.schema else None
            table = load_csv(self.path, schema)
        else:
            table = synthesize(self.synthetic_rows, self.n_features, seed=self.seed)
        if self.sample_n is not None:
            table = subsample(table, self.sample_n, self.sample_seed)
        return table


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: DatasetSpec
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return {"dataset": asdict(self.dataset), "model": self.model.to_dict(),
                "train": self.train.to_dict(), "out_dir": self.out_dir}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        try:
            return cls(DatasetSpec(**d["dataset"]), ModelConfig.from_dict(d["model"]),
                       TrainConfig.from_dict(d["train"]), d["out_dir"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed experiment spec: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"experiment spec is not valid JSON: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def load_data(spec: ExperimentSpec) -> PreparedData:
    """Load and prepare the dataset, validating it against the model config."""
    table = spec.dataset.load()
    cfg = spec.model
    if table.n_features != cfg.n_features:
        raise ValidationError(
            f"dataset {spec.dataset.name} has {table.n_features} features, model expects {cfg.n_features}"
        )
    need = cfg.input_len + cfg.pred_len
    n = len(table)
    smallest = min(n * 7 // 10, n // 10)
    if smallest < need:
        raise ValidationError(
            f"dataset {spec.dataset.name}: {n} rows leave a split of {smallest} rows, "
            f"fewer than one window of {need}"
        )
    return prepare(table, cfg.input_len, cfg.pred_len)


@dataclass
class RunResult:
    spec: ExperimentSpec
    aggregate: AggregateReport
    out_dir: Path


def _fmt(x: float) -> str:
    return repr(float(x))


def metrics_rows(dataset: str, variant: str, agg: AggregateReport) -> list[list[str]]:
    rows = [[dataset, variant, str(i), _fmt(r.mse), _fmt(r.mae), _fmt(r.rmse)]
            for i, r in enumerate(agg.runs)]
    for label, rep in (("mean", agg.mean), ("std", agg.std)):
        rows.append([dataset, variant, label, _fmt(rep.mse), _fmt(rep.mae), _fmt(rep.rmse)])
    return rows


def _write_csv(path: Path, header: list[str], rows: Iterable[list[str]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_experiment(spec: ExperimentSpec, data: PreparedData | None = None) -> RunResult:
    """Train and test ``spec.train.repeats`` times and persist the artifacts.

    Writes exactly ``spec.json``, ``metrics.csv``, ``trace.jsonl`` and
    ``checkpoint.bin`` (the final model of the first repeat) to ``spec.out_dir``.
    """
    if data is None:
        data = load_data(spec)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_lines: list[str] = []
    first_model: list[LGSTime] = []

    def runner(seed: int):
        model = LGSTime(spec.model, seed=seed)
        result = train(model, data.train, replace(spec.train, seed=seed), val=data.val)
        repeat = seed - spec.train.seed
        for rec in result.trace:
            trace_lines.append(json.dumps({"repeat": repeat, "seed": seed, **asdict(rec)}, sort_keys=True))
        if result.best_val is not None:
            trace_lines.append(json.dumps({"repeat": repeat, "seed": seed, "best_val_epoch": result.best_val_epoch,
                                           "best_val_mse": result.best_val.mse}, sort_keys=True))
        if not first_model:
            first_model.append(model)
        report = evaluate(model, data.test)
        logger.info("%s/%s seed %d: test %s", spec.dataset.name, spec.model.variant, seed, report)
        return report

    agg = repeat_and_aggregate(runner, spec.train.repeats, spec.train.seed)
    spec.save(out / "spec.json")
    _write_csv(out / "metrics.csv", METRICS_HEADER,
               metrics_rows(spec.dataset.name, spec.model.variant, agg))
    (out / "trace.jsonl").write_text("".join(line + "\n" for line in trace_lines), encoding="utf-8")
    save_checkpoint(out / "checkpoint.bin", first_model[0])
    return RunResult(spec, agg, out)


# -- comparison tables --------------------------------------------------------


def rank_flags(values: Sequence[float]) -> list[str]:
    """"best" for the minimum, "second" for the next distinct value; ties share."""
    distinct = sorted(set(values))
    best = distinct[0]
    second = distinct[1] if len(distinct) > 1 else None
    return ["best" if v == best else "second" if v == second else "" for v in values]


@dataclass
class ResultsTable:
    datasets: list[str]
    variants: list[str]
    values: dict[tuple[str, str, str], float]

    def flags(self) -> dict[tuple[str, str, str], str]:
        out = {}
        for ds in self.datasets:
            for m in METRIC_NAMES:
                vals = [self.values[(ds, v, m)] for v in self.variants]
                for v, f in zip(self.variants, rank_flags(vals)):
                    out[(ds, v, m)] = f
        return out

    def counts(self) -> dict[tuple[str, str], int]:
        flags = self.flags()
        return {(v, m): sum(flags[(ds, v, m)] == "best" for ds in self.datasets)
                for v in self.variants for m in METRIC_NAMES}

    def to_csv(self) -> str:
        flags, counts = self.flags(), self.counts()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "variant", "metric", "value", "flag"])
        for ds in self.datasets:
            for v in self.variants:
                for m in METRIC_NAMES:
                    w.writerow([ds, v, m, _fmt(self.values[(ds, v, m)]), flags[(ds, v, m)]])
        for v in self.variants:
            for m in METRIC_NAMES:
                w.writerow(["Count", v, m, counts[(v, m)], ""])
        return buf.getvalue()

    def to_text(self, digits: int = 4) -> str:
        flags, counts = self.flags(), self.counts()
        mark = {"best": "*", "second": "_", "": " "}
        cells = [["Model"] + [DISPLAY.get(v, v) if i == 0 else "" for v in self.variants for i in range(3)],
                 ["Metric"] + [m.upper() for _ in self.variants for m in METRIC_NAMES]]
        for ds in self.datasets:
            cells.append([ds] + [f"{self.values[(ds, v, m)]:.{digits}f}{mark[flags[(ds, v, m)]]}"
                                 for v in self.variants for m in METRIC_NAMES])
        cells.append(["Count"] + [str(counts[(v, m)]) for v in self.variants for m in METRIC_NAMES])
        widths = [max(len(row[j]) for row in cells) for j in range(len(cells[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
        lines.append("* best, _ second best (mean over repeats)")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_metrics_csv(cls, text: str, variants: Sequence[str] | None = None) -> "ResultsTable":
        """Rebuild from the ``repeat == "mean"`` rows of a results file."""
        datasets, seen, values = [], [], {}
        for row in csv.DictReader(io.StringIO(text)):
            if row["repeat"] != "mean":
                continue
            ds, v = row["dataset"], row["variant"]
            if ds not in datasets:
                datasets.append(ds)
            if v not in seen:
                seen.append(v)
            for m in METRIC_NAMES:
                values[(ds, v, m)] = float(row[m])
        return cls(datasets, list(variants or seen), values)


def validate_group(specs: Sequence[ExperimentSpec], variants: Sequence[str]) -> list[str]:
    """Check a comparison set; return dataset names in first-seen order."""
    if not specs:
        raise ValidationError("no experiments to compare")
    train_cfg = specs[0].train

    def shape(m: ModelConfig):
        return (m.n_features, m.input_len, m.pred_len, m.hidden, m.d_model, m.heads, m.sparse_factor)

    by_ds: dict[str, list[ExperimentSpec]] = {}
    for s in specs:
        by_ds.setdefault(s.dataset.name, []).append(s)
        if s.train != train_cfg:
            raise ValidationError(f"{s.dataset.name}/{s.model.variant}: training config differs")
        if shape(s.model) != shape(specs[0].model):
            raise ValidationError(f"{s.dataset.name}/{s.model.variant}: model config differs")
    for ds, group in by_ds.items():
        got = sorted(s.model.variant for s in group)
        if got != sorted(variants):
            raise ValidationError(f"{ds}: variants {got} do not match {sorted(variants)}")
        if len({s.dataset for s in group}) != 1:
            raise ValidationError(f"{ds}: variants use different dataset definitions")
    return list(by_ds)


def run_comparison(specs: Sequence[ExperimentSpec], variants: Sequence[str], out_dir) -> ResultsTable:
    """Run every spec and write ``results.csv``, ``table.csv`` and ``table.txt``."""
    datasets = validate_group(specs, variants)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    values, rows = {}, []
    cache: dict[str, PreparedData] = {}
    for ds in datasets:
        for v in variants:
            spec = next(s for s in specs if s.dataset.name == ds and s.model.variant == v)
            if ds not in cache:
                cache[ds] = load_data(spec)
            res = run_experiment(spec, cache[ds])
            rows += metrics_rows(ds, v, res.aggregate)
            for m in METRIC_NAMES:
                values[(ds, v, m)] = getattr(res.aggregate.mean, m)
    table = ResultsTable(datasets, list(variants), values)
    _write_csv(out / "results.csv", METRICS_HEADER, rows)
    (out / "table.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "table.txt").write_text(table.to_text(), encoding="utf-8")
    return table


def comparison_specs(datasets: Sequence[DatasetSpec], variants: Sequence[str], model: ModelConfig,
                     train_cfg: TrainConfig, out_dir) -> list[ExperimentSpec]:
    specs = []
    for ds in datasets:
        for v in variants:
            cfg = replace(model, variant=v)
            specs.append(ExperimentSpec(ds, cfg, train_cfg, str(Path(out_dir) / ds.name / v)))
    return specs
