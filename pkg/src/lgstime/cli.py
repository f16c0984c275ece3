"""Command-line entry points: run, compare, ablation, verify.

Exit codes: 0 success, 2 invalid arguments or spec, 3 I/O failure,
4 failing verification property.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import LGSTimeError, ValidationError
from .experiment import (ARTIFACTS, TABLE1_VARIANTS, TABLE2_VARIANTS, DatasetSpec, ExperimentSpec,
                         comparison_specs, run_comparison, run_experiment)
from .model import VARIANTS, ModelConfig
from .trainer import TrainConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_VERIFY = 4

OUTPUT_ROOT_ENV = "LGSTIME_OUTPUT_ROOT"

logger = logging.getLogger("lgstime")


def _default_out(sub: str) -> str:
    return str(Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / sub)


def _add_common(p: argparse.ArgumentParser, multi_data: bool = False) -> None:
    src = p.add_argument_group("data")
    if multi_data:
        src.add_argument("--data", action="append", help="CSV file (repeat for several datasets)")
        src.add_argument("--n-datasets", type=int, default=4, help="synthetic datasets to generate")
    else:
        src.add_argument("--data", help="CSV file with a timestamp column and feature columns")
    src.add_argument("--synthetic", type=int, metavar="N_ROWS", help="generate a synthetic series instead")
    src.add_argument("--n-features", type=int, default=12)
    src.add_argument("--schema", help="JSON schema file naming the timestamp and feature columns")
    src.add_argument("--sample-n", type=int, help="randomly keep this many rows (time order preserved)")
    src.add_argument("--data-seed", type=int, default=0)

    m = p.add_argument_group("model")
    m.add_argument("--input-len", type=int, default=96)
    m.add_argument("--pred-len", type=int, default=1)
    m.add_argument("--hidden", type=int, default=64)
    m.add_argument("--d-model", type=int, default=64)
    m.add_argument("--heads", type=int, default=4)
    m.add_argument("--sparse-factor", type=int, default=8)

    t = p.add_argument_group("training")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--lr", type=float, default=1e-5)
    t.add_argument("--weight-decay", type=float, default=0.1)
    t.add_argument("--coupled-weight-decay", action="store_true",
                   help="add the decay to the gradient (L2) instead of shrinking weights directly")
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--repeats", type=int, default=3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-validation", action="store_true", help="skip per-epoch validation scoring")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgstime", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and test one variant, persisting artifacts")
    run.add_argument("--spec", help="re-launch from a persisted spec.json (other flags ignored)")
    run.add_argument("--variant", choices=VARIANTS, default="lgstime")
    run.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/run)")
    _add_common(run)

    for name, helptext in (("compare", "LGSTime against CNN/RNN/GRU baselines"),
                           ("ablation", "LGSTime against LSTM+GRU and LSTM")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/{name})")
        _add_common(sp, multi_data=True)

    sub.add_parser("verify", help="run the numerical property suite")
    return parser


def model_config(args, variant: str) -> ModelConfig:
    return ModelConfig(n_features=args.n_features, input_len=args.input_len, pred_len=args.pred_len,
                       hidden=args.hidden, d_model=args.d_model, heads=args.heads,
                       sparse_factor=args.sparse_factor, variant=variant)


def train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                       repeats=args.repeats, lr=args.lr, weight_decay=args.weight_decay,
                       decoupled_weight_decay=not args.coupled_weight_decay,
                       track_validation=not args.no_validation)


def _dataset(args, name: str, path: str | None, seed: int) -> DatasetSpec:
    return DatasetSpec(name=name, path=path, synthetic_rows=None if path else args.synthetic,
                       n_features=args.n_features, seed=seed, sample_n=args.sample_n,
                       sample_seed=args.data_seed, schema=args.schema)


def spec_from_args(args) -> ExperimentSpec:
    if args.spec:
        return ExperimentSpec.load(args.spec)
    if (args.data is None) == (args.synthetic is None):
        raise ValidationError("give exactly one of --data or --synthetic")
    name = Path(args.data).stem if args.data else "synthetic"
    return ExperimentSpec(_dataset(args, name, args.data, args.data_seed),
                          model_config(args, args.variant), train_config(args),
                          args.out or _default_out("run"))


def datasets_from_args(args) -> list[DatasetSpec]:
    if bool(args.data) == (args.synthetic is not None):
        raise ValidationError("give --data (one or more) or --synthetic, not both")
    if args.data:
        return [_dataset(args, f"DS{i + 1}", path, args.data_seed) for i, path in enumerate(args.data)]
    if args.n_datasets < 1:
        raise ValidationError("--n-datasets must be >= 1")
    return [_dataset(args, f"DS{i + 1}", None, args.data_seed + i) for i in range(args.n_datasets)]


def cmd_run(args) -> int:
    spec = spec_from_args(args)
    res = run_experiment(spec)
    print(f"wrote {', '.join(ARTIFACTS)} to {res.out_dir}")
    m, s = res.aggregate.mean, res.aggregate.std
    print(f"test mse {m.mse:.4f}±{s.mse:.4f}  mae {m.mae:.4f}±{s.mae:.4f}  rmse {m.rmse:.4f}±{s.rmse:.4f}")
    return EXIT_OK


def _cmd_table(args, variants, name: str) -> int:
    out = args.out or _default_out(name)
    specs = comparison_specs(datasets_from_args(args), variants, model_config(args, "lgstime"),
                             train_config(args), out)
    table = run_comparison(specs, variants, out)
    print(table.to_text(), end="")
    print(f"wrote results.csv, table.csv, table.txt to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    return _cmd_table(args, TABLE1_VARIANTS, "compare")


def cmd_ablation(args) -> int:
    return _cmd_table(args, TABLE2_VARIANTS, "ablation")


def cmd_verify(args=None) -> int:
    from .verify import run_all

    outcomes = run_all(print)
    failed = sum(not o.passed for o in outcomes)
    print(f"{len(outcomes) - failed}/{len(outcomes)} properties passed")
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "ablation": cmd_ablation, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except LGSTimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
