"""Command-line entry point: ``convflat <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import itertools
import json
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import TypeVar

import pydantic
from pydantic import BaseModel

from convflat import __version__
from convflat.core.config import settings
from convflat.core.constants import (
    BENCH_CSV_COLUMNS,
    RUN_CSV_COLUMNS,
    STOP_COMPARE_CSV_COLUMNS,
    SWEEP_CSV_COLUMNS,
    StopReason,
    WeightInit,
)
from convflat.core.exceptions import ConfigError, ConvFlatError, GeometryError, ValidationError
from convflat.experiments.bound import bound_envelope, calibrate_envelope, optimal_bandwidth
from convflat.experiments.early_stop_study import compare_stopping_strategies
from convflat.experiments.statistics import correlate, usable_rows
from convflat.experiments.sweep import build_setup, run_sweep, run_training
from convflat.logging_config import setup_logging
from convflat.schemas.geometry import ConvSpec
from convflat.schemas.training import (
    ExperimentConfig,
    StopCompareConfig,
    SweepConfig,
    TrainConfig,
)
from convflat.services.benchmark_service import BenchmarkProtocol, benchmark_methods, summarize
from convflat.services.report_writer import (
    CsvReportWriter,
    read_csv,
    render_bench_table,
    write_csv,
    write_json,
)
from convflat.training.backbone import Backbone

logger = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound=BaseModel)
ExpT = TypeVar("ExpT", bound=ExperimentConfig)


# --- Argument types ---


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text}")
    return value


# --- Shared helpers ---


def load_config(path: str | None, model: type[ConfigT], strict: bool = True) -> ConfigT:
    """Parse a JSON config document; a missing path gives the defaults.

    With ``strict=False`` top-level keys the model does not know are dropped.
    """
    if path is None:
        return model()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"Config {path} must be a JSON object")
    if not strict:
        raw = {k: v for k, v in raw.items() if k in model.model_fields}
    try:
        return model.model_validate(raw)
    except pydantic.ValidationError as e:
        raise ConfigError(
            f"Invalid config {path}", errors={"fields": e.errors(include_url=False)}
        ) from e
    except (ValidationError, GeometryError) as e:
        raise ConfigError(f"Invalid config {path}: {e.message}") from e


def check_geometry(cfg: ExpT) -> ExpT:
    """Reject configs whose backbone/head geometry cannot be built."""
    params = cfg.dataset
    try:
        backbone = Backbone.build(params.channels, params.height, params.width, cfg.backbone)
        backbone.head_spec(
            params.class_count, cfg.head.ksize, stride=cfg.head.stride, padding=cfg.head.padding
        )
    except (GeometryError, pydantic.ValidationError) as e:
        raise ConfigError(f"Invalid geometry: {e}") from e
    return cfg


def resolve_seed(args: argparse.Namespace) -> int | None:
    return args.seed if args.seed is not None else settings.SEED


def record_timing(args: argparse.Namespace) -> bool:
    return settings.RECORD_TIMING and not args.no_timing


def with_data_seed(cfg: ExpT, seed: int | None) -> ExpT:
    """Point the shared dataset and backbone draws at ``seed``."""
    if seed is None:
        return cfg
    data = cfg.dataset.model_copy(update={"seed": seed})
    backbone = cfg.backbone.model_copy(update={"seed": seed})
    return cfg.model_copy(update={"dataset": data, "backbone": backbone})


# --- Subcommands ---


def cmd_bench(args: argparse.Namespace) -> int:
    seed = resolve_seed(args) or 0
    protocols = []
    try:
        for batches, kernels in itertools.product(args.batches, args.kernels):
            spec = ConvSpec.square(
                args.cin, kernels, args.hw, args.ksize, stride=args.stride, padding=args.pad
            )
            protocols.append(
                BenchmarkProtocol(
                    spec=spec,
                    batch_size=batches,
                    runs=args.runs,
                    weights=WeightInit(args.weights),
                    probes=args.probes,
                    seed=seed,
                    use_fd=not args.no_fd,
                    fd_cap=args.fd_cap,
                    dense_cap=args.dense_cap,
                    record_timing=record_timing(args),
                )
            )
    except (GeometryError, pydantic.ValidationError) as e:
        raise ConfigError(f"Invalid benchmark geometry: {e}") from e

    with CsvReportWriter(args.output, BENCH_CSV_COLUMNS) as writer:
        for protocol in protocols:
            summaries = summarize(benchmark_methods(protocol, args.jobs), protocol)
            writer.write_all(summaries)
            print(
                f"\nbatches={protocol.batch_size} kernels={protocol.spec.c_out} "
                f"runs={protocol.runs} weights={protocol.weights.value}"
            )
            print(render_bench_table(summaries))
    logger.info(f"Benchmark written to {args.output}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = check_geometry(load_config(args.config, TrainConfig))
    seed = resolve_seed(args)
    if seed is not None:
        cfg = cfg.model_copy(
            update={"optimizer": cfg.optimizer.model_copy(update={"seed": seed})}
        )
    records = run_training(cfg, record_timing=record_timing(args))
    write_csv(args.output, RUN_CSV_COLUMNS, records)
    final = records[-1]
    print(
        f"epochs={final.epoch} stop_reason={final.stop_reason.value if final.stop_reason else ''} "
        f"val_acc={final.val_acc:.4g} gen_gap={final.gen_gap:.4g} flatness={final.flatness:.4g}"
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = check_geometry(with_data_seed(load_config(args.config, SweepConfig), resolve_seed(args)))
    with CsvReportWriter(args.output, SWEEP_CSV_COLUMNS) as writer:
        rows = run_sweep(
            cfg, jobs=args.jobs, on_row=writer.write, record_timing=record_timing(args)
        )
    diverged = sum(r.stop_reason is StopReason.DIVERGED for r in rows)
    print(f"runs={len(rows)} diverged={diverged} output={args.output}")
    return 0


def cmd_correlate(args: argparse.Namespace) -> int:
    try:
        table = read_csv(args.input)
    except OSError as e:
        raise ConfigError(f"Cannot read {args.input}: {e}") from e
    x, y, excluded = usable_rows(table, args.x, args.y)
    result = correlate(x, y)
    write_json(args.output, result)
    print(
        f"n={result.n} excluded={excluded} spearman_rho={result.spearman_rho:.4g} "
        f"(p={result.spearman_p_value:.4g}) pearson_r={result.pearson_r:.4g} "
        f"[{result.pearson_ci_low:.4g}, {result.pearson_ci_high:.4g}] slope={result.slope:.4g}"
    )
    return 0


def _bound_defaults(args: argparse.Namespace) -> tuple[int, int]:
    """Sample size and feature dimension, falling back to the experiment config's head."""
    samples, m = args.samples, args.m
    if (samples is None or m is None) and args.config is not None:
        cfg = check_geometry(load_config(args.config, ExperimentConfig, strict=False))
        data, _, spec = build_setup(cfg)
        samples = samples if samples is not None else int(data.train_idx.size)
        m = m if m is not None else spec.param_count
    if samples is None or m is None:
        raise ConfigError("bound needs --samples and --m (or --config to derive them)")
    return samples, m


def cmd_bound(args: argparse.Namespace) -> int:
    samples, m = _bound_defaults(args)
    if args.calibrate_from is not None:
        x, y, excluded = usable_rows(read_csv(args.calibrate_from), "flatness", "gen_gap")
        seed = resolve_seed(args) or 0
        calibration = calibrate_envelope(x, y, samples, m, delta=args.delta, seed=seed)
        if args.output is not None:
            write_json(args.output, calibration)
        print(
            f"c1={calibration.c1:.17g} c2={calibration.c2:.17g} method={calibration.method} "
            f"holdout_coverage={calibration.holdout_coverage:.4g} excluded={excluded}"
        )
        return 0

    if args.kappa is None:
        raise ConfigError("bound needs --kappa unless --calibrate-from is given")
    value = bound_envelope(args.kappa, samples, m, args.c1, args.c2, args.delta)
    logger.debug(
        "Bound evaluated",
        extra={"props": {"bandwidth": optimal_bandwidth(samples, m), "envelope": value}},
    )
    print(f"{value:.17g}")
    return 0


def cmd_stop_compare(args: argparse.Namespace) -> int:
    cfg = check_geometry(
        with_data_seed(load_config(args.config, StopCompareConfig), resolve_seed(args))
    )
    summaries = compare_stopping_strategies(cfg, jobs=args.jobs, record_timing=record_timing(args))
    write_csv(args.output, STOP_COMPARE_CSV_COLUMNS, summaries)
    for s in summaries:
        print(
            f"{s.strategy.value:<10} runs={s.runs} epochs={s.mean_epochs:.4g} "
            f"val_acc={s.mean_val_acc:.4g} flatness={s.mean_final_flatness:.4g} "
            f"time_s={s.mean_time_s:.4g}"
        )
    return 0


# --- Parser ---


def _common_parser(default_output: str | None) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--seed",
        type=int,
        default=None,
        help="base seed; CONVFLAT_SEED supplies it when the flag is absent",
    )
    common.add_argument("--output", default=default_output, help="output file")
    common.add_argument(
        "--jobs",
        type=positive_int,
        default=settings.JOBS,
        help="parallel processes for independent runs (None: all cores)",
    )
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    common.add_argument("-q", "--quiet", action="count", default=0, help="less logging")
    common.add_argument(
        "--no-timing",
        action="store_true",
        help=(
            "wall-clock timing columns are recorded unless CONVFLAT_RECORD_TIMING=false; "
            "this flag writes 0.0 into them so outputs are byte-identical across runs"
        ),
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="convflat",
        description=(
            "Exact Hessian trace and relative flatness of the conv -> GAP -> softmax block."
        ),
        formatter_class=fmt,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser(
        "bench",
        parents=[_common_parser("bench.csv")],
        formatter_class=fmt,
        help="benchmark the symbolic trace against the oracles",
    )
    bench.add_argument("--cin", type=positive_int, default=3, help="input channels")
    bench.add_argument("--hw", type=positive_int, default=10, help="input height and width")
    bench.add_argument("--ksize", type=positive_int, default=3, help="kernel height and width")
    bench.add_argument("--stride", type=positive_int, default=1, help="convolution stride")
    bench.add_argument("--pad", type=non_negative_int, default=0, help="zero padding")
    bench.add_argument(
        "--batches", type=positive_int, nargs="+", default=[5], help="batch sizes B"
    )
    bench.add_argument(
        "--kernels", type=positive_int, nargs="+", default=[10], help="filter counts C_out"
    )
    bench.add_argument("--runs", type=positive_int, default=30, help="independent runs")
    bench.add_argument("--probes", type=positive_int, default=500, help="Hutchinson probes")
    bench.add_argument(
        "--weights",
        choices=[w.value for w in WeightInit],
        default=WeightInit.ONES.value,
        help="kernel init: all ones, or uniform(0, 1) scaled by 1e-4",
    )
    bench.add_argument("--no-fd", action="store_true", help="skip the finite-difference oracle")
    bench.add_argument(
        "--fd-cap", type=positive_int, default=settings.FD_PARAM_CAP, help="max C_out*d for fd"
    )
    bench.add_argument(
        "--dense-cap",
        type=positive_int,
        default=settings.DENSE_HESSIAN_CAP,
        help="max C_out*d for the dense Hessian",
    )
    bench.set_defaults(handler=cmd_bench)

    train = sub.add_parser(
        "train",
        parents=[_common_parser("train.csv")],
        formatter_class=fmt,
        help="train one model and write per-epoch records",
    )
    train.add_argument("--config", default=None, help="JSON training config")
    train.set_defaults(handler=cmd_train)

    sweep = sub.add_parser(
        "sweep",
        parents=[_common_parser("sweep.csv")],
        formatter_class=fmt,
        help="train a grid of models and write their final metrics",
    )
    sweep.add_argument("--config", default=None, help="JSON sweep config")
    sweep.set_defaults(handler=cmd_sweep)

    corr = sub.add_parser(
        "correlate",
        parents=[_common_parser("correlation.json")],
        formatter_class=fmt,
        help="regression and correlation statistics of two table columns",
    )
    corr.add_argument("--input", required=True, help="CSV table, e.g. a sweep output")
    corr.add_argument("--x", default="flatness", help="predictor column")
    corr.add_argument("--y", default="gen_gap", help="response column")
    corr.set_defaults(handler=cmd_correlate)

    bound = sub.add_parser(
        "bound",
        parents=[_common_parser(None)],
        formatter_class=fmt,
        help="evaluate or calibrate the generalization-bound envelope",
    )
    bound.add_argument("--kappa", type=float, default=None, help="relative flatness")
    bound.add_argument("--samples", type=positive_int, default=None, help="sample size S")
    bound.add_argument("--m", type=positive_int, default=None, help="feature dimension m")
    bound.add_argument("--c1", type=float, default=0.0, help="distributional constant C1")
    bound.add_argument("--c2", type=float, default=0.0, help="distributional constant C2")
    bound.add_argument("--delta", type=float, default=0.05, help="confidence parameter in (0, 1)")
    bound.add_argument(
        "--config", default=None, help="experiment config deriving --samples and --m"
    )
    bound.add_argument(
        "--calibrate-from", default=None, help="sweep CSV to calibrate c1 on (c2 = 0)"
    )
    bound.set_defaults(handler=cmd_bound)

    stop = sub.add_parser(
        "stop-compare",
        parents=[_common_parser("stop_compare.csv")],
        formatter_class=fmt,
        help="compare early-stopping strategies over seeds",
    )
    stop.add_argument("--config", default=None, help="JSON stop-comparison config")
    stop.set_defaults(handler=cmd_stop_compare)

    return parser


def _log_level(verbose: int, quiet: int) -> str:
    base = logging.getLevelName(settings.LOG_LEVEL.upper())
    if not isinstance(base, int):
        base = logging.INFO
    level = min(max(base - 10 * verbose + 10 * quiet, logging.DEBUG), logging.CRITICAL)
    return logging.getLevelName(level)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 2

    setup_logging(_log_level(args.verbose, args.quiet))
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except ConfigError as e:
        logger.error(f"Usage error: {e.message}", extra={"props": {"errors": e.errors}})
        print(f"convflat {args.command}: error: {e.message}", file=sys.stderr)
        return 2
    except ConvFlatError as e:
        logger.exception(f"{args.command} failed: {e.message}")
        return 1
    except Exception:
        logger.exception(f"{args.command} failed unexpectedly")
        return 1


if __name__ == "__main__":
    sys.exit(main())
