"""Command-line front end: run, sweep, compare-baselines, classify.

Every command reads a TOML config, applies flag overrides, writes one CSV
per run plus the normalized config used, and exits 0 on success, 1 on
validation errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from .config import (
    ExperimentConfig,
    ValidationError,
    dump_config,
    load_config,
)
from .engine import (
    AlgorithmVariant,
    ExperimentResult,
    NonFiniteIterate,
    run_experiment,
)
from .metrics import (
    IoFailure,
    MetricsRecord,
    classification_columns,
    regression_columns,
    write_csv,
)
from .ode import InterpolatedPath, horizon_rounds, tracking_error
from .schedules import StepSizeSchedule

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

SWEEP_PARAMETERS = ("delta", "snr_db", "N", "sigma_w", "sigma_x-set")


def _columns(config: ExperimentConfig) -> list[str]:
    if config.task.kind == "classification":
        return classification_columns()
    dim = config.task.dim if config.diagnostics.dump_wbar else 0
    return regression_columns(config.clients, dim)


def _fill_tracking(config: ExperimentConfig, result: ExperimentResult) -> None:
    """Attach the tracking-error series to the records inside its window."""
    if result.limiting is None:
        print("tracking diagnostic skipped: constant schedules carry no limiting ODE", file=sys.stderr)
        return
    n_start = config.diagnostics.tracking_start_round
    path = InterpolatedPath(times=result.event_times, values=result.wbar_history)
    m = horizon_rounds(result.event_times, n_start, config.diagnostics.tracking_horizon)
    m = min(m, len(result.event_times) - 1 - n_start)
    if m < 1:
        return
    errors = tracking_error(path, result.limiting, result.clients_data, n_start, m)
    for offset, err in enumerate(errors, start=1):
        result.records[n_start + offset].tracking_error = float(err)


def _run_to_csv(config: ExperimentConfig, csv_path: Path) -> ExperimentResult:
    """Run one experiment, always flushing collected records to csv_path."""
    records: list[MetricsRecord] = []
    try:
        result = run_experiment(config, sink=records.append)
    except NonFiniteIterate:
        write_csv(records, csv_path, columns=_columns(config))
        raise
    if config.diagnostics.tracking and config.task.kind == "regression":
        _fill_tracking(config, result)
    write_csv(result.records, csv_path, columns=_columns(config))
    return result


def _write_config(config: ExperimentConfig, path: Path) -> None:
    path.write_text(dump_config(config), encoding="utf-8")


def _tail(values: list[float], fraction: float = 0.1) -> list[float]:
    keep = max(1, int(len(values) * fraction))
    return values[-keep:]


def cmd_run(config: ExperimentConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config(config, out_dir / "config.toml")
    result = _run_to_csv(config, out_dir / "metrics.csv")
    last = result.records[-1]
    if last.kind == "regression":
        print(
            f"final round {last.round_index}: param_error={last.param_error:.6g} "
            f"agg_grad_norm={last.agg_grad_norm:.6g} delta_wbar={last.delta_wbar or 0.0:.6g}"
        )
    else:
        print(
            f"final round {last.round_index}: test_loss={last.test_loss:.6g} "
            f"test_acc={last.test_acc:.4f} delta_wbar={last.delta_wbar or 0.0:.6g}"
        )
    return EXIT_OK


def _sweep_configs(config: ExperimentConfig, parameter: str, values: list) -> list[ExperimentConfig]:
    configs = []
    for value in values:
        if parameter == "delta":
            scheds = tuple(
                StepSizeSchedule.tapering(s.c, float(value), unsafe=config.unsafe_delta)
                for s in config.schedules
            )
            configs.append(replace(config, schedules=scheds))
        elif parameter == "snr_db":
            configs.append(replace(config, task=replace(config.task, snr_db=float(value))))
        elif parameter == "N":
            configs.append(replace(config, period=int(value)))
        elif parameter == "sigma_w":
            configs.append(replace(config, task=replace(config.task, sigma_w=float(value))))
        elif parameter == "sigma_x-set":
            from .config import PerClientChoice

            choice = PerClientChoice(tuple(float(v) for v in value))
            configs.append(replace(config, task=replace(config.task, sigma_x=choice)))
        else:
            raise ValidationError("sweep.parameter", f"expected one of {SWEEP_PARAMETERS}")
    return configs


def cmd_sweep(config: ExperimentConfig, parameter: str, values: list, out_dir: Path) -> int:
    if parameter not in SWEEP_PARAMETERS:
        raise ValidationError("sweep.parameter", f"expected one of {SWEEP_PARAMETERS}, got {parameter!r}")
    if config.task.kind != "regression" and parameter in ("snr_db", "sigma_w", "sigma_x-set"):
        raise ValidationError("sweep.parameter", f"{parameter} applies to regression tasks only")
    if not values:
        raise ValidationError("sweep.values", "need at least one value")
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {"parameter": parameter, "runs": []}
    for i, (value, run_config) in enumerate(zip(values, _sweep_configs(config, parameter, values))):
        stem = f"{parameter.replace('-', '_')}_{i:02d}"
        _write_config(run_config, out_dir / f"{stem}.config.toml")
        _run_to_csv(run_config, out_dir / f"{stem}.csv")
        index["runs"].append({"value": value, "csv": f"{stem}.csv"})
        print(f"{parameter}={value}: wrote {stem}.csv")
    (out_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


BASELINE_ALGORITHMS = ("proposed", "fedavg", "fedprox", "fednova")


def cmd_compare_baselines(config: ExperimentConfig, out_dir: Path) -> int:
    """Run all algorithms under constant and tapering schedules, same seed."""
    if config.task.kind != "regression":
        raise ValidationError("task.kind", "baseline comparison is defined for regression tasks")
    out_dir.mkdir(parents=True, exist_ok=True)
    constant = (StepSizeSchedule.constant(0.1),) * config.clients
    tapering = (StepSizeSchedule.tapering(0.1, 0.76),) * config.clients
    summary_rows = []
    for family, scheds in (("constant", constant), ("tapering", tapering)):
        for name in BASELINE_ALGORITHMS:
            algo = AlgorithmVariant(name, mu=0.1) if name == "fedprox" else AlgorithmVariant(name)
            run_config = replace(config, algorithm=algo, schedules=scheds)
            stem = f"{name}_{family}"
            _write_config(run_config, out_dir / f"{stem}.config.toml")
            diverged_at = None
            try:
                result = _run_to_csv(run_config, out_dir / f"{stem}.csv")
                records = result.records
            except NonFiniteIterate as exc:
                print(f"{stem}: {exc}", file=sys.stderr)
                from .metrics import read_records

                records = read_records(out_dir / f"{stem}.csv", "regression")
                diverged_at = records[-1].round_index if records else 0
            deltas = [r.delta_wbar for r in records if r.delta_wbar is not None]
            summary_rows.append(
                {
                    "algorithm": name,
                    "schedule": family,
                    "tail_delta_wbar_median": float(np.median(_tail(deltas))) if deltas else float("nan"),
                    "final_param_error": records[-1].param_error if records else float("nan"),
                    "diverged_at_round": diverged_at,
                }
            )
            status = f"diverged at round {diverged_at}" if diverged_at is not None else "ok"
            print(f"{stem}: {status}")
    (out_dir / "summary.json").write_text(json.dumps(summary_rows, indent=2) + "\n", encoding="utf-8")
    print(f"{'algorithm':<10} {'schedule':<10} {'tail median dW':<16} {'final param err'}")
    for row in summary_rows:
        print(
            f"{row['algorithm']:<10} {row['schedule']:<10} "
            f"{row['tail_delta_wbar_median']:<16.6g} {row['final_param_error']:.6g}"
        )
    return EXIT_OK


CLASSIFY_REGIMES = ("uniform", "finite", "vanishing")


def classify_regime_schedules(config: ExperimentConfig, regime: str) -> tuple[StepSizeSchedule, ...]:
    """Schedules for the three rare-class influence regimes.

    The rare-class client is client 1. Uniform gives everyone the base
    schedule (all ratios 1); finite keeps the rare client at the base scale
    and slows the rest tenfold (ratios 0.1); vanishing further switches the
    rare client to a 1/n decay so its limiting ratio is 0. The vanishing
    schedule shares the other clients' scale: a larger prefactor would keep
    the rare client's step size dominant for ~1e4 steps (the ratio decays
    only like n^-0.24) and mask the limit at experiment scale.
    """
    base = config.schedules[0]
    c, delta = base.c, base.delta
    if regime == "uniform":
        return (StepSizeSchedule.tapering(c, delta),) * config.clients
    others = StepSizeSchedule.tapering(c / 10.0, delta)
    if regime == "finite":
        return (StepSizeSchedule.tapering(c, delta),) + (others,) * (config.clients - 1)
    if regime == "vanishing":
        return (StepSizeSchedule.tapering(c / 10.0, 1.0),) + (others,) * (config.clients - 1)
    raise ValidationError("classify.regime", f"expected one of {CLASSIFY_REGIMES}")


def cmd_classify(config: ExperimentConfig, out_dir: Path) -> int:
    """Run the rare-class experiment under the three step-size regimes."""
    if config.task.kind != "classification":
        raise ValidationError("task.kind", "classify requires a classification task")
    task = config.task
    if task.rare_class < 0:
        task = replace(task, rare_class=task.classes - 1)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for regime in CLASSIFY_REGIMES:
        run_config = replace(
            config, task=task, schedules=classify_regime_schedules(config, regime)
        )
        _write_config(run_config, out_dir / f"{regime}.config.toml")
        result = _run_to_csv(run_config, out_dir / f"{regime}.csv")
        records = result.records
        tail = _tail([r.rare_class_acc for r in records], 0.2)
        summary[regime] = {
            "final_test_acc": records[-1].test_acc,
            "tail_rare_class_acc": float(np.mean(tail)),
            "majority_baseline": result.eval_ctx.majority_baseline(),
        }
        print(
            f"{regime}: test_acc={records[-1].test_acc:.4f} "
            f"rare_class_acc(tail)={summary[regime]['tail_rare_class_acc']:.4f}"
        )
    (out_dir / "classify_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedtaper",
        description="Federated mini-batch SGD simulator with tapering step sizes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--rounds", type=int, default=None, help="override the round count")
        p.add_argument(
            "--unsafe-delta",
            action="store_true",
            help="accept decay exponents outside (3/4, 1]; results are unsupported by the theory",
        )

    common(sub.add_parser("run", help="run one experiment"))
    sweep = sub.add_parser("sweep", help="run one experiment per swept value")
    common(sweep)
    sweep.add_argument("--param", required=True, help=f"one of {SWEEP_PARAMETERS}")
    sweep.add_argument(
        "--values",
        required=True,
        help="TOML array of swept values, e.g. '[0.76, 0.825, 0.9]'",
    )
    common(sub.add_parser("compare-baselines", help="proposed vs FedAvg/FedProx/FedNova"))
    common(sub.add_parser("classify", help="rare-class classification regimes"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, unsafe_delta=args.unsafe_delta)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.rounds is not None:
            if args.rounds < 0:
                raise ValidationError("rounds", "rounds must be >= 0")
            config = replace(config, rounds=args.rounds)
        out_dir = Path(args.out) if args.out is not None else Path(config.output_dir)
        if config.unsafe_delta and any(
            s.is_tapering and not 0.75 < s.delta <= 1.0 for s in config.schedules
        ):
            print(
                "warning: decay exponent outside (3/4, 1]; results are unsupported by the theory",
                file=sys.stderr,
            )
        if args.command == "run":
            return cmd_run(config, out_dir)
        if args.command == "sweep":
            try:
                values = tomllib.loads(f"v = {args.values}")["v"]
            except tomllib.TOMLDecodeError as exc:
                raise ValidationError("sweep.values", f"not a TOML array: {exc}") from exc
            return cmd_sweep(config, args.param, values, out_dir)
        if args.command == "compare-baselines":
            return cmd_compare_baselines(config, out_dir)
        return cmd_classify(config, out_dir)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NonFiniteIterate, IoFailure, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())
