"""Experiment configuration: TOML parsing, validation, and normalized dumps.

parse_config resolves every default, so dumping the parsed config yields a
fully self-describing file; parsing that dump reproduces the config exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .engine import ALGORITHMS, AlgorithmVariant
from .schedules import StepSizeSchedule


class ValidationError(ValueError):
    """Invalid configuration; carries the offending field path."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class PerClientChoice:
    """A value drawn independently per client from a finite set."""

    choices: tuple[float, ...]


@dataclass(frozen=True)
class RegressionTaskConfig:
    kind = "regression"
    dim: int = 3
    sigma_x: float | tuple[float, ...] | PerClientChoice = 5.0
    sigma_w: float = 5.0
    w_true: tuple | None = None
    snr_db: float = 10.0
    samples: int = 5000


@dataclass(frozen=True)
class ClassificationTaskConfig:
    kind = "classification"
    classes: int = 5
    dim: int = 8
    sigma_x: float = 1.5
    mean_scale: float = 2.5
    dominant_fraction: float = 0.7
    samples: int = 1500
    test_samples: int = 2500
    rare_class: int = -1


@dataclass(frozen=True)
class DiagnosticsConfig:
    tracking: bool = False
    tracking_start_round: int = 0
    tracking_horizon: float = 1.0
    record_noise: bool = False
    dump_wbar: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    task: RegressionTaskConfig | ClassificationTaskConfig = field(default_factory=RegressionTaskConfig)
    clients: int = 10
    period: int = 5
    batch_size: int | None = 50
    rounds: int = 2000
    algorithm: AlgorithmVariant = field(default_factory=lambda: AlgorithmVariant("proposed"))
    schedules: tuple[StepSizeSchedule, ...] = ()
    init_std: float = 20.0
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    unsafe_delta: bool = False
    output_dir: str = "out"


DEFAULT_SCHEDULE = StepSizeSchedule.tapering(0.1, 0.76)


def _require(table: dict, allowed: set[str], path: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ValidationError(f"{path}.{sorted(unknown)[0]}", "unknown key")


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(path, f"expected an integer, got {value!r}")
    return value


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, f"expected a number, got {value!r}")
    return float(value)


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ValidationError(path, f"expected a boolean, got {value!r}")
    return value


def _parse_schedule(entry: dict, path: str, unsafe: bool) -> StepSizeSchedule:
    if not isinstance(entry, dict):
        raise ValidationError(path, "expected a table like {c = 0.1, delta = 0.76} or {constant = 0.1}")
    if "constant" in entry:
        _require(entry, {"constant"}, path)
        return StepSizeSchedule.constant(_as_float(entry["constant"], f"{path}.constant"))
    _require(entry, {"c", "delta"}, path)
    if "c" not in entry or "delta" not in entry:
        raise ValidationError(path, "tapering schedules need both c and delta")
    c = _as_float(entry["c"], f"{path}.c")
    delta = _as_float(entry["delta"], f"{path}.delta")
    try:
        return StepSizeSchedule.tapering(c, delta, unsafe=unsafe)
    except ValueError as exc:
        raise ValidationError(path, f"{exc} (pass --unsafe-delta to explore outside the band)") from exc


def _parse_schedules(raw, n_clients: int, unsafe: bool) -> tuple[StepSizeSchedule, ...]:
    if raw is None:
        return (DEFAULT_SCHEDULE,) * n_clients
    if isinstance(raw, dict):
        return (_parse_schedule(raw, "schedules", unsafe),) * n_clients
    if isinstance(raw, list):
        if len(raw) != n_clients:
            raise ValidationError(
                "schedules", f"got {len(raw)} entries for {n_clients} clients"
            )
        return tuple(
            _parse_schedule(entry, f"schedules[{i}]", unsafe) for i, entry in enumerate(raw)
        )
    raise ValidationError("schedules", "expected a table or an array of tables")


def _parse_regression(table: dict) -> RegressionTaskConfig:
    _require(table, {"kind", "dim", "sigma_x", "sigma_w", "w_true", "snr_db", "samples"}, "task")
    dim = _as_int(table.get("dim", 3), "task.dim")
    if dim < 1:
        raise ValidationError("task.dim", "dimension must be >= 1")
    samples = _as_int(table.get("samples", 5000), "task.samples")
    if samples < 1:
        raise ValidationError("task.samples", "need at least one sample")
    sigma_w = _as_float(table.get("sigma_w", 5.0), "task.sigma_w")

    raw_sigma = table.get("sigma_x", 5.0)
    sigma_x: float | tuple[float, ...] | PerClientChoice
    if isinstance(raw_sigma, dict):
        _require(raw_sigma, {"choices"}, "task.sigma_x")
        choices = raw_sigma.get("choices")
        if not isinstance(choices, list) or not choices:
            raise ValidationError("task.sigma_x.choices", "expected a nonempty array")
        sigma_x = PerClientChoice(
            tuple(_as_float(v, f"task.sigma_x.choices[{i}]") for i, v in enumerate(choices))
        )
        bad = [v for v in sigma_x.choices if v <= 0]
    elif isinstance(raw_sigma, list):
        sigma_x = tuple(_as_float(v, f"task.sigma_x[{i}]") for i, v in enumerate(raw_sigma))
        bad = [v for v in sigma_x if v <= 0]
    else:
        sigma_x = _as_float(raw_sigma, "task.sigma_x")
        bad = [sigma_x] if sigma_x <= 0 else []
    if bad:
        raise ValidationError("task.sigma_x", "feature std must be positive")

    raw_w = table.get("w_true")
    w_true: tuple | None = None
    if raw_w is not None:
        if not isinstance(raw_w, list) or not raw_w:
            raise ValidationError("task.w_true", "expected a nonempty array")
        if isinstance(raw_w[0], list):
            w_true = tuple(
                tuple(_as_float(v, f"task.w_true[{i}][{j}]") for j, v in enumerate(row))
                for i, row in enumerate(raw_w)
            )
            if any(len(row) != dim for row in w_true):
                raise ValidationError("task.w_true", f"rows must have length dim={dim}")
        else:
            w_true = tuple(_as_float(v, f"task.w_true[{i}]") for i, v in enumerate(raw_w))
            if len(w_true) != dim:
                raise ValidationError("task.w_true", f"length must equal dim={dim}")
    return RegressionTaskConfig(
        dim=dim,
        sigma_x=sigma_x,
        sigma_w=sigma_w,
        w_true=w_true,
        snr_db=_as_float(table.get("snr_db", 10.0), "task.snr_db"),
        samples=samples,
    )


def _parse_classification(table: dict) -> ClassificationTaskConfig:
    _require(
        table,
        {
            "kind",
            "classes",
            "dim",
            "sigma_x",
            "mean_scale",
            "dominant_fraction",
            "samples",
            "test_samples",
            "rare_class",
        },
        "task",
    )
    cfg = ClassificationTaskConfig(
        classes=_as_int(table.get("classes", 5), "task.classes"),
        dim=_as_int(table.get("dim", 8), "task.dim"),
        sigma_x=_as_float(table.get("sigma_x", 1.5), "task.sigma_x"),
        mean_scale=_as_float(table.get("mean_scale", 2.5), "task.mean_scale"),
        dominant_fraction=_as_float(table.get("dominant_fraction", 0.7), "task.dominant_fraction"),
        samples=_as_int(table.get("samples", 1500), "task.samples"),
        test_samples=_as_int(table.get("test_samples", 2500), "task.test_samples"),
        rare_class=_as_int(table.get("rare_class", -1), "task.rare_class"),
    )
    if cfg.classes < 2:
        raise ValidationError("task.classes", "need at least two classes")
    if cfg.dim < 1:
        raise ValidationError("task.dim", "dimension must be >= 1")
    if cfg.sigma_x <= 0:
        raise ValidationError("task.sigma_x", "feature std must be positive")
    if not 0.0 < cfg.dominant_fraction <= 1.0:
        raise ValidationError("task.dominant_fraction", "must lie in (0, 1]")
    if cfg.samples < 1 or cfg.test_samples < 1:
        raise ValidationError("task.samples", "need at least one sample")
    if cfg.rare_class >= cfg.classes:
        raise ValidationError("task.rare_class", f"must be below classes={cfg.classes}")
    return cfg


def _parse_algorithm(table: dict | None) -> AlgorithmVariant:
    if table is None:
        return AlgorithmVariant("proposed")
    _require(table, {"name", "mu"}, "algorithm")
    name = table.get("name", "proposed")
    if name not in ALGORITHMS:
        raise ValidationError("algorithm.name", f"expected one of {ALGORITHMS}, got {name!r}")
    if name == "fedprox":
        mu = _as_float(table.get("mu", 0.1), "algorithm.mu")
        if mu <= 0:
            raise ValidationError("algorithm.mu", "proximal strength must be positive")
        return AlgorithmVariant(name, mu=mu)
    if "mu" in table:
        raise ValidationError("algorithm.mu", f"mu only applies to fedprox, not {name}")
    return AlgorithmVariant(name)


def _parse_diagnostics(table: dict | None) -> DiagnosticsConfig:
    if table is None:
        return DiagnosticsConfig()
    _require(
        table,
        {"tracking", "tracking_start_round", "tracking_horizon", "record_noise", "dump_wbar"},
        "diagnostics",
    )
    return DiagnosticsConfig(
        tracking=_as_bool(table.get("tracking", False), "diagnostics.tracking"),
        tracking_start_round=_as_int(table.get("tracking_start_round", 0), "diagnostics.tracking_start_round"),
        tracking_horizon=_as_float(table.get("tracking_horizon", 1.0), "diagnostics.tracking_horizon"),
        record_noise=_as_bool(table.get("record_noise", False), "diagnostics.record_noise"),
        dump_wbar=_as_bool(table.get("dump_wbar", False), "diagnostics.dump_wbar"),
    )


def parse_config(text: str, unsafe_delta: bool = False) -> ExperimentConfig:
    """Parse and validate a TOML experiment config, resolving all defaults."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError("<toml>", str(exc)) from exc
    _require(
        raw,
        {
            "seed",
            "clients",
            "period",
            "batch_size",
            "rounds",
            "init_std",
            "unsafe_delta",
            "output_dir",
            "task",
            "algorithm",
            "schedules",
            "diagnostics",
        },
        "<config>",
    )
    if "seed" not in raw:
        raise ValidationError("seed", "a master seed is required")
    seed = _as_int(raw["seed"], "seed")
    clients = _as_int(raw.get("clients", 10), "clients")
    if clients < 1:
        raise ValidationError("clients", "need at least one client")
    period = _as_int(raw.get("period", 5), "period")
    if period < 2:
        raise ValidationError("period", "aggregation period must be >= 2")
    batch_raw = _as_int(raw.get("batch_size", 50), "batch_size")
    if batch_raw < 0:
        raise ValidationError("batch_size", "batch size must be >= 1 (or 0 for full-batch)")
    batch_size: int | None = batch_raw if batch_raw > 0 else None
    rounds = _as_int(raw.get("rounds", 2000), "rounds")
    if rounds < 0:
        raise ValidationError("rounds", "rounds must be >= 0")
    init_std = _as_float(raw.get("init_std", 20.0), "init_std")
    if init_std < 0:
        raise ValidationError("init_std", "init std must be >= 0")
    unsafe = unsafe_delta or _as_bool(raw.get("unsafe_delta", False), "unsafe_delta")

    task_table = raw.get("task", {})
    if not isinstance(task_table, dict):
        raise ValidationError("task", "expected a table")
    kind = task_table.get("kind", "regression")
    if kind == "regression":
        task: RegressionTaskConfig | ClassificationTaskConfig = _parse_regression(task_table)
        if isinstance(task.sigma_x, tuple) and len(task.sigma_x) != clients:
            raise ValidationError("task.sigma_x", f"got {len(task.sigma_x)} values for {clients} clients")
        if task.w_true is not None and isinstance(task.w_true[0], tuple) and len(task.w_true) != clients:
            raise ValidationError("task.w_true", f"got {len(task.w_true)} rows for {clients} clients")
    elif kind == "classification":
        task = _parse_classification(task_table)
    else:
        raise ValidationError("task.kind", f"expected regression or classification, got {kind!r}")

    diagnostics = _parse_diagnostics(raw.get("diagnostics"))
    if diagnostics.tracking and diagnostics.tracking_start_round >= rounds and rounds > 0:
        raise ValidationError("diagnostics.tracking_start_round", f"must be below rounds={rounds}")

    schedules = _parse_schedules(raw.get("schedules"), clients, unsafe)
    tapering = [s.is_tapering for s in schedules]
    if any(tapering) and not all(tapering):
        raise ValidationError("schedules", "mixing tapering and constant schedules is not supported")

    return ExperimentConfig(
        seed=seed,
        task=task,
        clients=clients,
        period=period,
        batch_size=batch_size,
        rounds=rounds,
        algorithm=_parse_algorithm(raw.get("algorithm")),
        schedules=schedules,
        init_std=init_std,
        diagnostics=diagnostics,
        unsafe_delta=unsafe,
        output_dir=str(raw.get("output_dir", "out")),
    )


def load_config(path, unsafe_delta: bool = False) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), unsafe_delta=unsafe_delta)


def with_overrides(config: ExperimentConfig, **kwargs) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in kwargs.items() if v is not None})


# ---------------------------------------------------------------------------
# normalized dump
# ---------------------------------------------------------------------------


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int,)):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {value!r}")


def _schedule_entry(sched: StepSizeSchedule) -> str:
    if sched.is_tapering:
        return f"{{ c = {_toml_value(sched.c)}, delta = {_toml_value(sched.delta)} }}"
    return f"{{ constant = {_toml_value(sched.c)} }}"


def dump_config(config: ExperimentConfig) -> str:
    """Serialize a config to TOML such that parse_config(dump(c)) == c."""
    lines = [
        f"seed = {_toml_value(config.seed)}",
        f"clients = {_toml_value(config.clients)}",
        f"period = {_toml_value(config.period)}",
        f"batch_size = {_toml_value(config.batch_size if config.batch_size is not None else 0)}",
        f"rounds = {_toml_value(config.rounds)}",
        f"init_std = {_toml_value(config.init_std)}",
        f"unsafe_delta = {_toml_value(config.unsafe_delta)}",
        f"output_dir = {_toml_value(config.output_dir)}",
        "schedules = [",
    ]
    lines += [f"    {_schedule_entry(s)}," for s in config.schedules]
    lines.append("]")
    lines.append("")
    lines.append("[algorithm]")
    lines.append(f'name = "{config.algorithm.name}"')
    if config.algorithm.name == "fedprox":
        lines.append(f"mu = {_toml_value(config.algorithm.mu)}")
    lines.append("")
    lines.append("[task]")
    task = config.task
    if task.kind == "regression":
        lines.append('kind = "regression"')
        lines.append(f"dim = {_toml_value(task.dim)}")
        if isinstance(task.sigma_x, PerClientChoice):
            lines.append(f"sigma_x = {{ choices = {_toml_value(task.sigma_x.choices)} }}")
        else:
            lines.append(f"sigma_x = {_toml_value(task.sigma_x)}")
        lines.append(f"sigma_w = {_toml_value(task.sigma_w)}")
        if task.w_true is not None:
            lines.append(f"w_true = {_toml_value(task.w_true)}")
        lines.append(f"snr_db = {_toml_value(task.snr_db)}")
        lines.append(f"samples = {_toml_value(task.samples)}")
    else:
        lines.append('kind = "classification"')
        lines.append(f"classes = {_toml_value(task.classes)}")
        lines.append(f"dim = {_toml_value(task.dim)}")
        lines.append(f"sigma_x = {_toml_value(task.sigma_x)}")
        lines.append(f"mean_scale = {_toml_value(task.mean_scale)}")
        lines.append(f"dominant_fraction = {_toml_value(task.dominant_fraction)}")
        lines.append(f"samples = {_toml_value(task.samples)}")
        lines.append(f"test_samples = {_toml_value(task.test_samples)}")
        lines.append(f"rare_class = {_toml_value(task.rare_class)}")
    lines.append("")
    lines.append("[diagnostics]")
    diag = config.diagnostics
    lines.append(f"tracking = {_toml_value(diag.tracking)}")
    lines.append(f"tracking_start_round = {_toml_value(diag.tracking_start_round)}")
    lines.append(f"tracking_horizon = {_toml_value(diag.tracking_horizon)}")
    lines.append(f"record_noise = {_toml_value(diag.record_noise)}")
    lines.append(f"dump_wbar = {_toml_value(diag.dump_wbar)}")
    return "\n".join(lines) + "\n"
