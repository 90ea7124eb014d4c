"""The federated iteration: local SGD steps, periodic averaging, baselines.

The global step clock starts at 0 and aggregations consume exactly the
indices 0, N, 2N, ...; between two aggregations every client takes N-1
mini-batch gradient steps, one per remaining index. The aggregation at index
0 averages the client initializations before any gradient step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from . import rng as rngmod
from .metrics import MetricsRecord, record_round
from .schedules import (
    LimitingWeights,
    StepSizeSchedule,
    event_times,
    step_size,
    validate_and_rank,
)
from .tasks import (
    ClassificationEval,
    RegressionClient,
    RegressionTask,
    SoftmaxClient,
    SoftmaxTask,
    closed_form_optimum,
    generate_classification_data,
    generate_regression_data,
    noise_sigma_from_snr,
)

if TYPE_CHECKING:
    from .config import ExperimentConfig

ALGORITHMS = ("proposed", "fedavg", "fedprox", "fednova")


class NonFiniteIterate(FloatingPointError):
    """A client weight vector left the finite range; the run is aborted."""


class DimensionMismatch(ValueError):
    """Client weight vectors disagree on dimension."""


class RequiresAnalyticGradient(ValueError):
    """Noise recording needs a task with an exact mean gradient."""


@dataclass(frozen=True)
class AlgorithmVariant:
    """Aggregation/update rule tag; fedprox carries its proximal strength."""

    name: str
    mu: float = 0.0

    def __post_init__(self) -> None:
        if self.name not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.name!r}; expected one of {ALGORITHMS}")
        if self.name == "fedprox" and not self.mu > 0:
            raise ValueError("fedprox requires mu > 0")


@dataclass
class ClientState:
    client_id: int
    w: np.ndarray
    schedule: StepSizeSchedule
    batch_rng: np.random.Generator


@dataclass
class FederatedState:
    clients: list[ClientState]
    w_bar: np.ndarray
    round_index: int
    global_step: int
    period: int
    algorithm: AlgorithmVariant


class NoiseLog:
    """Per-step gradient-noise records M_n, grouped by client.

    M is the mini-batch gradient's deviation from its exact conditional mean
    (the full-dataset gradient), negated to match the additive decomposition
    of the update rule; it is exactly zero-mean under the batch sampling.
    """

    def __init__(self, n_clients: int) -> None:
        self._steps: list[list[float]] = [[] for _ in range(n_clients)]
        self._noise: list[list[np.ndarray]] = [[] for _ in range(n_clients)]

    def record(self, client_id: int, a_n: float, noise: np.ndarray) -> None:
        self._steps[client_id].append(a_n)
        self._noise[client_id].append(noise)

    @property
    def n_clients(self) -> int:
        return len(self._steps)

    def client_arrays(self, client_id: int) -> tuple[np.ndarray, np.ndarray]:
        """(step sizes, noise vectors) for one client, in step order."""
        return np.asarray(self._steps[client_id]), np.stack(self._noise[client_id])


@dataclass(frozen=True)
class ClientNoiseStats:
    client_id: int
    n_steps: int
    mean: np.ndarray
    stderr: np.ndarray
    r_last: np.ndarray
    tail_variation: float


@dataclass(frozen=True)
class NoiseStats:
    clients: tuple[ClientNoiseStats, ...]
    pooled_steps: int
    pooled_mean: np.ndarray
    pooled_stderr: np.ndarray


def noise_realization_stats(log: NoiseLog) -> NoiseStats:
    """Summaries of the martingale diagnostics from a recorded run.

    Per client: the empirical mean of M with its standard error, the final
    value of the running sum R_n = sum_p a_p M_{p+1}, and the maximal
    distance of R_n from R_last over the second half of the run (a proxy for
    the almost-sure convergence of R_n).
    """
    per_client = []
    all_noise = []
    for i in range(log.n_clients):
        a, m = log.client_arrays(i)
        all_noise.append(m)
        r = np.cumsum(a[:, None] * m, axis=0)
        half = len(a) // 2
        tail = float(np.max(np.linalg.norm(r[half:] - r[-1], axis=1)))
        per_client.append(
            ClientNoiseStats(
                client_id=i,
                n_steps=len(a),
                mean=m.mean(axis=0),
                stderr=m.std(axis=0, ddof=1) / np.sqrt(len(a)),
                r_last=r[-1],
                tail_variation=tail,
            )
        )
    pooled = np.concatenate(all_noise, axis=0)
    return NoiseStats(
        clients=tuple(per_client),
        pooled_steps=pooled.shape[0],
        pooled_mean=pooled.mean(axis=0),
        pooled_stderr=pooled.std(axis=0, ddof=1) / np.sqrt(pooled.shape[0]),
    )


def local_step(
    client: ClientState,
    grad_source,
    m: int | None,
    step_index: int,
    algorithm: AlgorithmVariant,
    w_anchor: np.ndarray | None = None,
    a_n: float | None = None,
    noise_log: NoiseLog | None = None,
) -> ClientState:
    """One mini-batch gradient step w <- w - a_n * S_m for this client.

    ``m=None`` uses the exact full-dataset gradient (deterministic). For
    fedprox the gradient gains the proximal pull mu * (w - w_anchor) toward
    the most recent aggregate.
    """
    if a_n is None:
        a_n = step_size(client.schedule, step_index)
    if m is None:
        grad = grad_source.full_gradient(client.w)
    else:
        grad = grad_source.minibatch_grad(client.w, client.batch_rng, m)
    if noise_log is not None:
        noise_log.record(client.client_id, a_n, grad_source.full_gradient(client.w) - grad)
    if algorithm.name == "fedprox":
        grad = grad + algorithm.mu * (client.w - w_anchor)
    w_new = client.w - a_n * grad
    if not np.all(np.isfinite(w_new)):
        raise NonFiniteIterate(
            f"client {client.client_id} produced a non-finite iterate at step {step_index}"
        )
    client.w = w_new
    return client


def server_pseudo_gradient(w_prev: np.ndarray, client_ws: list[np.ndarray]) -> np.ndarray:
    """Mean client displacement (1/L) sum_i (w_i - w_prev)."""
    stacked = np.stack(client_ws)
    if stacked.shape[1:] != np.shape(w_prev):
        raise DimensionMismatch("client vectors and w_prev disagree on dimension")
    return stacked.mean(axis=0) - w_prev


def aggregate(state: FederatedState, local_steps_taken: np.ndarray | None = None) -> FederatedState:
    """Average the clients into w_bar and re-initialize every client with it.

    Must be called exactly at a multiple of the aggregation period; the step
    index is consumed by the averaging. For fednova the average is taken
    over per-client normalized displacements (Delta_i / tau_i) scaled by
    tau_eff = mean tau_i, which reduces to the plain mean under the uniform
    local-step counts used here.
    """
    if state.global_step % state.period != 0:
        raise ValueError(
            f"aggregation requested at step {state.global_step}, "
            f"not a multiple of N={state.period}"
        )
    try:
        ws = np.stack([c.w for c in state.clients])
    except ValueError as exc:
        raise DimensionMismatch("client weight vectors disagree on shape") from exc
    use_nova = (
        state.algorithm.name == "fednova"
        and local_steps_taken is not None
        and np.any(np.asarray(local_steps_taken) > 0)
    )
    if use_nova:
        tau = np.asarray(local_steps_taken, dtype=float)
        deltas = ws - state.w_bar
        w_new = state.w_bar + tau.mean() * (deltas / tau[:, None]).mean(axis=0)
    else:
        w_new = ws.mean(axis=0)
    state.w_bar = w_new
    for client in state.clients:
        client.w = w_new.copy()
    state.round_index = state.global_step // state.period
    state.global_step += 1
    return state


def run_round(
    state: FederatedState,
    clients_data: list,
    m: int | None,
    a_tables: list[np.ndarray] | None = None,
    noise_log: NoiseLog | None = None,
) -> FederatedState:
    """Advance one federated round: N-1 local steps per client, then average."""
    steps_taken = 0
    while state.global_step % state.period != 0:
        n = state.global_step
        for client, source in zip(state.clients, clients_data):
            a_n = a_tables[client.client_id][n] if a_tables is not None else None
            local_step(
                client,
                source,
                m,
                n,
                algorithm=state.algorithm,
                w_anchor=state.w_bar,
                a_n=a_n,
                noise_log=noise_log,
            )
        state.global_step += 1
        steps_taken += 1
    aggregate(state, np.full(len(state.clients), steps_taken))
    return state


# ---------------------------------------------------------------------------
# experiment assembly
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    records: list[MetricsRecord]
    wbar_history: np.ndarray  # (rounds_completed + 1, dim)
    event_times: np.ndarray  # (rounds + 1,)
    weights: np.ndarray  # effective per-client weights used in metrics
    limiting: LimitingWeights | None
    w_star: np.ndarray | None
    clients_data: list
    eval_ctx: ClassificationEval | None
    final_state: FederatedState
    noise_log: NoiseLog | None
    elapsed_seconds: float = 0.0


def _resolve_sigma_x(task_cfg, client_index: int, task_rng: np.random.Generator) -> float:
    sigma = task_cfg.sigma_x
    if isinstance(sigma, (int, float)):
        return float(sigma)
    if hasattr(sigma, "choices"):
        return float(task_rng.choice(np.asarray(sigma.choices, dtype=float)))
    return float(sigma[client_index])


def _resolve_w_true(task_cfg, client_index: int, task_rng: np.random.Generator) -> np.ndarray:
    if task_cfg.w_true is None:
        return task_rng.normal(0.0, task_cfg.sigma_w, size=task_cfg.dim)
    w = task_cfg.w_true
    if isinstance(w[0], (int, float)):
        return np.asarray(w, dtype=float)
    return np.asarray(w[client_index], dtype=float)


def _class_proportions(task_cfg, n_clients: int) -> list[np.ndarray]:
    """Per-client label proportions for the dominant-class partition.

    With a rare class configured, client 0 holds that class exclusively and
    the remaining clients split the other classes, each dominated by one of
    them; otherwise every client is dominated by class (i mod K).
    """
    k = task_cfg.classes
    frac = task_cfg.dominant_fraction
    out = []
    if task_cfg.rare_class >= 0:
        rare = task_cfg.rare_class
        others = [c for c in range(k) if c != rare]
        onehot = np.zeros(k)
        onehot[rare] = 1.0
        out.append(onehot)
        for i in range(1, n_clients):
            dom = others[(i - 1) % len(others)]
            props = np.zeros(k)
            rest = [c for c in others if c != dom]
            if rest:
                props[rest] = (1.0 - frac) / len(rest)
                props[dom] = frac
            else:
                props[dom] = 1.0
            out.append(props)
    else:
        for i in range(n_clients):
            dom = i % k
            props = np.full(k, (1.0 - frac) / (k - 1))
            props[dom] = frac
            out.append(props)
    return out


def build_clients(config: "ExperimentConfig") -> tuple[list, ClassificationEval | None]:
    """Materialize per-client tasks and datasets from the experiment config."""
    seed = config.seed
    n_clients = config.clients
    if config.task.kind == "regression":
        clients: list = []
        for i in range(n_clients):
            task_rng = rngmod.stream(seed, rngmod.DOMAIN_TASK, i)
            sigma_x = _resolve_sigma_x(config.task, i, task_rng)
            w_true = _resolve_w_true(config.task, i, task_rng)
            sigma_eps = noise_sigma_from_snr(sigma_x, w_true, config.task.snr_db)
            task = RegressionTask(
                w_true=w_true,
                sigma_x=sigma_x,
                sigma_eps=sigma_eps,
                n_samples=config.task.samples,
            )
            data = generate_regression_data(task, rngmod.stream(seed, rngmod.DOMAIN_DATA, i))
            clients.append(RegressionClient(task=task, data=data))
        return clients, None

    means_rng = rngmod.stream(seed, rngmod.DOMAIN_TASK, 0)
    means = means_rng.normal(0.0, config.task.mean_scale, size=(config.task.classes, config.task.dim))
    proportions = _class_proportions(config.task, n_clients)
    clients = []
    for i in range(n_clients):
        task = SoftmaxTask(class_means=means, sigma_x=config.task.sigma_x, n_samples=config.task.samples)
        x, y = generate_classification_data(
            task, proportions[i], rngmod.stream(seed, rngmod.DOMAIN_DATA, i)
        )
        clients.append(SoftmaxClient(task=task, x=x, y=y))
    test_task = SoftmaxTask(
        class_means=means, sigma_x=config.task.sigma_x, n_samples=config.task.test_samples
    )
    test_x, test_y = generate_classification_data(
        test_task,
        np.full(config.task.classes, 1.0 / config.task.classes),
        rngmod.stream(seed, rngmod.DOMAIN_TEST, 0),
    )
    eval_ctx = ClassificationEval(
        task=test_task, test_x=test_x, test_y=test_y, rare_class=config.task.rare_class
    )
    return clients, eval_ctx


def rank_schedules(schedules: tuple[StepSizeSchedule, ...]) -> tuple[LimitingWeights | None, np.ndarray, int]:
    """(limiting weights or None, effective metric weights, reference index).

    All-constant schedule sets (baseline modes) carry no limiting weights;
    metrics then weight every client equally.
    """
    if all(s.is_tapering for s in schedules):
        ref_index, limiting = validate_and_rank(list(schedules))
        return limiting, limiting.p, ref_index
    if all(not s.is_tapering for s in schedules):
        return None, np.ones(len(schedules)), 0
    raise ValueError("mixing tapering and constant schedules in one run is not supported")


def run_experiment(
    config: "ExperimentConfig",
    sink: Callable[[MetricsRecord], None] | None = None,
) -> ExperimentResult:
    """Run the configured experiment and collect one record per round.

    Records stream to ``sink`` as rounds complete, so a caller can persist
    partial results if the run aborts on a non-finite iterate.
    """
    started = time.perf_counter()
    clients_data, eval_ctx = build_clients(config)
    dim = clients_data[0].dim
    limiting, weights, ref_index = rank_schedules(config.schedules)
    w_star = None
    if config.task.kind == "regression":
        w_star = closed_form_optimum([c.task for c in clients_data], weights)
    if config.diagnostics.record_noise and not hasattr(clients_data[0], "full_gradient"):
        raise RequiresAnalyticGradient(
            "noise recording needs the exact mean gradient; only regression tasks provide it"
        )
    if config.batch_size is None and not hasattr(clients_data[0], "full_gradient"):
        raise ValueError("full-batch mode is only available for regression tasks")

    times = event_times(config.schedules[ref_index], config.period, config.rounds)
    total_steps = config.rounds * config.period + 1
    # vectorized power can differ from scalar power by one ulp; build the
    # lookup tables from the scalar path so both entry points agree bitwise
    distinct: dict[StepSizeSchedule, np.ndarray] = {}
    for sched in config.schedules:
        if sched not in distinct:
            distinct[sched] = np.array([step_size(sched, n) for n in range(total_steps)])
    a_tables = [distinct[s] for s in config.schedules]

    clients = []
    for i in range(config.clients):
        if config.init_std > 0:
            w0 = rngmod.stream(config.seed, rngmod.DOMAIN_INIT, i).normal(
                0.0, config.init_std, size=dim
            )
        else:
            w0 = np.zeros(dim)
        clients.append(
            ClientState(
                client_id=i,
                w=w0,
                schedule=config.schedules[i],
                batch_rng=rngmod.stream(config.seed, rngmod.DOMAIN_BATCH, i),
            )
        )
    state = FederatedState(
        clients=clients,
        w_bar=np.zeros(dim),
        round_index=0,
        global_step=0,
        period=config.period,
        algorithm=config.algorithm,
    )
    noise_log = NoiseLog(config.clients) if config.diagnostics.record_noise else None

    records: list[MetricsRecord] = []
    wbar_history: list[np.ndarray] = []

    def emit(prev_wbar: np.ndarray | None) -> None:
        rec = record_round(
            state,
            clients_data,
            weights,
            w_star=w_star,
            t_n=float(times[state.round_index]),
            prev_wbar=prev_wbar,
            eval_ctx=eval_ctx,
            include_wbar=config.diagnostics.dump_wbar,
        )
        records.append(rec)
        wbar_history.append(state.w_bar.copy())
        if sink is not None:
            sink(rec)

    aggregate(state)  # round 0: average the initializations
    emit(prev_wbar=None)
    for _ in range(config.rounds):
        prev = state.w_bar.copy()
        run_round(state, clients_data, config.batch_size, a_tables, noise_log)
        emit(prev_wbar=prev)

    return ExperimentResult(
        records=records,
        wbar_history=np.stack(wbar_history),
        event_times=times,
        weights=weights,
        limiting=limiting,
        w_star=w_star,
        clients_data=clients_data,
        eval_ctx=eval_ctx,
        final_state=state,
        noise_log=noise_log,
        elapsed_seconds=time.perf_counter() - started,
    )
