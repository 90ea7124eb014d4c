"""The limiting-ODE diagnostic: RHS assembly, RK4 integration, tracking error.

The aggregate iterates, replotted against the cumulative-step-size clock,
should shadow the flow of w' = (1/L) sum_i p_i h_i(w). This module
integrates that flow between the recorded event times and measures how far
the interpolated iterate path drifts from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class StepTooLarge(ValueError):
    """An inter-event gap is too small to subdivide meaningfully."""


class OutOfRange(ValueError):
    """Interpolation was requested outside the knot range."""


@dataclass
class OdeTrajectory:
    """Flow samples at the event times; times[0] is the launch time."""

    times: np.ndarray
    values: np.ndarray  # (len(times), dim)

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")


@dataclass
class InterpolatedPath:
    """Piecewise-linear path through the per-round aggregates."""

    times: np.ndarray  # knot times T_n
    values: np.ndarray  # knot values w_bar at round n

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values):
            raise ValueError("one knot value per knot time is required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("knot times must be strictly increasing")


def ode_rhs(weights, tasks: list, w: np.ndarray) -> np.ndarray:
    """(1/L) sum_i p_i h_i(w) using each client's analytic population h."""
    p = weights.p if hasattr(weights, "p") else np.asarray(weights, dtype=float)
    acc = np.zeros_like(np.asarray(w, dtype=float))
    for pi, task in zip(p, tasks):
        if pi != 0.0:
            acc += pi * task.population_h(w)
    return acc / len(tasks)


def _rk4_step(rhs: Callable[[np.ndarray], np.ndarray], w: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(w)
    k2 = rhs(w + 0.5 * h * k1)
    k3 = rhs(w + 0.5 * h * k2)
    k4 = rhs(w + h * k3)
    return w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    w0: np.ndarray,
    times: np.ndarray,
    h_max: float = 1e-2,
) -> OdeTrajectory:
    """Classical RK4 through the given event times.

    Each inter-event interval is subdivided into equal substeps no longer
    than h_max, and the state is recorded at every event time.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 1:
        raise ValueError("at least the launch time is required")
    if h_max <= 0:
        raise ValueError("h_max must be positive")
    w = np.asarray(w0, dtype=float).copy()
    out = [w.copy()]
    eps = np.finfo(float).eps
    for t0, t1 in zip(times[:-1], times[1:]):
        gap = t1 - t0
        if gap <= 0:
            raise ValueError("event times must be strictly increasing")
        if gap < eps * max(1.0, abs(t1)):
            raise StepTooLarge(f"gap {gap} below float resolution at t={t1}")
        nsub = max(1, int(np.ceil(gap / h_max)))
        h = gap / nsub
        for _ in range(nsub):
            w = _rk4_step(rhs, w, h)
        out.append(w.copy())
    return OdeTrajectory(times=times.copy(), values=np.stack(out))


def interpolate(path: InterpolatedPath, t: float) -> np.ndarray:
    """Piecewise-linear value at time t; exact at the knots."""
    times = path.times
    if t < times[0] or t > times[-1]:
        raise OutOfRange(f"t={t} outside [{times[0]}, {times[-1]}]")
    if t == times[-1]:
        return path.values[-1].copy()
    i = int(np.searchsorted(times, t, side="right")) - 1
    theta = (t - times[i]) / (times[i + 1] - times[i])
    return path.values[i] + (path.values[i + 1] - path.values[i]) * theta


def horizon_rounds(times: np.ndarray, n_start: int, horizon: float) -> int:
    """Largest m with times[n_start + m] <= times[n_start] + horizon."""
    if not 0 <= n_start < len(times):
        raise ValueError(f"n_start={n_start} outside the recorded path")
    limit = times[n_start] + horizon
    m = int(np.searchsorted(times, limit, side="right")) - 1 - n_start
    return max(m, 0)


def tracking_error(
    path: InterpolatedPath,
    weights,
    tasks: list,
    n_start: int,
    m_horizon: int,
    h_max: float = 1e-2,
) -> np.ndarray:
    """Distance between the iterate path and the ODE launched alongside it.

    The flow starts at the round-n_start aggregate and the errors
    |w_bar(n_start + m) - w(T_{n_start + m})| are returned for
    m = 1..m_horizon.
    """
    if m_horizon < 1:
        raise ValueError("m_horizon must be >= 1")
    if n_start + m_horizon >= len(path.times):
        raise ValueError("n_start + m_horizon exceeds the recorded path")
    seg = slice(n_start, n_start + m_horizon + 1)
    traj = integrate(
        lambda w: ode_rhs(weights, tasks, w),
        path.values[n_start],
        path.times[seg],
        h_max=h_max,
    )
    return np.linalg.norm(path.values[seg][1:] - traj.values[1:], axis=1)
