"""Power-law step-size schedules, their limiting ratios, and the event timescale.

A tapering schedule a_n = c/(n+1)^delta with delta in (3/4, 1] makes the step
sums diverge while the squared sums stay finite, which is what drives
probability-one convergence of the federated iterates. The index is shifted
by one so the step at n = 0 is defined; all limits are unaffected.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass

import numpy as np

DELTA_MIN = 0.75  # exclusive lower edge of the admissible decay band
DELTA_MAX = 1.0

TAPERING = "tapering"
CONSTANT = "constant"


class DominanceViolation(ValueError):
    """A ratio was requested against a reference schedule it outgrows."""


class NoDominantSchedule(ValueError):
    """No schedule dominates all others under the ranking rule (reserved)."""


@dataclass(frozen=True)
class StepSizeSchedule:
    """Step-size rule a_n = c/(n+1)^delta (tapering) or a_n = c (constant).

    ``unsafe`` bypasses the (3/4, 1] band check on delta for exploratory
    runs; such runs are outside the convergence theory and callers are
    expected to label their outputs accordingly.
    """

    c: float
    delta: float = 0.0
    kind: str = TAPERING
    unsafe: InitVar[bool] = False

    def __post_init__(self, unsafe: bool) -> None:
        if self.kind not in (TAPERING, CONSTANT):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.c > 0:
            raise ValueError(f"schedule scale c must be positive, got {self.c}")
        if self.kind == CONSTANT:
            object.__setattr__(self, "delta", 0.0)
        elif unsafe:
            if not self.delta > 0:
                raise ValueError(f"delta must be positive, got {self.delta}")
        elif not DELTA_MIN < self.delta <= DELTA_MAX:
            raise ValueError(
                f"delta={self.delta} outside the admissible band "
                f"({DELTA_MIN}, {DELTA_MAX}]"
            )

    @classmethod
    def tapering(cls, c: float, delta: float, unsafe: bool = False) -> "StepSizeSchedule":
        return cls(c=c, delta=delta, kind=TAPERING, unsafe=unsafe)

    @classmethod
    def constant(cls, c: float) -> "StepSizeSchedule":
        return cls(c=c, kind=CONSTANT)

    @property
    def is_tapering(self) -> bool:
        return self.kind == TAPERING


@dataclass(frozen=True)
class LimitingWeights:
    """Limiting step-size ratios p_i = lim a_i(n)/a_ref(n), one per client."""

    p: np.ndarray
    ref_index: int

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        if p[self.ref_index] != 1.0:
            raise ValueError("reference weight must be exactly 1")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("limiting weights must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.p)


def step_size(sched: StepSizeSchedule, n):
    """Step size at step index n >= 0. Accepts scalar or array indices."""
    if sched.kind == CONSTANT:
        return sched.c if np.isscalar(n) else np.full(np.shape(n), sched.c)
    if np.isscalar(n):
        return sched.c / (n + 1.0) ** sched.delta
    return sched.c / (np.asarray(n, dtype=float) + 1.0) ** sched.delta


def limiting_ratio(sched_i: StepSizeSchedule, sched_ref: StepSizeSchedule) -> float:
    """Analytic limit of a_i(n)/a_ref(n); requires sched_ref to dominate."""
    if not (sched_i.is_tapering and sched_ref.is_tapering):
        raise ValueError("limiting ratios are defined for tapering schedules only")
    if sched_i.delta > sched_ref.delta:
        return 0.0
    if sched_i.delta < sched_ref.delta:
        raise DominanceViolation(
            f"schedule with delta={sched_i.delta} outgrows reference "
            f"delta={sched_ref.delta}; the ratio diverges"
        )
    if sched_i.c > sched_ref.c:
        raise DominanceViolation(
            f"equal decay but c={sched_i.c} exceeds reference c={sched_ref.c}"
        )
    return sched_i.c / sched_ref.c


def validate_and_rank(schedules: list[StepSizeSchedule]) -> tuple[int, LimitingWeights]:
    """Identify the dominant schedule and the limiting weight of every client.

    The dominant schedule has the smallest delta, ties broken by the largest
    c: exactly the condition under which it is eventually the largest step
    size. Weights are computed analytically from the (c, delta) pairs.
    """
    if not schedules:
        raise ValueError("at least one schedule is required")
    if not all(s.is_tapering for s in schedules):
        raise ValueError("ranking requires tapering schedules for every client")
    ref_index = min(range(len(schedules)), key=lambda i: (schedules[i].delta, -schedules[i].c))
    p = np.array([limiting_ratio(s, schedules[ref_index]) for s in schedules])
    return ref_index, LimitingWeights(p=p, ref_index=ref_index)


def event_times(ref: StepSizeSchedule, period: int, n_rounds: int) -> np.ndarray:
    """Event times T_0..T_{n_rounds} of the algorithmic timescale.

    T_0 = 0 and T_n is the sum of the reference step sizes over the first
    n*period step indices (starting at index 1; index 0 is the initial
    aggregation and takes no gradient step).
    """
    if period < 2:
        raise ValueError(f"aggregation period must be >= 2, got {period}")
    if n_rounds < 0:
        raise ValueError(f"n_rounds must be >= 0, got {n_rounds}")
    if n_rounds == 0:
        return np.zeros(1)
    k = np.arange(1, n_rounds * period + 1)
    partial = np.cumsum(step_size(ref, k))
    return np.concatenate([[0.0], partial[period - 1 :: period]])
