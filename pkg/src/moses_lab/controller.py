"""Adaptive measurement controller.

A task's trial budget is split into ``q`` measured batches (fraction ``p``) and
prediction-only trials.  Measurement stops early once the coefficient of
variation of the per-batch mean predicted score falls below ``tau``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InfeasibleSplit, InsufficientBatches, ZeroMean

MIN_BATCHES_FOR_CV = 3


@dataclass(frozen=True)
class MeasurementPlan:
    total_trials: int
    train_fraction: float
    num_batches: int
    batch_sizes: tuple

    @property
    def measured_trials(self) -> int:
        return sum(self.batch_sizes)

    @property
    def prediction_trials(self) -> int:
        return self.total_trials - self.measured_trials


@dataclass(frozen=True)
class ControllerState:
    batch_means: tuple = ()
    cv_threshold: float = 0.05
    terminated: bool = False
    cv_trace: tuple = field(default=())


def plan_split(total_trials: int, p: float = 0.9, q: int = 5) -> MeasurementPlan:
    if q < 2 or total_trials < q:
        raise InfeasibleSplit(f"need total_trials >= q >= 2, got total={total_trials}, q={q}")
    if not 0 < p <= 1:
        raise InfeasibleSplit(f"train fraction must lie in (0, 1], got {p}")
    measured = math.floor(p * total_trials)
    if measured < q:
        raise InfeasibleSplit(f"floor({p} * {total_trials}) = {measured} measured trials < {q} batches")
    base, extra = divmod(measured, q)
    sizes = tuple(base + 1 if i < extra else base for i in range(q))
    return MeasurementPlan(total_trials, p, q, sizes)


def batch_cv(batch_means) -> float:
    """Population standard deviation over arithmetic mean."""
    x = np.asarray(batch_means, dtype=np.float64)
    if x.size < 2:
        raise InsufficientBatches("CV needs at least two batch means")
    mu = x.mean()
    if mu == 0:
        raise ZeroMean("CV undefined for zero mean")
    return float(x.std() / mu)


def should_terminate(state: ControllerState, new_batch_mean: float):
    """Record a batch mean; returns (new_state, terminated).

    The CV is compared by magnitude: predicted scores carry no sign convention,
    so a negative mean must not trigger termination by itself.
    """
    means = state.batch_means + (float(new_batch_mean),)
    if state.terminated:
        return replace(state, batch_means=means), True
    cv = None
    terminated = False
    if len(means) >= MIN_BATCHES_FOR_CV:
        try:
            cv = batch_cv(means)
        except ZeroMean:
            cv = math.inf
        terminated = abs(cv) < state.cv_threshold
    new = replace(state, batch_means=means, terminated=terminated, cv_trace=state.cv_trace + (cv,))
    return new, terminated
