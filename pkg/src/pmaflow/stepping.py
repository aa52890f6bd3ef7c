"""Adaptive backward-Euler time marching shared by both solvers."""
from __future__ import annotations

from typing import Callable, Protocol, Sequence

import numpy as np

from .records import RunRecord, Snapshot, SolverStats


class NewtonDivergence(RuntimeError):
    """Newton did not converge within the iteration cap."""


class ConeViolation(RuntimeError):
    """No damped Newton update stayed inside the admissible cone."""


class SolverFailure(RuntimeError):
    """A run aborted after exhausting time-step halvings."""

    def __init__(self, message: str, t: float, rung: int | None = None):
        super().__init__(message)
        self.t = t
        self.rung = rung


class State(Protocol):
    t: float

    @property
    def values(self) -> np.ndarray: ...


def output_schedule(times: Sequence[float], T: float) -> np.ndarray:
    out = np.unique(np.asarray([0.0, *times], dtype=float))
    if out[0] < 0 or out[-1] > T * (1 + 1e-12):
        raise ValueError("output times must lie in [0, T]")
    return out


def march(
    state0: State,
    step: Callable[[State, float, SolverStats], State],
    out_times: Sequence[float],
    record: RunRecord,
    udot0: np.ndarray,
    dt0: float = 1e-3,
    growth: float = 1.2,
    dt_max: float = 5e-3,
    max_halvings: int = 20,
) -> RunRecord:
    """Advance ``state0`` through ``out_times``, landing on each exactly.

    At every output time the snapshot stores the backward difference of the
    last accepted step as the time derivative.
    """
    if not 0 < dt0 <= dt_max:
        raise ValueError("need 0 < dt0 <= dt_max")
    stats = record.stats
    state = state0
    record.snapshots.append(Snapshot(state.t, np.array(state.values), np.array(udot0, dtype=float)))
    dt = dt0
    for target in out_times:
        if target <= state.t:
            continue
        while state.t < target:
            remaining = target - state.t
            # avoid leaving a sliver step before the output time
            h = remaining if remaining <= dt * 1.5 else min(dt, remaining / 2 if remaining < 2 * dt else dt)
            halvings = 0
            while True:
                try:
                    new = step(state, h, stats)
                    break
                except (NewtonDivergence, ConeViolation) as exc:
                    halvings += 1
                    stats.dt_halvings += 1
                    if halvings > max_halvings:
                        raise SolverFailure(f"{type(exc).__name__} at t={state.t:.6g}: {exc}", state.t, record.rung) from exc
                    h /= 2.0
            if new.t >= target - 1e-14:
                new.t = float(target)
            prev = state
            state = new
            dt = min(dt_max, max(h, dt if halvings == 0 else h) * (growth if halvings == 0 else 1.0))
        udot = (state.values - prev.values) / (state.t - prev.t)
        record.snapshots.append(Snapshot(float(state.t), np.array(state.values), udot))
    return record
