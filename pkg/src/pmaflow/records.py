"""Run records and their on-disk form (JSON metadata plus ``.npy`` arrays)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Snapshot:
    t: float
    values: np.ndarray
    udot: np.ndarray


@dataclass
class SolverStats:
    steps: int = 0
    newton_iterations: int = 0
    max_newton_iterations: int = 0
    max_residual: float = 0.0
    stalled_steps: int = 0
    dt_halvings: int = 0

    def absorb(self, iterations: int, residual: float, stalled: bool) -> None:
        self.steps += 1
        self.newton_iterations += iterations
        self.max_newton_iterations = max(self.max_newton_iterations, iterations)
        self.max_residual = max(self.max_residual, residual)
        self.stalled_steps += int(stalled)


@dataclass
class RunRecord:
    """Time-indexed snapshots of one rung together with solver statistics.

    ``geometry`` describes the mesh in enough detail to rebuild it; ``meta``
    holds scalars that diagnostics need (rung index, eps_m, cutoff index...).
    """

    solver: str
    rung: int
    geometry: dict
    snapshots: list[Snapshot] = field(default_factory=list)
    stats: SolverStats = field(default_factory=SolverStats)
    meta: dict = field(default_factory=dict)
    scenario_hash: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def at(self, t: float) -> Snapshot:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.snapshots[i].t - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[i]

    def validate(self) -> None:
        ts = self.times
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("snapshot times must be strictly increasing")
        for snap in self.snapshots:
            if not (np.all(np.isfinite(snap.values)) and np.all(np.isfinite(snap.udot))):
                raise ValueError(f"non-finite values in snapshot t={snap.t}")

    def save(self, directory: str | Path) -> Path:
        self.validate()
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "values.npy", np.stack([s.values for s in self.snapshots]))
        np.save(d / "udot.npy", np.stack([s.udot for s in self.snapshots]))
        meta = {
            "solver": self.solver,
            "rung": self.rung,
            "scenario_hash": self.scenario_hash,
            "times": [float(s.t) for s in self.snapshots],
            "geometry": self.geometry,
            "stats": vars(self.stats),
            "meta": self.meta,
        }
        (d / "record.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory: str | Path) -> "RunRecord":
        d = Path(directory)
        meta = json.loads((d / "record.json").read_text())
        values = np.load(d / "values.npy")
        udot = np.load(d / "udot.npy")
        snaps = [Snapshot(t, values[i], udot[i]) for i, t in enumerate(meta["times"])]
        rec = cls(
            solver=meta["solver"],
            rung=meta["rung"],
            geometry=meta["geometry"],
            snapshots=snaps,
            stats=SolverStats(**meta["stats"]),
            meta=meta["meta"],
            scenario_hash=meta["scenario_hash"],
        )
        rec.validate()
        return rec
