"""Scenario orchestration: build the ladder, solve every rung, diagnose, persist."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diagnostics as dg
from .core import epsilon_A
from .planar import PlanarMesh, planar_run
from .radial import RadialMesh, run_flow
from .records import RunRecord
from .regularization import LadderRung, build_rung
from .scenario import Scenario, ScenarioError


@dataclass
class RunOutcome:
    scenario: Scenario
    solver: str
    mesh: object
    rungs: list[LadderRung]
    records: list[RunRecord]
    report: dg.DiagnosticsReport
    out_dir: Path | None = None
    settings: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 0 if self.report.passed else 3


def build_mesh(scenario: Scenario, solver: str, resolution: int | None = None):
    if solver == "radial":
        return RadialMesh(scenario.s_min, resolution or scenario.radial_points, scenario.params.n)
    if solver == "planar":
        if scenario.params.n != 1:
            raise ScenarioError("params.n", "the planar solver needs n = 1")
        return PlanarMesh(resolution or scenario.planar_cells)
    raise ScenarioError("solver", f"unknown solver {solver!r}")


def resolve_solver(scenario: Scenario, requested: str | None) -> str:
    solver = requested or scenario.default_solver()
    if solver == "radial" and not scenario.is_radial:
        raise ScenarioError("solver", "radial solver needs every atom at the centre")
    return solver


def build_ladder(scenario: Scenario, mesh, rungs: Sequence[int]) -> list[LadderRung]:
    data = scenario.unit_data()
    out: list[LadderRung] = []
    for m in rungs:
        out.append(build_rung(data, m, mesh, previous=out[-1] if out else None, perturbation=scenario.perturbation))
    return out


def solve_ladder(scenario: Scenario, mesh, ladder: Sequence[LadderRung], solver: str) -> list[RunRecord]:
    data = scenario.unit_data()
    records = []
    for rung in ladder:
        if solver == "radial":
            rec = run_flow(rung, mesh, scenario.times, data.params, dt0=scenario.dt0, dt_max=scenario.dt_max)
        else:
            rec = planar_run(rung, mesh, scenario.times, data.params, atoms=data.datum.atoms, dt0=scenario.dt0, dt_max=scenario.dt_max)
        rec.scenario_hash = scenario.hash()
        records.append(rec)
    return records


def diagnose(scenario: Scenario, mesh, ladder: Sequence[LadderRung], records: Sequence[RunRecord]) -> dg.DiagnosticsReport:
    data = scenario.unit_data()
    params = data.params
    checks = scenario.checks
    report = dg.DiagnosticsReport()
    atoms = data.datum.atoms
    for rung, rec in zip(ladder, records):
        v = report.add(dg.check_envelopes(rec, rung, mesh, params))
        v.detail["rung"] = rung.m
        v = report.add(dg.check_lower_continuity(rec, rung, params))
        v.detail["rung"] = rung.m
        frac = float(checks.get("barrier_nu_fraction", 0.5))
        for j, atom in enumerate(atoms):
            v = report.add(dg.check_barrier(rec, rung, mesh, atom, frac * atom.mass, params))
            v.detail.update({"rung": rung.m, "atom": j})
    if len(records) >= 3:
        mono, decay, _ = dg.check_ladder(records, mesh, atoms)
        report.add(mono)
        report.add(decay)
        report.ladder_gaps = decay.detail["gaps"]
    deepest, deep_rung = records[-1], ladder[-1]
    for j, atom in enumerate(atoms):
        radius = dg.free_radius(atom, atoms)
        window = dg.lelong_window(deep_rung.m_cutoff, radius)
        series = dg.lelong_series(deepest, mesh, atom, window, radius)
        report.slopes[str(j)] = [e.to_dict() for e in series]
        if "lelong_t_range" in checks:
            v = dg.lelong_law_verdict(
                series, params, tuple(checks["lelong_t_range"]), float(checks.get("lelong_tol", 0.05)), f"lelong_law[{j}]"
            )
            report.add(v)
        res = dg.dissolution_time(records, mesh, atom, params, atoms=atoms)
        report.dissolution[str(j)] = res.to_dict()
        if checks.get("dissolution", False):
            eps = epsilon_A(atom.mass, params)
            err = math.inf if res.censored else abs(res.t_hat - eps) / eps
            report.add(dg.Verdict(f"dissolution[{j}]", err <= 0.1, 0.1 - err, 0.1, res.to_dict()))
    l1, uniform = dg.check_limits_at_zero(deepest, deep_rung, mesh, data.datum, params)
    report.add(l1)
    report.add(uniform)
    if checks.get("stationary", False):
        tol = float(checks.get("stationary_tol", 1e-8))
        for rec in records:
            u0 = rec.snapshots[0].values
            drift = max(float(np.max(np.abs(s.values - u0))) for s in rec.snapshots)
            report.add(dg.Verdict("stationary", drift <= tol, tol - drift, tol, {"rung": rec.rung, "drift": drift}))
    if scenario.perturbation != "dirichlet":
        report.notes.append(f"ladder perturbation: {scenario.perturbation}")
    report.notes.append("envelope constant B is computed per rung from that rung's boundary data and source")
    return report


def run_scenario(
    scenario: Scenario | str | Path,
    out_dir: str | Path | None = None,
    rungs: int | None = None,
    resolution: int | None = None,
    solver: str | None = None,
) -> RunOutcome:
    """Build, solve and diagnose a scenario; write artifacts when ``out_dir`` is given.

    ``rungs`` keeps only the deepest ``rungs`` ladder entries.
    """
    if not isinstance(scenario, Scenario):
        scenario = Scenario.load(scenario)
    solver = resolve_solver(scenario, solver)
    mesh = build_mesh(scenario, solver, resolution)
    indices = list(scenario.rungs)
    if rungs is not None:
        if rungs < 1:
            raise ScenarioError("--rungs", "must be >= 1")
        indices = list(range(max(1, indices[-1] - rungs + 1), indices[-1] + 1))
    ladder = build_ladder(scenario, mesh, indices)
    records = solve_ladder(scenario, mesh, ladder, solver)
    report = diagnose(scenario, mesh, ladder, records)
    settings = {"solver": solver, "resolution": resolution, "rungs": indices, "scenario_hash": scenario.hash()}
    outcome = RunOutcome(scenario, solver, mesh, ladder, records, report, settings=settings)
    if out_dir is not None:
        outcome.out_dir = write_run(outcome, out_dir)
    return outcome


def write_run(outcome: RunOutcome, out_dir: str | Path) -> Path:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "scenario.toml").write_text(outcome.scenario.to_toml())
    (d / "run.json").write_text(json.dumps(outcome.settings, indent=2, sort_keys=True))
    for rec in outcome.records:
        rec.save(d / f"rung_{rec.rung:02d}")
    (d / "report.json").write_text(json.dumps(outcome.report.to_dict(), indent=2, sort_keys=True))
    return d


def load_run(run_dir: str | Path) -> RunOutcome:
    """Reload a run directory and rebuild its ladder; no solving happens."""
    d = Path(run_dir)
    if not (d / "run.json").exists():
        raise FileNotFoundError(f"{d} is not a run directory (run.json missing)")
    scenario = Scenario.load(d / "scenario.toml")
    settings = json.loads((d / "run.json").read_text())
    if settings["scenario_hash"] != scenario.hash():
        raise ValueError("stored scenario does not match the recorded hash")
    mesh = build_mesh(scenario, settings["solver"], settings["resolution"])
    ladder = build_ladder(scenario, mesh, settings["rungs"])
    records = [RunRecord.load(d / f"rung_{m:02d}") for m in settings["rungs"]]
    report = dg.DiagnosticsReport()
    return RunOutcome(scenario, settings["solver"], mesh, ladder, records, report, d, settings)


def verify_run(run_dir: str | Path) -> RunOutcome:
    outcome = load_run(run_dir)
    outcome.report = diagnose(outcome.scenario, outcome.mesh, outcome.rungs, outcome.records)
    return outcome
