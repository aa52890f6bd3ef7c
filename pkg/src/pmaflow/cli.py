"""Command line: ``run``, ``export`` and ``verify``.

Exit codes: 0 all checks pass, 1 usage or scenario error, 2 solver failure,
3 a diagnostic check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .core import k_A
from .pipeline import load_run, run_scenario, verify_run
from .regularization import MeshResolutionError, RegularizationError
from .scenario import ScenarioError
from .stepping import SolverFailure

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_DIAGNOSTICS = 0, 1, 2, 3
SERIES = ("lelong", "profile", "envelopes")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmaflow", description="Parabolic complex Monge-Ampere flow with logarithmic poles.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="solve every ladder rung of a scenario and write a report")
    run.add_argument("scenario", type=Path)
    run.add_argument("--out", type=Path, default=None, help="run directory (default: runs/<scenario stem>)")
    run.add_argument("--rungs", type=int, default=None, help="keep only the deepest M rungs")
    run.add_argument("--mesh", type=int, default=None, help="radial points or planar cells per side")
    run.add_argument("--solver", choices=("radial", "planar"), default=None)

    exp = sub.add_parser("export", help="write a series of a stored run as CSV")
    exp.add_argument("run", type=Path)
    exp.add_argument("--series", choices=SERIES, required=True)
    exp.add_argument("--format", choices=("csv",), default="csv")
    exp.add_argument("--rung", type=int, default=None, help="rung index (default: deepest)")
    exp.add_argument("--atom", type=int, default=0, help="atom index for the lelong series")
    exp.add_argument("--output", type=Path, default=None, help="file to write (default: stdout)")

    ver = sub.add_parser("verify", help="re-evaluate all diagnostics from stored records")
    ver.add_argument("run", type=Path)
    return parser


def _summary(report: dg.DiagnosticsReport, stream) -> None:
    for v in report.verdicts:
        status = "PASS" if v.passed else "FAIL"
        print(f"{status} {v.name:<22} margin={v.margin:+.3e} tol={v.tolerance:.1e}", file=stream)


def cmd_run(args) -> int:
    out = args.out or Path("runs") / args.scenario.stem
    outcome = run_scenario(args.scenario, out, rungs=args.rungs, resolution=args.mesh, solver=args.solver)
    _summary(outcome.report, sys.stdout)
    print(f"wrote {outcome.out_dir}")
    return outcome.exit_code


def cmd_verify(args) -> int:
    outcome = verify_run(args.run)
    stored = json.loads((args.run / "report.json").read_text())
    _summary(outcome.report, sys.stdout)
    fresh = outcome.report.to_dict()
    if fresh["passed"] != stored["passed"]:
        print("stored report disagrees with re-evaluated diagnostics", file=sys.stderr)
    return outcome.exit_code


def _pick(outcome, rung):
    if rung is None:
        return outcome.rungs[-1], outcome.records[-1]
    for lad, rec in zip(outcome.rungs, outcome.records):
        if rec.rung == rung:
            return lad, rec
    raise ScenarioError("--rung", f"run has no rung {rung}")


def export_rows(outcome, series: str, rung: int | None = None, atom_index: int = 0):
    """Header and rows of one exported series."""
    lad, rec = _pick(outcome, rung)
    mesh = outcome.mesh
    params = outcome.scenario.unit_data().params
    if series == "lelong":
        atoms = outcome.scenario.unit_data().datum.atoms
        if not 0 <= atom_index < len(atoms):
            raise ScenarioError("--atom", f"run has {len(atoms)} atoms")
        atom = atoms[atom_index]
        radius = dg.free_radius(atom, atoms)
        est = dg.lelong_series(rec, mesh, atom, dg.lelong_window(lad.m_cutoff, radius), radius)
        return ["t", "nu_hat", "k_A_predicted", "residual"], [
            [e.t, e.slope, k_A(atom.mass, e.t, params), e.residual] for e in est
        ]
    if series == "profile":
        if dg.is_radial(mesh):
            coords = [[s, float(np.exp(s))] for s in mesh.s]
            header = ["t", "s", "r", "u", "udot"]
        else:
            coords = [[p.real, p.imag] for p in mesh.points]
            header = ["t", "x", "y", "u", "udot"]
        rows = []
        for snap in rec.snapshots:
            for c, u, ud in zip(coords, snap.values, snap.udot):
                rows.append([snap.t, *c, u, ud])
        return header, rows
    if series == "envelopes":
        data = dg.boundary_time_data(lad, params)
        B = data.envelope_constant(params)
        u0 = rec.snapshots[0].values
        sup_u0 = float(max(np.max(u0), np.max(lad.u0_m_boundary)))
        inner = np.arange(len(u0))[mesh.interior]
        rows = []
        for snap in rec.snapshots[1:]:
            lo, hi = dg.dotu_envelopes(snap.values[inner], u0[inner], sup_u0, snap.t, params, B)
            for k, i in enumerate(inner):
                ud = snap.udot[i]
                ok = lo[k] - 1e-6 <= ud <= hi[k] + 1e-6
                rows.append([snap.t, int(i), lo[k], ud, hi[k], ok])
        return ["t", "node", "lower", "udot", "upper", "within"], rows
    raise ScenarioError("--series", f"unknown series {series!r}; expected one of {SERIES}")


def cmd_export(args) -> int:
    outcome = load_run(args.run)
    header, rows = export_rows(outcome, args.series, args.rung, args.atom)
    handle = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    finally:
        if args.output:
            handle.close()
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "export": cmd_export, "verify": cmd_verify}
    try:
        return handlers[args.command](args)
    except SolverFailure as exc:
        print(f"solver failure (rung {exc.rung}, t={exc.t:.6g}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ScenarioError, MeshResolutionError, RegularizationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
