"""Scenario files: TOML in, validated immutable scenario out."""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import FlowParams, LelongAtom
from .expressions import Expression
from .regularization import PERTURBATIONS, InitialDatum


class ScenarioError(ValueError):
    """Invalid scenario; ``where`` names the offending field or line."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


_TOP = {"name", "params", "domain", "initial", "boundary", "source", "mesh", "ladder", "output", "checks"}
_SECTIONS = {
    "params": {"n", "A", "T"},
    "domain": {"radius"},
    "initial": {"smooth", "atoms"},
    "boundary": {"phi", "atoms"},
    "source": {"f"},
    "mesh": {"s_min", "radial_points", "planar_cells"},
    "ladder": {"rungs", "perturbation"},
    "output": {"times", "step", "dt0", "dt_max"},
    "checks": {"lelong_t_range", "lelong_tol", "barrier_nu_fraction", "stationary", "stationary_tol", "dissolution"},
}


@dataclass(frozen=True)
class UnitData:
    """Scenario data transported to the unit ball."""

    params: FlowParams
    datum: InitialDatum
    phi: Expression
    f: Expression
    phi_atoms: bool


@dataclass(frozen=True)
class Scenario:
    params: FlowParams
    radius: float = 1.0
    atoms: tuple[LelongAtom, ...] = ()
    smooth: Expression = field(default_factory=Expression)
    phi: Expression = field(default_factory=Expression)
    phi_atoms: bool = False
    f: Expression = field(default_factory=Expression)
    s_min: float = -10.0
    radial_points: int = 400
    planar_cells: int = 128
    rungs: tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    perturbation: str = "dirichlet"
    times: tuple[float, ...] = ()
    dt0: float = 1e-3
    dt_max: float = 5e-3
    checks: dict = field(default_factory=dict)
    name: str = ""

    # ------------------------------------------------------------ derived

    @property
    def is_radial(self) -> bool:
        return all(not any(a.center) for a in self.atoms)

    def default_solver(self) -> str:
        if self.is_radial:
            return "radial"
        if self.params.n == 1:
            return "planar"
        raise ScenarioError("initial.atoms", "off-centre atoms need n = 1 (planar solver)")

    def unit_data(self) -> UnitData:
        """Data in ``zeta = z / R``; the source picks up ``-2n log R``."""
        R = self.radius
        n = self.params.n
        logR = math.log(R)
        atoms = tuple(LelongAtom(tuple(c / R for c in a.center), a.mass) for a in self.atoms)
        pole_shift = sum(a.mass for a in self.atoms) * logR
        smooth = self.smooth.rescaled(R)
        phi = self.phi.rescaled(R)
        if pole_shift:
            smooth = smooth + Expression.parse(pole_shift)
            if self.phi_atoms:
                phi = phi + Expression.parse(pole_shift)
        f = self.f.rescaled(R)
        if R != 1.0:
            f = f + Expression.parse(-2.0 * n * logR)
        return UnitData(self.params, InitialDatum(atoms, smooth), phi, f, self.phi_atoms)

    # ------------------------------------------------------------ (de)serialisation

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "params": {"n": self.params.n, "A": self.params.A, "T": self.params.T},
            "domain": {"radius": self.radius},
            "initial": {
                "smooth": self.smooth.to_list(),
                "atoms": [{"center": list(a.center), "mass": a.mass} for a in self.atoms],
            },
            "boundary": {"phi": self.phi.to_list(), "atoms": self.phi_atoms},
            "source": {"f": self.f.to_list()},
            "mesh": {"s_min": self.s_min, "radial_points": self.radial_points, "planar_cells": self.planar_cells},
            "ladder": {"rungs": list(self.rungs), "perturbation": self.perturbation},
            "output": {"times": list(self.times), "dt0": self.dt0, "dt_max": self.dt_max},
            "checks": dict(self.checks),
        }
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def hash(self) -> str:
        """Digest of every field that changes the computation (the name does not)."""
        payload = self.to_dict()
        payload.pop("name")
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        return _build(raw)

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError("toml", str(exc)) from None
        return _build(raw)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.loads(Path(path).read_text())


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ScenarioError(name, "expected a table")
    unknown = set(sec) - _SECTIONS[name]
    if unknown:
        raise ScenarioError(f"{name}.{sorted(unknown)[0]}", "unknown field")
    return sec


def _expr(value, where: str) -> Expression:
    try:
        return Expression.parse(value)
    except ValueError as exc:
        raise ScenarioError(where, str(exc)) from None


def _number(value, where: str, cast=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(where, f"expected a number, got {value!r}")
    if cast is int and int(value) != value:
        raise ScenarioError(where, f"expected an integer, got {value!r}")
    return cast(value)


def _build(raw: dict) -> Scenario:
    unknown = set(raw) - _TOP
    if unknown:
        raise ScenarioError(sorted(unknown)[0], "unknown section")
    p = _section(raw, "params")
    if "T" not in p:
        raise ScenarioError("params.T", "missing")
    try:
        params = FlowParams(
            _number(p.get("n", 1), "params.n", int), _number(p.get("A", 0.0), "params.A"), _number(p["T"], "params.T")
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError("params", str(exc)) from None
    dom = _section(raw, "domain")
    radius = _number(dom.get("radius", 1.0), "domain.radius")
    if not radius > 0:
        raise ScenarioError("domain.radius", "must be > 0")

    ini = _section(raw, "initial")
    atoms = []
    for i, a in enumerate(ini.get("atoms", [])):
        where = f"initial.atoms[{i}]"
        if not isinstance(a, dict) or set(a) - {"center", "mass"}:
            raise ScenarioError(where, "expected a table with 'center' and 'mass'")
        center = a.get("center", [0.0] * (2 * params.n))
        if not isinstance(center, list) or len(center) != 2 * params.n:
            raise ScenarioError(f"{where}.center", f"expected {2 * params.n} real coordinates")
        center = [_number(c, f"{where}.center") for c in center]
        mass = _number(a.get("mass", None), f"{where}.mass")
        try:
            atom = LelongAtom(tuple(center), mass)
        except ValueError as exc:
            raise ScenarioError(f"{where}.mass", str(exc)) from None
        if not atom.inside(radius):
            raise ScenarioError(f"{where}.center", f"atom lies outside the ball of radius {radius}")
        atoms.append(atom)
    smooth = _expr(ini.get("smooth", []), "initial.smooth")
    if not smooth.is_psh():
        raise ScenarioError("initial.smooth", "smooth part must be plurisubharmonic (nonnegative |z|^2 and log weights)")

    bnd = _section(raw, "boundary")
    phi = _expr(bnd.get("phi", []), "boundary.phi")
    phi_atoms = bnd.get("atoms", False)
    if not isinstance(phi_atoms, bool):
        raise ScenarioError("boundary.atoms", "expected true or false")
    f = _expr(_section(raw, "source").get("f", []), "source.f")

    mesh = _section(raw, "mesh")
    s_min = _number(mesh.get("s_min", -10.0), "mesh.s_min")
    radial_points = _number(mesh.get("radial_points", 400), "mesh.radial_points", int)
    planar_cells = _number(mesh.get("planar_cells", 128), "mesh.planar_cells", int)
    if s_min >= 0:
        raise ScenarioError("mesh.s_min", "must be negative")
    if radial_points < 100:
        raise ScenarioError("mesh.radial_points", "at least 100 points are required")
    if planar_cells < 8 or planar_cells % 2:
        raise ScenarioError("mesh.planar_cells", "must be an even integer >= 8")

    lad = _section(raw, "ladder")
    rungs = lad.get("rungs", [3, 4, 5, 6, 7, 8])
    if isinstance(rungs, int) and not isinstance(rungs, bool):
        rungs = list(range(1, rungs + 1))
    if not isinstance(rungs, list) or not rungs:
        raise ScenarioError("ladder.rungs", "expected a depth or a non-empty list of rung indices")
    rungs = [_number(r, "ladder.rungs", int) for r in rungs]
    if any(r < 1 for r in rungs) or rungs != sorted(set(rungs)):
        raise ScenarioError("ladder.rungs", "rung indices must be increasing integers >= 1")
    pert = lad.get("perturbation", "dirichlet")
    if pert not in PERTURBATIONS:
        raise ScenarioError("ladder.perturbation", f"expected one of {PERTURBATIONS}")

    out = _section(raw, "output")
    times = [_number(t, "output.times") for t in out.get("times", [])]
    if "step" in out or not times:
        step = _number(out.get("step", params.T / 20), "output.step")
        if not step > 0:
            raise ScenarioError("output.step", "must be > 0")
        grid = np.round(np.arange(1, int(math.floor(params.T / step + 1e-9)) + 1) * step, 12)
        grid = np.minimum(grid, params.T).tolist()
        if any(t <= 0 or t > params.T for t in times):
            raise ScenarioError("output.times", "times must lie in (0, T]")
        times = sorted(set(times) | set(grid))
    if any(not 0 < t <= params.T for t in times) or times != sorted(set(times)):
        raise ScenarioError("output.times", "times must be increasing and lie in (0, T]")
    dt0 = _number(out.get("dt0", 1e-3), "output.dt0")
    dt_max = _number(out.get("dt_max", 5e-3), "output.dt_max")
    if not 0 < dt0 <= 1e-3:
        raise ScenarioError("output.dt0", "initial step must lie in (0, 1e-3]")
    if not dt_max >= dt0:
        raise ScenarioError("output.dt_max", "must be >= dt0")

    checks = dict(_section(raw, "checks"))
    name = raw.get("name", "")
    if not isinstance(name, str):
        raise ScenarioError("name", "expected a string")
    return Scenario(
        params=params,
        radius=radius,
        atoms=tuple(atoms),
        smooth=smooth,
        phi=phi,
        phi_atoms=phi_atoms,
        f=f,
        s_min=s_min,
        radial_points=radial_points,
        planar_cells=planar_cells,
        rungs=tuple(rungs),
        perturbation=pert,
        times=tuple(times),
        dt0=dt0,
        dt_max=dt_max,
        checks=checks,
        name=name,
    )
