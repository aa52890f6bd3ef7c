"""Planar solver for ``n = 1``: ``log det`` is ``log(Laplacian / 4)`` on the unit disc.

The disc is cut out of a uniform Cartesian grid.  Nodes next to the circle use
Shortley-Weller differences with Dirichlet values at the exact crossing points;
a node whose arm is shorter than ``theta_min`` cells becomes a boundary node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import distance_transform_edt
from scipy.sparse.linalg import splu

from .core import FlowParams
from .records import RunRecord, SolverStats
from .regularization import AtomRegularizer, InitialDatum, LadderRung, RegularizedProfile
from .stepping import ConeViolation, NewtonDivergence, march, output_schedule

FLOOR = 1e-12
TOL = 1e-9
STALL_TOL = 1e-7
MAX_ITER = 50

_ARMS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def _arm_fraction(x: float, y: float, dx: int, dy: int, h: float) -> float:
    """Fraction of a grid arm from ``(x, y)`` to the unit circle."""
    # |p + th e|^2 = 1 with |e| = 1
    b = x * dx + y * dy
    c = x * x + y * y - 1.0
    root = -b + math.sqrt(b * b - c)
    return root / h


@dataclass(frozen=True)
class PlanarMesh:
    """Unit disc on a ``cells x cells`` grid over ``[-1, 1]^2``."""

    cells: int = 128
    theta_min: float = 1e-2

    def __post_init__(self):
        if self.cells < 8 or self.cells % 2:
            raise ValueError("cells must be an even integer >= 8")
        if not 0 < self.theta_min < 0.5:
            raise ValueError("theta_min must lie in (0, 0.5)")

    @property
    def h(self) -> float:
        return 2.0 / self.cells

    @property
    def n(self) -> int:
        return 1

    @property
    def m_max(self) -> int:
        return int(math.floor(-math.log(2.0 * self.h) - 1.0 + 1e-12))

    @cached_property
    def _layout(self):
        N, h = self.cells, self.h
        coords = -1.0 + h * np.arange(N + 1)
        X, Y = np.meshgrid(coords, coords, indexing="ij")
        inside = X**2 + Y**2 < 1.0
        snapped = np.zeros_like(inside)
        for i, j in zip(*np.nonzero(inside)):
            for dx, dy in _ARMS:
                ii, jj = i + dx, j + dy
                if not inside[ii, jj] and _arm_fraction(X[i, j], Y[i, j], dx, dy, h) < self.theta_min:
                    snapped[i, j] = True
        interior = inside & ~snapped
        index = -np.ones(inside.shape, dtype=int)
        ij = np.argwhere(interior)
        index[interior] = np.arange(len(ij))
        bpoints: list[complex] = []
        bindex: dict = {}

        def boundary_slot(key, z):
            if key not in bindex:
                bindex[key] = len(bpoints)
                bpoints.append(z)
            return bindex[key]

        rows, cols, vals = [], [], []
        brows, bcols, bvals = [], [], []
        for k, (i, j) in enumerate(ij):
            x, y = X[i, j], Y[i, j]
            diag = 0.0
            for axis in ((1, 0), (0, 1)):
                arms = []
                for sign in (1, -1):
                    dx, dy = sign * axis[0], sign * axis[1]
                    ii, jj = i + dx, j + dy
                    if interior[ii, jj]:
                        arms.append((1.0, "node", index[ii, jj]))
                    elif snapped[ii, jj]:
                        arms.append((1.0, "bnd", boundary_slot(("node", ii, jj), complex(X[ii, jj], Y[ii, jj]))))
                    else:
                        th = _arm_fraction(x, y, dx, dy, h)
                        z = complex(x + th * h * dx, y + th * h * dy)
                        arms.append((th, "bnd", boundary_slot(("cut", i, j, dx, dy), z)))
                span = arms[0][0] + arms[1][0]
                for th, kind, idx in arms:
                    c = 2.0 / (h * h * th * span)
                    diag -= c
                    if kind == "node":
                        rows.append(k), cols.append(idx), vals.append(c)
                    else:
                        brows.append(k), bcols.append(idx), bvals.append(c)
            rows.append(k), cols.append(k), vals.append(diag)
        n_int, n_bnd = len(ij), len(bpoints)
        L = sp.csr_matrix((vals, (rows, cols)), shape=(n_int, n_int))
        B = sp.csr_matrix((bvals, (brows, bcols)), shape=(n_int, n_bnd))
        points = X[interior] + 1j * Y[interior]
        return {
            "ij": ij,
            "points": points[np.argsort(index[interior])] if len(ij) else points,
            "L": L,
            "B": B,
            "boundary_points": np.array(bpoints),
        }

    @property
    def ij(self) -> np.ndarray:
        return self._layout["ij"]

    @property
    def points(self) -> np.ndarray:
        return self._layout["points"]

    @property
    def r2(self) -> np.ndarray:
        return np.abs(self.points) ** 2

    @property
    def interior(self) -> slice:
        return slice(None)

    @property
    def boundary_points(self) -> np.ndarray:
        return self._layout["boundary_points"]

    @property
    def boundary_r2(self) -> np.ndarray:
        return np.abs(self.boundary_points) ** 2

    @property
    def laplacian(self) -> sp.csr_matrix:
        return self._layout["L"]

    @property
    def boundary_coupling(self) -> sp.csr_matrix:
        return self._layout["B"]

    @cached_property
    def _laplacian_lu(self):
        return splu(self.laplacian.tocsc())

    def harmonic_lift(self, boundary_change: np.ndarray) -> np.ndarray:
        """Interior correction ``c`` with ``L c + B db = 0``."""
        return self._laplacian_lu.solve(-(self.boundary_coupling @ boundary_change))

    def apply_laplacian(self, values: np.ndarray, boundary: np.ndarray) -> np.ndarray:
        return self.laplacian @ values + self.boundary_coupling @ boundary

    def boundary_values(self, profile: RegularizedProfile) -> np.ndarray:
        return np.asarray(profile.boundary, dtype=float)

    def log_det(self, profile: RegularizedProfile) -> np.ndarray:
        lap = self.apply_laplacian(profile.values, profile.boundary)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(lap > 0, np.log(lap / 4.0), np.nan)

    def exact_boundary_value(self, datum: InitialDatum) -> np.ndarray:
        return datum.value(self.boundary_points, self.boundary_r2)

    def exact_boundary_log_det(self, datum: InitialDatum, profile: RegularizedProfile) -> np.ndarray:
        b = self.boundary_points
        s = np.log(np.abs(b))
        _, d2 = profile.smooth.log_radius_derivatives(s)
        det = d2 * np.exp(-2.0 * s) / 4.0
        for atom in datum.atoms:
            w = AtomRegularizer(atom.center, profile.m_cutoff)
            r = w.distance(b)
            det = det + atom.mass * w.chi(np.log(r) + w.m, 2) / (4.0 * r * r)
        return np.log(det)

    def geometry(self) -> dict:
        return {"kind": "planar", "cells": self.cells, "theta_min": self.theta_min}


@dataclass
class PlanarState:
    t: float
    U: np.ndarray
    boundary: np.ndarray
    t_prev: float | None = None
    U_prev: np.ndarray | None = None
    atoms: tuple = ()
    m_cutoff: int | None = None
    newton_stats: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.U


def initial_state(rung: LadderRung, atoms: tuple = ()) -> PlanarState:
    u0 = rung.u0_m
    if u0.boundary is None:
        raise ValueError("rung was not built on a planar mesh")
    return PlanarState(0.0, np.array(u0.values, dtype=float), np.array(u0.boundary), atoms=atoms, m_cutoff=u0.m_cutoff)


def planar_step(state: PlanarState, dt: float, rung: LadderRung, mesh: PlanarMesh, params: FlowParams) -> PlanarState:
    """One backward-Euler step; Newton with a sparse LU solve per iteration."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = params.A
    t_new = state.t + dt
    bnd = np.asarray(rung.phi_m(t_new), dtype=float)
    f_new = np.asarray(rung.f(t_new), dtype=float)
    L = mesh.laplacian
    rhs_b = mesh.boundary_coupling @ bnd
    # start from the old profile plus the harmonic lift of the boundary change,
    # which leaves the discrete Laplacian (hence admissibility) untouched
    U = state.U + mesh.harmonic_lift(bnd - state.boundary)
    eye = sp.identity(len(U), format="csr")

    def residual(V):
        lap = L @ V + rhs_b
        if np.any(lap <= 4.0 * FLOOR):
            return None
        return (V - state.U) / dt - np.log(lap / 4.0) + A * V - f_new, lap

    out = residual(U)
    if out is None:
        raise ConeViolation("starting profile is outside the admissible cone")
    stalled = False
    for it in range(MAX_ITER + 1):
        F, lap = out
        res = float(np.max(np.abs(F)))
        if res <= TOL or stalled:
            break
        if it == MAX_ITER:
            raise NewtonDivergence(f"residual {res:.3e} after {MAX_ITER} iterations")
        J = (1.0 / dt + A) * eye - sp.diags(1.0 / lap) @ L
        delta = splu(J.tocsc()).solve(-F)
        alpha = 1.0
        while True:
            trial = residual(U + alpha * delta)
            if trial is not None and (np.max(np.abs(trial[0])) < (1 - 1e-4 * alpha) * res or alpha < 1e-3):
                break
            alpha *= 0.5
            if alpha < 1e-8:
                raise ConeViolation(f"no admissible damped step at t={t_new:.6g}")
        U_new = U + alpha * delta
        stalled = bool(np.all(np.abs(U_new - U) <= 8 * np.finfo(float).eps * np.maximum(np.abs(U), 1.0)))
        U = U_new
        out = trial
    if stalled and res > STALL_TOL:
        raise NewtonDivergence(f"Newton stalled at residual {res:.3e}")
    return PlanarState(
        t_new,
        U,
        bnd,
        t_prev=state.t,
        U_prev=state.U,
        atoms=state.atoms,
        m_cutoff=state.m_cutoff,
        newton_stats={"iterations": it, "residual": res, "stalled": stalled},
    )


def planar_run(
    rung: LadderRung,
    mesh: PlanarMesh,
    times: Sequence[float],
    params: FlowParams,
    atoms: tuple = (),
    dt0: float = 1e-3,
    dt_max: float = 5e-3,
    growth: float = 1.2,
) -> RunRecord:
    if params.n != 1:
        raise ValueError("the planar solver is for n = 1 only")
    state = initial_state(rung, tuple(atoms))
    record = RunRecord(
        solver="planar",
        rung=rung.m,
        geometry=mesh.geometry(),
        meta={"eps_m": rung.eps_m, "m_cutoff": rung.m_cutoff, "delta_m": rung.delta_m},
    )

    def step(st: PlanarState, dt: float, stats: SolverStats) -> PlanarState:
        new = planar_step(st, dt, rung, mesh, params)
        stats.absorb(new.newton_stats["iterations"], new.newton_stats["residual"], new.newton_stats["stalled"])
        return new

    start = min(dt0, rung.eps_m / 2.0)
    return march(state, step, output_schedule(times, params.T), record, rung.g_m, dt0=start, growth=growth, dt_max=dt_max)


def grid_field(mesh: PlanarMesh, values: np.ndarray, outside: np.ndarray | None = None) -> np.ndarray:
    """Nodal values on the full ``(cells+1)^2`` grid.

    Nodes without an unknown get ``outside`` (same grid shape); by default the
    value of the nearest interior node along the grid, which is only used to
    keep interpolation stencils finite.
    """
    N = mesh.cells
    G = np.full((N + 1, N + 1), np.nan)
    G[mesh.ij[:, 0], mesh.ij[:, 1]] = values
    if outside is not None:
        mask = np.isnan(G)
        G[mask] = outside[mask]
        return G
    idx = distance_transform_edt(np.isnan(G), return_distances=False, return_indices=True)
    return G[tuple(idx)]


def angular_average(mesh: PlanarMesh, values: np.ndarray, center: complex, radii: np.ndarray, angles: int = 64):
    """Mean of the bicubic interpolant over circles ``|z - center| = r``."""
    coords = -1.0 + mesh.h * np.arange(mesh.cells + 1)
    interp = RegularGridInterpolator((coords, coords), grid_field(mesh, values), method="cubic")
    th = np.linspace(0.0, 2.0 * np.pi, angles, endpoint=False)
    z = center + np.asarray(radii)[:, None] * np.exp(1j * th)[None, :]
    pts = np.stack([z.real, z.imag], axis=-1)
    return interp(pts).mean(axis=1)
