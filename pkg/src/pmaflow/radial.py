"""Radial solver: the flow for ``u(z) = v(log|z|)`` on the unit ball.

Unknowns are the node increments ``D_k = V_{k+1} - V_k``; values follow by
summing down from the Dirichlet node.  Working with increments keeps the tiny
curvature of deep plateaus and cones representable in floating point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import solve_banded

from .core import FlowParams
from .records import RunRecord, SolverStats
from .regularization import AtomRegularizer, InitialDatum, LadderRung, RegularizedProfile
from .stepping import ConeViolation, NewtonDivergence, march, output_schedule

LOG2 = math.log(2.0)
FLOOR = 1e-12
TOL = 1e-10
# a stalled Newton iteration is accepted only below this residual
STALL_TOL = 1e-7
MAX_ITER = 50


def radial_ma_det(vp, vpp, s, n: int):
    """Complex Hessian determinant of ``u(z) = v(log|z|)`` in C^n."""
    vp = np.asarray(vp, dtype=float)
    return np.asarray(vpp, dtype=float) * vp ** (n - 1) * np.exp(-2.0 * n * np.asarray(s, dtype=float)) / 2.0 ** (n + 1)


@dataclass(frozen=True)
class RadialMesh:
    """Uniform grid in ``s = log|z|`` on ``[s_min, 0]``."""

    s_min: float = -10.0
    points: int = 400
    n: int = 1

    def __post_init__(self):
        if not self.s_min < 0:
            raise ValueError("s_min must be negative")
        if self.points < 100:
            raise ValueError("a radial mesh needs at least 100 points")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def s(self) -> np.ndarray:
        return np.linspace(self.s_min, 0.0, self.points)

    @property
    def h(self) -> float:
        return -self.s_min / (self.points - 1)

    @property
    def r2(self) -> np.ndarray:
        return np.exp(2.0 * self.s)

    @property
    def interior(self) -> slice:
        return slice(0, self.points - 1)

    @property
    def boundary_r2(self) -> np.ndarray:
        return np.ones(1)

    @property
    def m_max(self) -> int:
        # plateau radius e^{-m-1} must sit at least two cells above s_min
        return int(math.floor(-(self.s_min + 2.0 * self.h) - 1.0 + 1e-12))

    def boundary_values(self, profile: RegularizedProfile) -> np.ndarray:
        return np.asarray(profile.values[-1:], dtype=float)

    @property
    def weights(self) -> tuple[float, float, float, float]:
        """Stencil constants ``(k2, a, b, q)``.

        ``v'' = k2 (D_i - D_{i-1}) / h^2`` and ``v' = a D_i + b D_{i-1}`` are exact
        on ``span{1, s, e^{2s}}``, so cones and ``|z|^2`` carry no truncation
        error.  ``q`` is the ghost ratio ``D_{-1} = q D_0``, the increment of a
        profile ``alpha + beta e^{2s}`` near the centre.
        """
        h = self.h
        k2 = (h / math.sinh(h)) ** 2
        up, down = math.expm1(2.0 * h), -math.expm1(-2.0 * h)
        # a + b = 1/h and a*up + b*down = 2
        a = (2.0 - down / h) / (up - down)
        b = 1.0 / h - a
        return k2, a, b, math.exp(-2.0 * h)

    def derivatives(self, D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Discrete ``(v', v'')`` at nodes ``0..M-1`` from increments."""
        k2, a, b, q = self.weights
        prev = np.empty_like(D)
        prev[0] = q * D[0]
        prev[1:] = D[:-1]
        return a * D + b * prev, k2 * (D - prev) / self.h**2

    def log_det_from_increments(self, D: np.ndarray) -> np.ndarray:
        vp, vpp = self.derivatives(D)
        with np.errstate(divide="ignore", invalid="ignore"):
            L = np.log(vpp) + (self.n - 1) * np.log(vp)
        L = np.where((vpp > 0) & (vp > 0), L, np.nan)
        return L - 2.0 * self.n * self.s[:-1] - (self.n + 1) * LOG2

    def log_det(self, profile: RegularizedProfile) -> np.ndarray:
        return self.log_det_from_increments(profile.increments)

    def exact_boundary_value(self, datum: InitialDatum) -> np.ndarray:
        # every radial atom sits at the origin, so log|z| vanishes on the sphere
        return datum.smooth.value(self.boundary_r2)

    def exact_boundary_log_det(self, datum: InitialDatum, profile: RegularizedProfile) -> np.ndarray:
        s0 = np.zeros(1)
        d1, d2 = profile.smooth.log_radius_derivatives(s0)
        for atom in datum.atoms:
            w = AtomRegularizer(atom.center, profile.m_cutoff)
            d1 = d1 + atom.mass * w.chi(s0 + w.m, 1)
            d2 = d2 + atom.mass * w.chi(s0 + w.m, 2)
        return np.log(radial_ma_det(d1, d2, s0, self.n))

    def geometry(self) -> dict:
        return {"kind": "radial", "s_min": self.s_min, "points": self.points, "n": self.n}


@dataclass
class RadialState:
    """Profile at time ``t``: increments plus the Dirichlet value."""

    t: float
    D: np.ndarray
    v_boundary: float
    t_prev: float | None = None
    v_prev: np.ndarray | None = None
    newton_stats: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        v = np.empty(len(self.D) + 1)
        v[-1] = self.v_boundary
        v[:-1] = self.v_boundary - np.cumsum(self.D[::-1])[::-1]
        return v

    @property
    def v(self) -> np.ndarray:
        return self.values


def initial_state(rung: LadderRung) -> RadialState:
    u0 = rung.u0_m
    if u0.increments is None:
        raise ValueError("rung was not built on a radial mesh")
    return RadialState(0.0, np.array(u0.increments, dtype=float), float(u0.values[-1]))


def _residual(D, mesh: RadialMesh, old_D, old_v, v_bnd, dt, A, f_new):
    """Equations in increment form, or ``None`` outside the admissible cone.

    Rows ``k < M-1`` are differences of node residuals ``R_{k+1} - R_k``; the
    last row is ``R_{M-1}`` itself.
    """
    n, h = mesh.n, mesh.h
    vp, vpp = mesh.derivatives(D)
    if np.any(vpp <= FLOOR) or np.any(vp <= FLOOR):
        return None
    L = np.log(vpp) + (n - 1) * np.log(vp)
    E = np.empty_like(D)
    M = len(D)
    E[:-1] = (D[:-1] - old_D[:-1]) / dt + A * D[:-1] - np.diff(f_new[:M]) - np.diff(L) + 2.0 * n * h
    v_last = v_bnd - D[-1]
    E[-1] = (v_last - old_v[M - 1]) / dt + A * v_last - f_new[M - 1] - L[-1] + 2.0 * n * mesh.s[M - 1] + (n + 1) * LOG2
    return E, vp, vpp


def _node_residuals(E: np.ndarray) -> np.ndarray:
    tail = np.concatenate([np.cumsum(E[:-1][::-1])[::-1], [0.0]])
    return E[-1] - tail


def step_implicit(state: RadialState, dt: float, rung: LadderRung, mesh: RadialMesh, params: FlowParams) -> RadialState:
    """One backward-Euler step solved by damped Newton on a tridiagonal system."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n, h, A = mesh.n, mesh.h, params.A
    t_new = state.t + dt
    v_bnd = float(rung.phi_m(t_new)[0])
    f_new = np.asarray(rung.f(t_new), dtype=float)
    old_v = state.values
    D = state.D.copy()
    M = len(D)
    out = _residual(D, mesh, state.D, old_v, v_bnd, dt, A, f_new)
    if out is None:
        raise ConeViolation("starting profile is outside the admissible cone")
    stalled = False
    for it in range(MAX_ITER + 1):
        E, vp, vpp = out
        R = _node_residuals(E)
        res = float(max(np.max(np.abs(R)), np.max(np.abs(E))))
        if res <= TOL or stalled:
            break
        if it == MAX_ITER:
            raise NewtonDivergence(f"residual {res:.3e} after {MAX_ITER} iterations")
        # dL_i/dD_i and dL_i/dD_{i-1}
        k2, wa, wb, q = mesh.weights
        c2 = k2 / (h * h * vpp)
        a = c2 + (n - 1) * wa / vp
        b = -c2 + (n - 1) * wb / vp
        a[0] = c2[0] * (1.0 - q) + (n - 1) * (wa + wb * q) / vp[0]
        b[0] = 0.0
        ab = np.zeros((3, M))
        k = np.arange(M - 1)
        ab[1, :-1] = 1.0 / dt + A - b[k + 1] + a[k]
        ab[1, -1] = -(1.0 / dt + A) - a[M - 1]
        ab[0, 1:] = -a[k + 1]
        ab[2, :-2] = b[1 : M - 1]
        ab[2, -2] = -b[M - 1]
        delta = solve_banded((1, 1), ab, -E)
        nrm = float(np.max(np.abs(E)))
        alpha = 1.0
        while True:
            trial = _residual(D + alpha * delta, mesh, state.D, old_v, v_bnd, dt, A, f_new)
            if trial is not None and (np.max(np.abs(trial[0])) < (1 - 1e-4 * alpha) * nrm or alpha < 1e-3):
                break
            alpha *= 0.5
            if alpha < 1e-8:
                raise ConeViolation(f"no admissible damped step at t={t_new:.6g}")
        D_new = D + alpha * delta
        # stalled at round-off: the update no longer changes the increments
        stalled = bool(np.all(np.abs(D_new - D) <= 8 * np.finfo(float).eps * np.abs(D)))
        D = D_new
        out = trial
    if stalled and res > STALL_TOL:
        raise NewtonDivergence(f"Newton stalled at residual {res:.3e}")
    return RadialState(
        t_new, D, v_bnd, t_prev=state.t, v_prev=old_v, newton_stats={"iterations": it, "residual": res, "stalled": stalled}
    )


def run_flow(
    rung: LadderRung,
    mesh: RadialMesh,
    times: Sequence[float],
    params: FlowParams,
    dt0: float = 1e-3,
    dt_max: float = 5e-3,
    growth: float = 1.2,
) -> RunRecord:
    """Integrate one rung through the output ``times`` (``0`` is always included)."""
    state = initial_state(rung)
    record = RunRecord(
        solver="radial",
        rung=rung.m,
        geometry=mesh.geometry(),
        meta={"eps_m": rung.eps_m, "m_cutoff": rung.m_cutoff, "delta_m": rung.delta_m},
    )

    def step(st: RadialState, dt: float, stats: SolverStats) -> RadialState:
        new = step_implicit(st, dt, rung, mesh, params)
        stats.absorb(new.newton_stats["iterations"], new.newton_stats["residual"], new.newton_stats["stalled"])
        return new

    udot0 = np.concatenate([rung.g_m, rung.g_m_boundary])
    start = min(dt0, rung.eps_m / 2.0)
    return march(state, step, output_schedule(times, params.T), record, udot0, dt0=start, growth=growth, dt_max=dt_max)
