"""Regularisation ladder: cutoffs, regularised initial data and rungs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import FlowParams, LelongAtom
from .expressions import Expression


class MeshResolutionError(ValueError):
    """The mesh cannot resolve the cutoff radius of the requested rung."""

    def __init__(self, m: int, m_max: int):
        super().__init__(f"mesh too coarse for m={m}; maximum admissible m is {m_max}")
        self.m = m
        self.m_max = m_max


class RegularizationError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothCutoffChi:
    """C^2 convex cutoff: 0 on (-inf, -1], identity on [1, inf).

    On [-1, 1] it is the polynomial ``(x + 1)^3 (3 - x) / 16`` whose second
    derivative ``3 (1 - x^2) / 4`` vanishes at both knots.
    """

    knots: tuple[float, float] = (-1.0, 1.0)
    # ascending power coefficients of the middle piece
    middle: tuple[float, ...] = (3 / 16, 1 / 2, 3 / 8, 0.0, -1 / 16, 0.0)

    def __call__(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        lo, hi = self.knots
        coeffs = np.polynomial.polynomial.polyder(self.middle, order) if order else self.middle
        mid = np.polynomial.polynomial.polyval(np.clip(x, lo, hi), coeffs)
        if order == 0:
            right = x
        elif order == 1:
            right = np.ones_like(x)
        else:
            right = np.zeros_like(x)
        return np.where(x <= lo, 0.0, np.where(x >= hi, right, mid))

    def increments(self, x):
        """``chi(x[k+1]) - chi(x[k])`` for increasing samples, exact on the flat and identity parts."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.knots
        a, b = x[:-1], x[1:]
        out = self(b) - self(a)
        out = np.where(b <= lo, 0.0, out)
        return np.where(a >= hi, b - a, out)


@dataclass(frozen=True)
class TimeCutoffZeta:
    """C^2 nonincreasing cutoff: 1 on (-inf, 1], 0 on [2, inf), quintic between."""

    knots: tuple[float, float] = (1.0, 2.0)

    def __call__(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        lo, hi = self.knots
        y = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        if order == 0:
            return 1.0 - y**3 * (10.0 - 15.0 * y + 6.0 * y**2)
        if order == 1:
            return -30.0 * y**2 * (1.0 - y) ** 2 / (hi - lo)
        if order == 2:
            return -60.0 * y * (1.0 - y) * (1.0 - 2.0 * y) / (hi - lo) ** 2
        raise ValueError("only derivatives up to order 2 are available")


def build_chi() -> SmoothCutoffChi:
    return SmoothCutoffChi()


def build_zeta() -> TimeCutoffZeta:
    return TimeCutoffZeta()


@dataclass(frozen=True)
class AtomRegularizer:
    """``w_m(z) = chi(log|z - a| + m) - m``.

    Equals ``-m`` for ``|z - a| <= e^{-m-1}`` and ``log|z - a|`` for
    ``|z - a| >= e^{1-m}``.
    """

    center: tuple[float, ...]
    m: int
    chi: SmoothCutoffChi = field(default_factory=build_chi)

    @property
    def plateau_radius(self) -> float:
        return math.exp(-self.m - 1)

    @property
    def identity_radius(self) -> float:
        return math.exp(1 - self.m)

    def distance(self, points) -> np.ndarray:
        pts = np.asarray(points)
        if np.iscomplexobj(pts):
            # complex coordinates, last axis over the n components (or scalar for n = 1)
            c = np.asarray(self.center[0::2]) + 1j * np.asarray(self.center[1::2])
            diff = pts - (c[0] if pts.ndim == 0 or len(c) == 1 else c)
            return np.abs(diff) if len(c) == 1 else np.sqrt(np.sum(np.abs(diff) ** 2, axis=-1))
        return np.sqrt(np.sum((pts - np.asarray(self.center)) ** 2, axis=-1))

    def of_log_radius(self, s):
        return self.chi(np.asarray(s, dtype=float) + self.m) - self.m

    def log_radius_increments(self, s):
        return self.chi.increments(np.asarray(s, dtype=float) + self.m)

    def of_radius(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            s = np.log(r)
        return self.of_log_radius(s)

    def __call__(self, points):
        return self.of_radius(self.distance(points))


def atom_regularizer(center, m: int) -> AtomRegularizer:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if np.ndim(center) == 0:
        center = (float(np.real(center)), float(np.imag(center)))
    return AtomRegularizer(tuple(float(c) for c in center), int(m))


@dataclass(frozen=True)
class InitialDatum:
    """Initial datum ``sum_j N_j log|z - a_j| + smooth(|z|^2)``."""

    atoms: tuple[LelongAtom, ...] = ()
    smooth: Expression = field(default_factory=Expression)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))

    def value(self, points, r2) -> np.ndarray:
        """Exact (unregularised) values; ``-inf`` at atom centres."""
        out = self.smooth.value(r2)
        for atom in self.atoms:
            d = AtomRegularizer(atom.center, 1).distance(points)
            with np.errstate(divide="ignore"):
                out = out + atom.mass * np.log(d)
        return out


@dataclass(frozen=True)
class RegularizedProfile:
    """``u0_m`` sampled on a mesh.

    ``values`` are the nodal values; on radial meshes ``increments`` holds the
    node-to-node differences formed term by term.
    """

    values: np.ndarray
    m: int
    m_cutoff: int
    smooth: Expression = field(default_factory=Expression)
    increments: np.ndarray | None = None
    boundary: np.ndarray | None = None


def _cutoff_index(m: int, mesh, cap: bool, max_cutoff: int | None = None) -> int:
    m_max = mesh.m_max if max_cutoff is None else min(mesh.m_max, max_cutoff)
    if m <= m_max:
        return m
    if not cap:
        raise MeshResolutionError(m, m_max)
    if m_max < 1:
        raise MeshResolutionError(m, m_max)
    return m_max


PERTURBATIONS = ("dirichlet", "abs2", "none")


def strict_perturbation(m: int, kind: str = "dirichlet") -> Expression:
    """Strictly plurisubharmonic term added to rung ``m``.

    ``"dirichlet"`` is ``4^{-m} (|z|^2 - 1)``: it vanishes on the unit sphere, so
    the rung keeps the boundary values of the datum, and consecutive rungs
    differ by at most ``(3/4) 4^{-m}``, well inside the ``2^{-m}`` ladder slack.
    ``"abs2"`` is ``|z|^2 / m``.  ``"none"`` adds nothing and suits data whose
    smooth part is already strictly psh.
    """
    if kind == "none":
        return Expression()
    if kind == "dirichlet":
        w = 4.0**-m
        return Expression.parse([{"kind": "abs2", "coeffs": [w]}, {"kind": "const", "coeffs": [-w]}])
    if kind == "abs2":
        return Expression.parse([{"kind": "abs2", "coeffs": [1.0 / m]}])
    raise ValueError(f"unknown perturbation {kind!r}; expected one of {PERTURBATIONS}")


def regularize_initial(
    datum: InitialDatum,
    m: int,
    mesh,
    cap: bool = True,
    perturbation: str = "dirichlet",
    max_cutoff: int | None = None,
) -> RegularizedProfile:
    """Sample ``sum N_j w_m(.; a_j) + smooth + psi_m`` on ``mesh``.

    ``psi_m`` is :func:`strict_perturbation`.  Rungs above ``mesh.m_max`` reuse
    the cutoff of ``m_max`` (``cap=True``) or raise :class:`MeshResolutionError`.
    ``max_cutoff`` lowers the cap, which lets two meshes share identical data.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    mc = _cutoff_index(m, mesh, cap, max_cutoff)
    smooth = datum.smooth + strict_perturbation(m, perturbation)
    if hasattr(mesh, "s"):
        s = mesh.s
        values = smooth.value(np.exp(2.0 * s))
        incs = smooth.radial_increments(s)
        for atom in datum.atoms:
            if np.any(np.abs(atom.center) > 0):
                raise ValueError("radial meshes only carry a single atom at the origin")
            w = AtomRegularizer(atom.center, mc)
            values = values + atom.mass * w.of_log_radius(s)
            incs = incs + atom.mass * w.log_radius_increments(s)
        return RegularizedProfile(values, m, mc, smooth, increments=incs)
    values = smooth.value(mesh.r2)
    boundary = smooth.value(mesh.boundary_r2)
    for atom in datum.atoms:
        w = AtomRegularizer(atom.center, mc)
        values = values + atom.mass * w(mesh.points)
        boundary = boundary + atom.mass * w(mesh.boundary_points)
    return RegularizedProfile(values, m, mc, smooth, boundary=boundary)


@dataclass(frozen=True)
class LadderRung:
    """One regularised problem of the approximation ladder.

    ``phi_m(t) = zeta(t/eps_m) (t g_m + u0_m) + (1 - zeta(t/eps_m)) phi(t)`` on the
    boundary points of the mesh.
    """

    m: int
    eps_m: float
    u0_m: RegularizedProfile
    g_m: np.ndarray
    g_m_boundary: np.ndarray
    u0_m_boundary: np.ndarray
    phi: Callable[[float], np.ndarray]
    f: Callable[[float], np.ndarray]
    params: FlowParams
    delta_m: float
    zeta: TimeCutoffZeta = field(default_factory=build_zeta)

    @property
    def m_cutoff(self) -> int:
        return self.u0_m.m_cutoff

    @property
    def sup_abs_g(self) -> float:
        return float(np.max(np.abs(self.g_m)))

    def phi_m(self, t: float) -> np.ndarray:
        z = float(self.zeta(t / self.eps_m))
        base = np.asarray(self.phi(t), dtype=float)
        if z == 0.0:
            return base
        return z * (t * self.g_m_boundary + self.u0_m_boundary) + (1.0 - z) * base

    def phi_m_dot(self, t: float, dt: float = 1e-7) -> np.ndarray:
        z = float(self.zeta(t / self.eps_m))
        zp = float(self.zeta(t / self.eps_m, 1)) / self.eps_m
        base = np.asarray(self.phi(t), dtype=float)
        base_dot = (np.asarray(self.phi(t + dt), dtype=float) - np.asarray(self.phi(max(t - dt, 0.0)), dtype=float)) / (
            t + dt - max(t - dt, 0.0)
        )
        ramp = t * self.g_m_boundary + self.u0_m_boundary
        return zp * (ramp - base) + z * self.g_m_boundary + (1.0 - z) * base_dot

    def boundary_gap(self, times) -> float:
        """``sup |phi_m - phi|`` over the boundary and ``times``."""
        return float(max(np.max(np.abs(self.phi_m(t) - self.phi(t))) for t in times))


def build_rung(
    scenario_data,
    m: int,
    mesh,
    previous: LadderRung | None = None,
    perturbation: str = "dirichlet",
    max_cutoff: int | None = None,
) -> LadderRung:
    """Assemble rung ``m`` from unit-domain data.

    ``scenario_data`` provides ``datum`` (:class:`InitialDatum`), ``phi`` and ``f``
    (:class:`Expression`) and ``params``; an optional true ``phi_atoms`` adds the
    trace of the poles to ``phi``.  ``eps_m = 2^{-m} / (1 + sup|g_m|)``.
    """
    params: FlowParams = scenario_data.params
    u0 = regularize_initial(scenario_data.datum, m, mesh, perturbation=perturbation, max_cutoff=max_cutoff)
    log_det = mesh.log_det(u0)
    if not np.all(np.isfinite(log_det)):
        raise RegularizationError(f"rung {m}: discrete Hessian of u0_m is not positive")
    f_expr: Expression = scenario_data.f
    phi_expr: Expression = scenario_data.phi
    g = log_det - params.A * u0.values[mesh.interior] + f_expr.value(mesh.r2[mesh.interior], 0.0)
    g_b = mesh.exact_boundary_log_det(scenario_data.datum, u0) - params.A * mesh.boundary_values(u0) + f_expr.value(
        mesh.boundary_r2, 0.0
    )
    eps_m = 2.0**-m / (1.0 + float(np.max(np.abs(g))))
    if previous is not None:
        if not eps_m < previous.eps_m:
            raise RegularizationError(f"rung {m}: eps schedule is not decreasing")
    u0_b = mesh.boundary_values(u0)
    delta = float(np.max(u0_b - mesh.exact_boundary_value(scenario_data.datum)))
    r2b = mesh.boundary_r2
    trace = np.zeros_like(r2b)
    if getattr(scenario_data, "phi_atoms", False):
        # boundary data carry the poles' trace sum N_j log|z - a_j|
        trace = mesh.exact_boundary_value(InitialDatum(scenario_data.datum.atoms))
    return LadderRung(
        m=int(m),
        eps_m=float(eps_m),
        u0_m=u0,
        g_m=g,
        g_m_boundary=np.asarray(g_b, dtype=float),
        u0_m_boundary=np.asarray(u0_b, dtype=float),
        phi=lambda t, _e=phi_expr, _r=r2b, _tr=trace: _e.value(_r, t) + _tr,
        f=lambda t, _e=f_expr, _r=mesh.r2: _e.value(_r, t),
        params=params,
        delta_m=delta,
    )
