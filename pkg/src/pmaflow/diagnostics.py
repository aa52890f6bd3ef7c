"""Verdicts on run records: Lelong slopes, dissolution, ladder, barrier and bounds."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import BoundaryTimeData, FlowParams, LelongAtom, continuity_bound_C, dotu_envelopes, epsilon_A, k_A
from .expressions import abs2
from .planar import angular_average
from .records import RunRecord
from .regularization import AtomRegularizer, InitialDatum, LadderRung


class WindowError(ValueError):
    """A fitting window touches the plateau or leaves the mesh."""


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    margin: float
    tolerance: float
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# ---------------------------------------------------------------- geometry


def is_radial(mesh) -> bool:
    return hasattr(mesh, "s")


def atom_center(atom: LelongAtom) -> complex:
    c = atom.center
    return complex(c[0], c[1]) if len(c) >= 2 else complex(c[0] if c else 0.0)


def node_distance(mesh, atom: LelongAtom) -> np.ndarray:
    if is_radial(mesh):
        return np.exp(mesh.s)
    return np.abs(mesh.points - atom_center(atom))


def node_weights(mesh) -> np.ndarray:
    """Quadrature weights for the mean over the unit ball (or disc)."""
    if is_radial(mesh):
        n, s = mesh.n, mesh.s
        w = 2.0 * n * np.exp(2.0 * n * s) * mesh.h
        w[0] *= 0.5
        w[-1] *= 0.5
        return w
    return np.full(len(mesh.points), mesh.h**2 / math.pi)


def free_radius(atom: LelongAtom, atoms: Sequence[LelongAtom] = (), domain_radius: float = 1.0) -> float:
    a = atom_center(atom)
    r = domain_radius - abs(a)
    for other in atoms:
        b = atom_center(other)
        if b != a:
            r = min(r, 0.5 * abs(a - b))
    return r


# ---------------------------------------------------------------- Lelong slopes


@dataclass(frozen=True)
class Window:
    """Interval ``[s_lo, s_hi]`` of ``log|z - a|`` used for a slope fit."""

    s_lo: float
    s_hi: float

    @property
    def r_lo(self) -> float:
        return math.exp(self.s_lo)

    @property
    def r_hi(self) -> float:
        return math.exp(self.s_hi)


def lelong_window(m_cutoff: int, radius: float = 1.0, half_width: float = 0.5, shift: float = 0.0) -> Window:
    """Window centred at the log-midpoint between the plateau edge and ``radius``."""
    c = 0.5 * (-(m_cutoff + 1) + math.log(radius)) + shift
    return Window(c - half_width, c + half_width)


def probe_window(m_cutoff: int, radius: float = 1.0) -> Window:
    """Window used to time dissolution: half a unit closer to the atom."""
    return lelong_window(m_cutoff, radius, shift=-0.5)


@dataclass(frozen=True)
class LelongEstimate:
    atom: LelongAtom
    t: float
    slope: float
    window: tuple[float, float]
    residual: float

    def to_dict(self) -> dict:
        return {"t": self.t, "slope": self.slope, "window": list(self.window), "residual": self.residual}


def profile_in_window(values: np.ndarray, mesh, atom: LelongAtom, window: Window, samples: int = 41):
    """``(s, mean of u over |z - a| = e^s)`` across ``window``."""
    if is_radial(mesh):
        s = mesh.s
        sel = (s >= window.s_lo) & (s <= window.s_hi)
        return s[sel], np.asarray(values)[sel]
    s = np.linspace(window.s_lo, window.s_hi, samples)
    return s, angular_average(mesh, values, atom_center(atom), np.exp(s))


def check_window(mesh, window: Window, m_cutoff: int, radius: float = 1.0) -> None:
    if window.s_lo <= -(m_cutoff + 1):
        raise WindowError(f"window starts at r={window.r_lo:.3g}, inside the plateau of radius {math.exp(-m_cutoff - 1):.3g}")
    if window.s_hi >= math.log(radius):
        raise WindowError(f"window ends at r={window.r_hi:.3g}, beyond the free radius {radius:.3g}")
    if is_radial(mesh):
        if window.s_lo <= mesh.s_min or np.count_nonzero((mesh.s >= window.s_lo) & (mesh.s <= window.s_hi)) < 3:
            raise WindowError("window is not resolved by the radial mesh")
    elif window.r_lo < 2.0 * mesh.h:
        raise WindowError("window is not resolved by the planar mesh")


def lelong_estimate(
    values: np.ndarray, t: float, atom: LelongAtom, window: Window, mesh, m_cutoff: int, radius: float = 1.0
) -> LelongEstimate:
    """Least-squares slope of ``u`` against ``log|z - a|`` over ``window``.

    ``residual`` is the spread (max - min) of the local slope ``du/ds`` across
    the window, so it is in the same units as the slope.
    """
    check_window(mesh, window, m_cutoff, radius)
    s, v = profile_in_window(values, mesh, atom, window)
    slope = float(np.polyfit(s, v, 1)[0])
    local = np.gradient(v, s)
    return LelongEstimate(atom, float(t), slope, (window.r_lo, window.r_hi), float(np.ptp(local)))


def lelong_series(record: RunRecord, mesh, atom: LelongAtom, window: Window, radius: float = 1.0) -> list[LelongEstimate]:
    m_cut = int(record.meta["m_cutoff"])
    return [lelong_estimate(snap.values, snap.t, atom, window, mesh, m_cut, radius) for snap in record.snapshots]


def lelong_law_verdict(
    series: Sequence[LelongEstimate], params: FlowParams, t_range: tuple[float, float], tol_fraction: float, name: str
) -> Verdict:
    """``|nu_hat(t) - k_A(N, t)| <= tol_fraction * N`` for ``t`` in ``t_range``."""
    worst, worst_t = 0.0, None
    rows = []
    for est in series:
        if t_range[0] - 1e-12 <= est.t <= t_range[1] + 1e-12:
            pred = k_A(est.atom.mass, est.t, params)
            err = abs(est.slope - pred)
            rows.append((est.t, est.slope, pred))
            if err >= worst:
                worst, worst_t = err, est.t
    if not rows:
        raise ValueError("no snapshot falls inside the requested time range")
    tol = tol_fraction * series[0].atom.mass
    return Verdict(name, worst <= tol, tol - worst, tol, {"worst_time": worst_t, "series": rows})


# ---------------------------------------------------------------- dissolution


@dataclass(frozen=True)
class DissolutionResult:
    t_hat: float | None
    bracket: tuple[float, float] | None
    threshold: float
    censored: bool
    predicted: float

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def dissolution_time(
    records: Sequence[RunRecord],
    mesh,
    atom: LelongAtom,
    params: FlowParams,
    threshold: float | None = None,
    atoms: Sequence[LelongAtom] = (),
) -> DissolutionResult:
    """First output time at which the probe-window slope drops to ``threshold``.

    Uses the deepest rung.  The default threshold is ``0.02 N``.  A profile that
    starts below the threshold has nothing to dissolve and is reported censored.
    """
    record = max(records, key=lambda r: r.rung)
    thr = 0.02 * atom.mass if threshold is None else float(threshold)
    radius = free_radius(atom, atoms)
    window = probe_window(int(record.meta["m_cutoff"]), radius)
    series = lelong_series(record, mesh, atom, window, radius)
    predicted = epsilon_A(atom.mass, params)
    if series and series[0].t == 0 and series[0].slope <= thr:
        return DissolutionResult(None, None, thr, True, predicted)
    prev_t = 0.0
    for est in series:
        if est.t > 0 and est.slope <= thr:
            return DissolutionResult(est.t, (prev_t, est.t), thr, False, predicted)
        prev_t = est.t
    return DissolutionResult(None, None, thr, True, predicted)


# ---------------------------------------------------------------- ladder


def _compact_mask(mesh, atoms: Sequence[LelongAtom], radius: float) -> np.ndarray:
    if is_radial(mesh):
        return np.exp(mesh.s) >= radius
    mask = np.ones(len(mesh.points), dtype=bool)
    for atom in atoms:
        mask &= np.abs(mesh.points - atom_center(atom)) >= radius
    return mask


def check_ladder(
    records: Sequence[RunRecord],
    mesh,
    atoms: Sequence[LelongAtom] = (),
    compact_radius: float = 0.2,
    slack: float = 1e-7,
    max_ratio: float = 0.8,
) -> tuple[Verdict, Verdict, np.ndarray]:
    """Monotone ladder with ``2^{-m}`` slack and geometric decay of sup-gaps.

    Returns the two verdicts and the deepest rung's final profile.
    """
    recs = sorted(records, key=lambda r: r.rung)
    if len(recs) < 3:
        raise ValueError("ladder checks need at least three rungs")
    mask = _compact_mask(mesh, atoms, compact_radius)
    worst = math.inf
    where = None
    gaps = []
    for lo, hi in zip(recs, recs[1:]):
        gap = 0.0
        for a, b in zip(lo.snapshots, hi.snapshots):
            if abs(a.t - b.t) > 1e-12:
                raise ValueError("rungs were not sampled at the same output times")
            margin = a.values + 2.0**-lo.rung - b.values
            i = int(np.argmin(margin))
            if margin[i] < worst:
                worst, where = float(margin[i]), {"rung": lo.rung, "t": a.t, "node": i}
            gap = max(gap, float(np.max(np.abs(a.values - b.values)[mask])))
        gaps.append(gap)
    gaps = np.array(gaps)
    mono = Verdict("ladder_monotone", worst >= -slack, worst + slack, slack, {"worst": where})
    rungs = [r.rung for r in recs[:-1]]
    if np.all(gaps <= 1e-12):
        ratio, consecutive = 0.0, [0.0] * (len(gaps) - 1)
    else:
        g = np.maximum(gaps, 1e-300)
        ratio = float(np.exp(np.polyfit(rungs, np.log(g), 1)[0]))
        consecutive = (g[1:] / g[:-1]).tolist()
    decay = Verdict(
        "ladder_gap_decay",
        ratio <= max_ratio,
        max_ratio - ratio,
        max_ratio,
        {"rungs": rungs, "gaps": gaps.tolist(), "fitted_ratio": ratio, "consecutive_ratios": consecutive},
    )
    return mono, decay, np.array(recs[-1].snapshots[-1].values)


# ---------------------------------------------------------------- barrier


def _shape_log_det(mesh, w_nodes, w_incr, w_bnd, g: float) -> np.ndarray:
    """Discrete ``log det`` of ``g w + |z|^2`` at the interior nodes."""
    if is_radial(mesh):
        incr = g * w_incr + abs2().radial_increments(mesh.s)
        return mesh.log_det_from_increments(incr)
    lap = mesh.apply_laplacian(g * w_nodes + mesh.r2, g * w_bnd + mesh.boundary_r2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(lap > 0, np.log(lap / 4.0), np.nan)


def check_barrier(
    record: RunRecord,
    rung: LadderRung,
    mesh,
    atom: LelongAtom,
    nu: float,
    params: FlowParams,
    tol: float = 1e-6,
    boundary_samples: int = 400,
) -> Verdict:
    """Dominance of ``v = k_A(nu, t) w_m + |z|^2 + B (t + 1)`` over the run.

    ``B`` is the least constant meeting, on the mesh, the supersolution
    inequality at every stored time before ``epsilon_A(nu)``, dominance at
    ``t = 0`` and dominance on the boundary.
    """
    if not 0 < nu < atom.mass:
        raise ValueError("the barrier needs 0 < nu < N")
    t_end = epsilon_A(nu, params)
    n, A = params.n, params.A
    w = AtomRegularizer(atom.center, rung.m_cutoff)
    if is_radial(mesh):
        w_nodes = w.of_log_radius(mesh.s)
        w_incr = w.log_radius_increments(mesh.s)
        w_bnd = w_nodes[-1:]
        inner = mesh.interior
    else:
        w_nodes = w(mesh.points)
        w_incr = None
        w_bnd = w(mesh.boundary_points)
        inner = slice(None)
    r2 = mesh.r2
    times = [s.t for s in record.snapshots if s.t < t_end]
    if not times:
        return Verdict("barrier", True, math.inf, tol, {"skipped": "no stored time before epsilon_A(nu)"})
    needs = {}
    src = -math.inf
    for t in times:
        g = k_A(nu, t, params)
        ld = _shape_log_det(mesh, w_nodes, w_incr, w_bnd, g)
        if not np.all(np.isfinite(ld)):
            return Verdict("barrier", False, -math.inf, tol, {"reason": f"barrier shape not psh at t={t}"})
        f = np.asarray(rung.f(t))[inner]
        need = ld + 2.0 * n * w_nodes[inner] - A * r2[inner] + f
        src = max(src, float(np.max(need)) / (1.0 + A * (t + 1.0)))
    needs["source"] = src
    needs["initial"] = float(np.max(record.snapshots[0].values - nu * w_nodes - r2))
    bnd_r2 = mesh.boundary_r2
    tb = np.union1d(np.linspace(0.0, min(t_end, params.T), boundary_samples), times)
    tb = tb[tb < t_end]
    needs["boundary"] = float(
        max(np.max((rung.phi_m(t) - k_A(nu, t, params) * w_bnd - bnd_r2) / (t + 1.0)) for t in tb)
    )
    B = max(needs.values())
    worst = math.inf
    where = None
    for snap in record.snapshots:
        if snap.t >= t_end:
            continue
        v = k_A(nu, snap.t, params) * w_nodes + r2 + B * (snap.t + 1.0)
        margin = v - snap.values
        i = int(np.argmin(margin))
        if margin[i] < worst:
            worst, where = float(margin[i]), {"t": snap.t, "node": i}
    return Verdict("barrier", worst >= -tol, worst + tol, tol, {"B": B, "needs": needs, "worst": where, "nu": nu})


# ---------------------------------------------------------------- bounds along a run


def boundary_time_data(rung: LadderRung, params: FlowParams, samples: int = 400) -> BoundaryTimeData:
    """Sample ``phi_m`` and ``f`` densely, resolving the start-up ramp."""
    ramp = np.linspace(0.0, min(2.0 * rung.eps_m, params.T), samples)
    times = np.union1d(ramp, np.linspace(0.0, params.T, samples))
    phi = np.stack([rung.phi_m(t) for t in times])
    f = np.stack([np.asarray(rung.f(t)) for t in times])
    return BoundaryTimeData(times, phi, f)


def check_envelopes(record: RunRecord, rung: LadderRung, mesh, params: FlowParams, tol: float = 1e-6) -> Verdict:
    """Time-derivative envelopes at every interior node and stored time ``t > 0``."""
    data = boundary_time_data(rung, params)
    B = data.envelope_constant(params)
    u0 = record.snapshots[0].values
    sup_u0 = float(max(np.max(u0), np.max(rung.u0_m_boundary)))
    inner = mesh.interior
    worst = math.inf
    where = None
    for snap in record.snapshots[1:]:
        lo, hi = dotu_envelopes(snap.values[inner], u0[inner], sup_u0, snap.t, params, B)
        ud = snap.udot[inner]
        margin = np.minimum(ud - lo, hi - ud)
        i = int(np.argmin(margin))
        if margin[i] < worst:
            worst, where = float(margin[i]), {"t": snap.t, "node": i, "side": "lower" if ud[i] - lo[i] < hi[i] - ud[i] else "upper"}
    return Verdict("dotu_envelopes", worst >= -tol, worst + tol, tol, {"B": B, "worst": where})


def continuity_series(rung: LadderRung, params: FlowParams, times: Sequence[float]) -> np.ndarray:
    """``C(t)`` with ``psi = phi_m``, ``g = f`` and ``rho = |z|^2 - 1``."""
    data = boundary_time_data(rung, params)
    phi0 = data.phi[0]
    osc = np.max(np.abs(data.phi - phi0), axis=1)
    out = []
    for t in times:
        bosc = float(np.max(osc[data.times <= t + 1e-15]))
        # oscillation between samples is bounded by the sampled slope
        bosc += data.sup_phi_dot * float(np.max(np.diff(data.times)))
        out.append(continuity_bound_C(t, params.n, params.A, data.sup_abs_phi, data.sup_abs_f, -1.0, bosc))
    return np.array(out)


def check_lower_continuity(record: RunRecord, rung: LadderRung, params: FlowParams, tol: float = 1e-6) -> Verdict:
    times = [s.t for s in record.snapshots]
    C = continuity_series(rung, params, times)
    u0 = record.snapshots[0].values
    worst = math.inf
    where = None
    for snap, c in zip(record.snapshots, C):
        margin = snap.values - (u0 - c)
        i = int(np.argmin(margin))
        if margin[i] < worst:
            worst, where = float(margin[i]), {"t": snap.t, "node": i, "C": float(c)}
    return Verdict("lower_continuity", worst >= -tol, worst + tol, tol, {"worst": where})


def comparison_margin(lower: RunRecord, upper: RunRecord, offset: float = 0.0) -> float:
    """``min (upper + offset - lower)`` over shared nodes and times."""
    worst = math.inf
    for a, b in zip(lower.snapshots, upper.snapshots):
        if abs(a.t - b.t) > 1e-12:
            raise ValueError("runs were not sampled at the same output times")
        worst = min(worst, float(np.min(b.values + offset - a.values)))
    return worst


def data_gaps(lower: LadderRung, upper: LadderRung, params: FlowParams, samples: int = 2000) -> tuple[float, float, float]:
    """Positive parts of ``sup(u0 - v0)``, ``sup(phi_u - phi_v)`` and ``sup(f_u - f_v)`` for two rungs."""
    ramp = np.linspace(0.0, min(2.0 * max(lower.eps_m, upper.eps_m), params.T), samples)
    times = np.union1d(ramp, np.linspace(0.0, params.T, samples // 4))
    a1 = float(np.max(lower.u0_m.values - upper.u0_m.values))
    a2 = max(float(np.max(lower.phi_m(t) - upper.phi_m(t))) for t in times)
    a3 = max(float(np.max(np.asarray(lower.f(t)) - np.asarray(upper.f(t)))) for t in times)
    return max(a1, 0.0), max(a2, 0.0), max(a3, 0.0)


def comparison_offset(lower: LadderRung, upper: LadderRung, params: FlowParams) -> float:
    """Allowance ``max(A1, A2) + A3 T`` under which ``u <= v + allowance`` must hold."""
    a1, a2, a3 = data_gaps(lower, upper, params)
    return max(a1, a2) + a3 * params.T


# ---------------------------------------------------------------- limits at t = 0


def check_limits_at_zero(
    record: RunRecord,
    rung: LadderRung,
    mesh,
    datum: InitialDatum,
    params: FlowParams,
    l1_tol: float = 1e-3,
    compact: tuple[float, float] = (0.3, 0.9),
    mesh_tol: float = 1e-3,
) -> tuple[Verdict, Verdict]:
    """L1 closeness to the datum at the first output time and uniform closeness on a compact set."""
    snaps = [s for s in record.snapshots if s.t > 0]
    if not snaps:
        raise ValueError("record has no positive output time")
    mc = rung.m_cutoff
    if is_radial(mesh):
        # every radial atom sits at the origin: N log|z| = N s
        exact = datum.smooth.value(mesh.r2) + sum(a.mass for a in datum.atoms) * mesh.s
    else:
        exact = datum.value(mesh.points, mesh.r2)
    keep = np.ones(len(exact), dtype=bool)
    for atom in datum.atoms:
        keep &= node_distance(mesh, atom) > math.exp(-mc - 1)
    keep &= np.isfinite(exact)
    wts = node_weights(mesh)
    first = snaps[0]
    l1 = float(np.sum(wts[keep] * np.abs(first.values - exact)[keep]))
    l1_verdict = Verdict("l1_limit", l1 <= l1_tol, l1_tol - l1, l1_tol, {"t": first.t, "l1_mean": l1})

    lo, hi = compact
    if is_radial(mesh):
        K = (np.exp(mesh.s) >= lo) & (np.exp(mesh.s) <= hi)
    else:
        K = np.abs(mesh.points) <= hi
        for atom in datum.atoms:
            K &= np.abs(mesh.points - atom_center(atom)) >= lo
    C = continuity_series(rung, params, [s.t for s in snaps])
    worst = math.inf
    rows = []
    for snap, c in zip(snaps, C):
        gap = float(np.max(np.abs(snap.values - exact)[K]))
        rows.append((snap.t, gap, float(c)))
        worst = min(worst, 2.0 * c + mesh_tol - gap)
    uniform = Verdict("uniform_limit", worst >= 0, worst, mesh_tol, {"series": rows})
    return l1_verdict, uniform


# ---------------------------------------------------------------- report


@dataclass
class DiagnosticsReport:
    verdicts: list[Verdict] = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    dissolution: dict = field(default_factory=dict)
    ladder_gaps: list = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def add(self, verdict: Verdict) -> Verdict:
        self.verdicts.append(verdict)
        return verdict

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "passed": self.passed,
                "verdicts": [v.to_dict() for v in self.verdicts],
                "slopes": self.slopes,
                "dissolution": self.dissolution,
                "ladder_gaps": self.ladder_gaps,
                "notes": self.notes,
            }
        )
