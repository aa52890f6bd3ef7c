import math

import numpy as np
import pytest
from helpers import solve_radial, unit_data

from pmaflow import diagnostics as dg
from pmaflow.core import FlowParams, LelongAtom
from pmaflow.planar import PlanarMesh
from pmaflow.radial import RadialMesh
from pmaflow.records import RunRecord, Snapshot

ORIGIN = LelongAtom((0.0, 0.0), 1.0)


def fake_record(rung, snapshots, m_cutoff):
    return RunRecord("radial", rung, {}, [Snapshot(t, v, np.zeros_like(v)) for t, v in snapshots], meta={"m_cutoff": m_cutoff})


class TestWindows:
    def test_lelong_window_centre(self):
        w = dg.lelong_window(8)
        assert (w.s_lo, w.s_hi) == pytest.approx((-5.0, -4.0))
        assert dg.probe_window(8).s_hi == pytest.approx(-4.5)

    def test_free_radius(self):
        a, b = LelongAtom((0.4, 0.0), 1.0), LelongAtom((-0.4, 0.0), 1.0)
        assert dg.free_radius(a, (a, b)) == pytest.approx(0.4)
        assert dg.free_radius(LelongAtom((0.7, 0.0), 1.0)) == pytest.approx(0.3)

    def test_rejects_plateau_overlap(self):
        mesh = RadialMesh(-10.0, 400, 1)
        with pytest.raises(dg.WindowError, match="plateau"):
            dg.check_window(mesh, dg.Window(-9.5, -8.0), 8)

    def test_rejects_window_beyond_radius(self):
        mesh = RadialMesh(-10.0, 400, 1)
        with pytest.raises(dg.WindowError, match="free radius"):
            dg.check_window(mesh, dg.Window(-2.0, 0.1), 4)

    def test_rejects_unresolved_planar_window(self):
        with pytest.raises(dg.WindowError, match="planar mesh"):
            dg.check_window(PlanarMesh(16), dg.Window(-1.9, -1.5), 1)


class TestLelongEstimate:
    mesh = RadialMesh(-10.0, 400, 1)

    def test_exact_cone(self):
        for N in (0.5, 1.0, 2.5):
            est = dg.lelong_estimate(N * self.mesh.s, 0.0, LelongAtom((0.0, 0.0), N), dg.lelong_window(6), self.mesh, 6)
            assert est.slope == pytest.approx(N, abs=1e-10)
            assert est.residual <= 1e-9

    def test_cone_plus_smooth(self):
        window = dg.Window(math.log(1e-3), math.log(1e-2))
        values = self.mesh.s + self.mesh.r2
        est = dg.lelong_estimate(values, 0.0, ORIGIN, window, self.mesh, 6)
        assert est.slope == pytest.approx(1.0, abs=1e-4)

    def test_planar_cone(self):
        mesh = PlanarMesh(128)
        atom = LelongAtom((0.3, -0.2), 1.5)
        values = 1.5 * np.log(np.abs(mesh.points - complex(0.3, -0.2)))
        est = dg.lelong_estimate(values, 0.0, atom, dg.Window(-2.6, -1.6), mesh, 2, dg.free_radius(atom))
        assert est.slope == pytest.approx(1.5, abs=2e-3)

    def test_reference_run_at_0_2(self, reference_run):
        rec, rung = reference_run.records[-1], reference_run.rungs[-1]
        est = dg.lelong_estimate(rec.at(0.2).values, 0.2, ORIGIN, dg.lelong_window(rung.m_cutoff), reference_run.mesh, rung.m_cutoff)
        assert est.slope == pytest.approx(0.6, abs=0.05)

    def test_window_robustness(self, reference_run):
        mesh = reference_run.mesh
        for rung, rec in zip(reference_run.rungs, reference_run.records):
            mc = rung.m_cutoff
            lo, hi = dg.lelong_window(mc, shift=-0.55), dg.lelong_window(mc, shift=0.55)
            assert lo.s_hi < hi.s_lo
            for snap in rec.snapshots:
                a = dg.lelong_estimate(snap.values, snap.t, ORIGIN, lo, mesh, mc)
                b = dg.lelong_estimate(snap.values, snap.t, ORIGIN, hi, mesh, mc)
                assert abs(a.slope - b.slope) <= a.residual + b.residual


class TestLelongLaw:
    def test_verdict_margin(self):
        p = FlowParams()
        series = [dg.LelongEstimate(ORIGIN, t, 1 - 2 * t + 0.01, (0, 0), 0.0) for t in (0.1, 0.2)]
        v = dg.lelong_law_verdict(series, p, (0.1, 0.2), 0.05, "law")
        assert v.passed and v.margin == pytest.approx(0.04)

    def test_empty_range(self):
        series = [dg.LelongEstimate(ORIGIN, 0.5, 0.0, (0, 0), 0.0)]
        with pytest.raises(ValueError):
            dg.lelong_law_verdict(series, FlowParams(), (0.1, 0.2), 0.05, "law")


class TestDissolution:
    def test_reference(self, reference_run):
        res = dg.dissolution_time(reference_run.records, reference_run.mesh, ORIGIN, FlowParams(T=0.7))
        assert not res.censored
        assert 0.45 <= res.t_hat <= 0.55
        assert res.bracket[1] - res.bracket[0] <= 0.01 + 1e-12
        assert res.predicted == 0.5

    def test_damped(self, damped_run):
        atom = LelongAtom((0.0, 0.0), 2.0)
        res = dg.dissolution_time(damped_run.records, damped_run.mesh, atom, FlowParams(A=1.0))
        assert abs(res.t_hat - math.log(2)) <= 0.1 * math.log(2)

    def test_zero_lelong_is_censored(self, smooth_run):
        mesh = smooth_run.mesh
        res = dg.dissolution_time(smooth_run.records, mesh, ORIGIN, FlowParams(T=0.5))
        assert res.censored and res.t_hat is None
        rec = smooth_run.records[-1]
        window = dg.lelong_window(int(rec.meta["m_cutoff"]))
        assert all(abs(e.slope) <= 0.02 for e in dg.lelong_series(rec, mesh, ORIGIN, window))

    def test_never_reached_is_censored(self):
        mesh = RadialMesh(-10.0, 400, 1)
        rec = fake_record(8, [(0.0, mesh.s), (0.1, mesh.s)], 8)
        assert dg.dissolution_time([rec], mesh, ORIGIN, FlowParams()).censored


class TestLadder:
    mesh = RadialMesh(-10.0, 400, 1)

    def test_zero_atom_gaps(self):
        # rungs differ by 4^{-m}(|z|^2 - 1) at t = 0
        recs = []
        for m in (2, 3, 4):
            values = self.mesh.r2 + 4.0**-m * (self.mesh.r2 - 1)
            recs.append(fake_record(m, [(0.0, values)], 2))
        mono, decay, _ = dg.check_ladder(recs, self.mesh)
        assert mono.passed
        expected = [0.75 * 4.0**-m * (1 - 0.04) for m in (2, 3)]
        assert decay.detail["gaps"] == pytest.approx(expected, rel=1e-3)
        assert decay.detail["fitted_ratio"] == pytest.approx(0.25, rel=1e-3)

    def test_identical_rungs(self):
        recs = [fake_record(m, [(0.0, self.mesh.r2)], 2) for m in (1, 2, 3)]
        mono, decay, _ = dg.check_ladder(recs, self.mesh)
        assert mono.passed and decay.passed
        assert max(decay.detail["gaps"]) <= 1e-7

    def test_swapped_rungs_fail(self, reference_run):
        recs = reference_run.records
        swapped = [RunRecord(r.solver, r.rung, r.geometry, s.snapshots, meta=r.meta) for r, s in zip(recs, recs[::-1])]
        mono, _, _ = dg.check_ladder(swapped, reference_run.mesh)
        assert not mono.passed
        assert mono.detail["worst"] is not None

    def test_needs_three_rungs(self):
        recs = [fake_record(m, [(0.0, self.mesh.r2)], 2) for m in (1, 2)]
        with pytest.raises(ValueError):
            dg.check_ladder(recs, self.mesh)


class TestBarrier:
    def test_reference_rungs(self, reference_run):
        for rung, rec in zip(reference_run.rungs, reference_run.records):
            v = dg.check_barrier(rec, rung, reference_run.mesh, ORIGIN, 0.5, FlowParams(T=0.7))
            assert v.passed
            assert v.detail["B"] >= v.detail["needs"]["initial"]

    def test_initial_need_is_measured_gap(self, reference_run):
        rung, rec = reference_run.rungs[0], reference_run.records[0]
        mesh = reference_run.mesh
        v = dg.check_barrier(rec, rung, mesh, ORIGIN, 0.5, FlowParams(T=0.7))
        w = dg.AtomRegularizer(ORIGIN.center, rung.m_cutoff).of_log_radius(mesh.s)
        assert v.detail["needs"]["initial"] == pytest.approx(np.max(rec.snapshots[0].values - 0.5 * w - mesh.r2))

    def test_plateau_margin_grows_with_depth(self, reference_run):
        # at t = 0 the centre margin is (N - nu) m + 4^{-m} + B
        mesh = reference_run.mesh
        ms, margins = [], []
        for rung, rec in zip(reference_run.rungs, reference_run.records):
            v = dg.check_barrier(rec, rung, mesh, ORIGIN, 0.5, FlowParams(T=0.7))
            w = dg.AtomRegularizer(ORIGIN.center, rung.m_cutoff).of_log_radius(mesh.s)
            barrier = 0.5 * w + mesh.r2 + v.detail["B"]
            margins.append(barrier[0] - rec.snapshots[0].values[0] - v.detail["B"])
            ms.append(rung.m)
        expected = [0.5 * m + 4.0**-m for m in ms]
        assert margins == pytest.approx(expected, abs=1e-6)

    def test_skipped_after_dissolution(self):
        mesh = RadialMesh(-10.0, 400, 1)
        params = FlowParams(T=0.5)
        rung, rec = solve_radial(unit_data(params, (ORIGIN,)), 3, mesh, [0.3])
        late = RunRecord(rec.solver, rec.rung, rec.geometry, rec.snapshots[1:], meta=rec.meta)
        v = dg.check_barrier(late, rung, mesh, ORIGIN, 0.5, params)
        assert v.passed and "skipped" in v.detail

    def test_requires_nu_below_mass(self, reference_run):
        with pytest.raises(ValueError):
            dg.check_barrier(reference_run.records[0], reference_run.rungs[0], reference_run.mesh, ORIGIN, 1.0, FlowParams())


class TestRunBounds:
    def test_envelopes_and_continuity(self, damped_run):
        params = FlowParams(A=1.0)
        for rung, rec in zip(damped_run.rungs, damped_run.records):
            assert dg.check_envelopes(rec, rung, damped_run.mesh, params).passed
            assert dg.check_lower_continuity(rec, rung, params).passed

    def test_continuity_series_increasing(self, reference_run):
        C = dg.continuity_series(reference_run.rungs[-1], FlowParams(T=0.7), np.linspace(0, 0.7, 30))
        assert np.all(np.diff(C) >= 0)

    def test_comparison_margin_requires_shared_times(self):
        mesh = RadialMesh(-10.0, 400, 1)
        a = fake_record(1, [(0.0, mesh.s)], 1)
        b = fake_record(1, [(0.1, mesh.s)], 1)
        with pytest.raises(ValueError):
            dg.comparison_margin(a, b)


class TestLimits:
    def test_reference(self, reference_run):
        l1, uniform = dg.check_limits_at_zero(
            reference_run.records[-1], reference_run.rungs[-1], reference_run.mesh,
            reference_run.scenario.unit_data().datum, FlowParams(T=0.7),
        )
        assert l1.passed and l1.detail["t"] == 0.001
        assert uniform.passed

    def test_smooth_scenario_sandwich(self, smooth_run):
        _, uniform = dg.check_limits_at_zero(
            smooth_run.records[-1], smooth_run.rungs[-1], smooth_run.mesh, smooth_run.scenario.unit_data().datum, FlowParams(T=0.5)
        )
        for t, gap, C in uniform.detail["series"]:
            assert gap <= 2 * C + 1e-3


class TestReport:
    def test_serialises(self, reference_run):
        d = reference_run.report.to_dict()
        assert d["passed"] is True
        assert {"verdicts", "slopes", "dissolution", "ladder_gaps", "notes"} <= set(d)
        assert all("tolerance" in v for v in d["verdicts"])
