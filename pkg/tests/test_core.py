import math

import numpy as np
import pytest
from helpers import brute_force_C
from scipy.stats import unitary_group

from pmaflow.core import (
    BoundaryTimeData,
    FlowParams,
    HermitianSample,
    LelongAtom,
    check_laplacian_inequality,
    continuity_bound_C,
    dotu_envelopes,
    epsilon_A,
    k_A,
)


class TestFlowParams:
    def test_defaults(self):
        p = FlowParams()
        assert (p.n, p.A, p.T) == (1, 0.0, 1.0)

    @pytest.mark.parametrize("kw", [{"n": 0}, {"n": 1.5}, {"A": -0.1}, {"T": 0.0}, {"T": -1.0}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            FlowParams(**kw)


class TestLelongAtom:
    def test_rejects_nonpositive_mass(self):
        with pytest.raises(ValueError):
            LelongAtom((0.0, 0.0), 0.0)

    def test_inside(self):
        assert LelongAtom((0.3, 0.4), 1.0).inside(1.0)
        assert not LelongAtom((0.6, 0.8), 1.0).inside(1.0)


class TestKA:
    def test_zero_time_returns_mass(self):
        assert k_A(1.0, 0.0, FlowParams()) == 1.0
        assert k_A(1.0, 0.0, FlowParams(A=2.0)) == pytest.approx(1.0, abs=1e-15)

    def test_undamped_hand_value(self):
        assert k_A(1.0, 0.25, FlowParams()) == pytest.approx(0.5, abs=1e-15)

    def test_damped_hand_value(self):
        assert k_A(2.0, math.log(2.0), FlowParams(A=1.0)) == pytest.approx(0.0, abs=1e-14)

    def test_damped_branch_matches_written_formula(self):
        p = FlowParams(n=2, A=0.7)
        x, t = 1.3, 0.4
        c = 2 * p.n / p.A
        assert k_A(x, t, p) == pytest.approx(-c + (c + x) * math.exp(-p.A * t), rel=1e-13)

    def test_small_damping_is_continuous(self):
        # the exact A = 0 branch and a tiny A must agree
        for x in np.linspace(0.1, 5, 7):
            for t in np.linspace(0, 5, 7):
                assert abs(k_A(x, t, FlowParams(A=1e-8)) - k_A(x, t, FlowParams())) <= 1e-6

    def test_near_zero_first_order_in_damping(self):
        # d/dA k_A at A = 0 is -x t + n t^2
        for n in (1, 2):
            for x, t in [(1.0, 10.0), (0.5, 1e-3), (3.0, 0.7)]:
                A = 1e-6 / t
                gap = k_A(x, t, FlowParams(n=n, A=A)) - k_A(x, t, FlowParams(n=n))
                assert gap == pytest.approx(A * (-x * t + n * t * t), rel=1e-5, abs=1e-15)

    @pytest.mark.parametrize("x,t", [(0.0, 0.1), (-1.0, 0.1), (1.0, -0.1)])
    def test_rejects_invalid(self, x, t):
        with pytest.raises(ValueError):
            k_A(x, t, FlowParams())


class TestEpsilonA:
    def test_undamped(self):
        assert epsilon_A(1.0, FlowParams()) == 0.5

    def test_damped(self):
        assert epsilon_A(2.0, FlowParams(A=1.0)) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_root_property(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = FlowParams(n=int(rng.integers(1, 4)), A=float(rng.choice([0.0, rng.uniform(0, 3)])))
            x = rng.uniform(0.01, 5)
            assert abs(k_A(x, epsilon_A(x, p), p)) <= 1e-12

    def test_monotone_in_mass(self):
        for A in (0.0, 1.0):
            xs = np.linspace(0.01, 10, 1000)
            eps = [epsilon_A(x, FlowParams(A=A)) for x in xs]
            assert np.all(np.diff(eps) > 0)

    def test_k_decreasing_in_time(self):
        for A in (0.0, 0.5):
            ts = np.linspace(0, 3, 1000)
            ks = [k_A(1.0, t, FlowParams(A=A)) for t in ts]
            assert np.all(np.diff(ks) < 0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            epsilon_A(0.0, FlowParams())


class TestContinuityBound:
    def test_t_zero_returns_oscillation(self):
        assert continuity_bound_C(0.0, 1, 0.0, 1.0, 1.0, -1.0, 0.25) == 0.25

    def test_calculus_oracle(self):
        expected = 0.1 * (1 - math.log(0.1))
        assert continuity_bound_C(0.1, 1, 0.0, 0.0, 0.0, -1.0, 0.0) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.330259, abs=1e-6)

    def test_endpoint_fallback(self):
        # n t >= depth: the objective decreases on (0, 1)
        C = continuity_bound_C(2.0, 1, 0.0, 0.0, 0.5, -1.0, 0.0)
        assert C == pytest.approx(brute_force_C(2.0, 1, 0.0, 0.0, 0.5, -1.0, 0.0), rel=1e-6)

    def test_matches_grid_minimisation(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            args = (
                rng.uniform(1e-3, 1.0),
                int(rng.integers(1, 4)),
                rng.uniform(0, 2),
                rng.uniform(0, 3),
                rng.uniform(0, 3),
                -rng.uniform(0.1, 2),
                rng.uniform(0, 0.5),
            )
            assert continuity_bound_C(*args) == pytest.approx(brute_force_C(*args), rel=1e-6)

    def test_monotone_in_time(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n, A = int(rng.integers(1, 4)), rng.uniform(0, 2)
            rest = (rng.uniform(0, 3), rng.uniform(0, 3), -rng.uniform(0.1, 2), rng.uniform(0, 0.5))
            t1, t2 = sorted(rng.uniform(0, 2, 2))
            assert continuity_bound_C(t1, n, A, *rest) <= continuity_bound_C(t2, n, A, *rest) + 1e-12

    @pytest.mark.parametrize("kw", [{"t": -0.1}, {"boundary_osc": -1.0}, {"inf_rho": 0.5}])
    def test_rejects_invalid(self, kw):
        args = {"t": 0.1, "n": 1, "A": 0.0, "sup_abs_psi": 0.0, "sup_abs_g": 0.0, "inf_rho": -1.0, "boundary_osc": 0.0}
        args.update(kw)
        with pytest.raises(ValueError):
            continuity_bound_C(**args)


class TestEnvelopes:
    def test_hand_values(self):
        assert dotu_envelopes(2.0, 1.0, 1.0, 0.5, FlowParams(), 3.0) == pytest.approx((-1.0, 5.0))

    def test_trivial(self):
        for n in (1, 2, 3):
            assert dotu_envelopes(0.0, 0.0, 0.0, 1.0, FlowParams(n=n), float(n)) == (-n, n)

    def test_damped_branch(self):
        p = FlowParams(A=2.0)
        q = 2.0 / math.expm1(2.0 * 0.3)
        lo, hi = dotu_envelopes(1.5, 0.5, 1.0, 0.3, p, 2.0)
        assert lo == pytest.approx(q * (1.5 - math.exp(0.6) * 1.0) - 2.0)
        assert hi == pytest.approx(q * (1.5 - 0.5) + 2.0)

    def test_ordering(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            u0 = rng.uniform(-2, 2)
            sup_u0 = u0 + rng.uniform(0, 2)
            p = FlowParams(A=float(rng.choice([0.0, rng.uniform(0, 2)])))
            lo, hi = dotu_envelopes(rng.uniform(-3, 3), u0, sup_u0, rng.uniform(1e-3, 2), p, rng.uniform(0, 3))
            assert lo <= hi

    def test_vectorised(self):
        lo, hi = dotu_envelopes(np.zeros(3), np.zeros(3), 0.0, 1.0, FlowParams(), 1.0)
        assert lo.shape == hi.shape == (3,)

    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            dotu_envelopes(0.0, 0.0, 0.0, 0.0, FlowParams(), 1.0)


class TestBoundaryTimeData:
    def test_cached_envelopes(self):
        t = np.linspace(0, 1, 11)
        phi = np.outer(t**2, [1.0, 2.0])
        f = np.outer(np.sin(t), [1.0, -1.0, 0.5])
        data = BoundaryTimeData(t, phi, f)
        assert data.sup_abs_phi == pytest.approx(2.0)
        assert data.sup_phi_dot == pytest.approx(np.max(np.abs(np.diff(phi, axis=0))) / 0.1)
        assert data.sup_abs_f == pytest.approx(np.sin(1.0))
        assert data.envelope_constant(FlowParams(n=2, T=1.0)) == pytest.approx(
            2 * data.sup_phi_dot + data.sup_f_dot + 2
        )

    def test_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            BoundaryTimeData(np.array([0.0, 0.0]), np.zeros((2, 1)), np.zeros((2, 1)))


class TestLaplacianInequality:
    def test_identity(self):
        v = check_laplacian_inequality(np.eye(2))
        assert v.lower_margin == pytest.approx(0.0, abs=1e-14)
        assert v.upper_margin == pytest.approx(2.0)
        assert v.passed

    def test_diag_1_4(self):
        v = check_laplacian_inequality(np.diag([1.0, 4.0]))
        # 4 <= 5 <= 10
        assert v.lower_margin == pytest.approx(1.0)
        assert v.upper_margin == pytest.approx(5.0)

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            check_laplacian_inequality(np.diag([1.0, -1.0]))

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            HermitianSample(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_definiteness_flag(self):
        assert HermitianSample(np.eye(3)).positive_definite
        assert not HermitianSample(np.diag([1.0, 0.0])).positive_definite

    def test_unitary_invariance(self):
        rng = np.random.default_rng(4)
        for n in (1, 2, 3):
            G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            H = G @ G.conj().T + np.eye(n)
            U = unitary_group.rvs(n, random_state=5) if n > 1 else np.array([[np.exp(0.3j)]])
            a = check_laplacian_inequality(H)
            b = check_laplacian_inequality(U @ H @ U.conj().T)
            assert a.lower_margin == pytest.approx(b.lower_margin, abs=1e-10 * a.scale)
            assert a.upper_margin == pytest.approx(b.upper_margin, abs=1e-10 * a.scale)

    def test_against_eigenvalue_oracle(self):
        rng = np.random.default_rng(5)
        for n in (1, 2, 3):
            for _ in range(50):
                G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
                H = G @ G.conj().T + 0.1 * np.eye(n)
                lam = np.linalg.eigvalsh(H)
                v = check_laplacian_inequality(H)
                det, tr, tr_inv = np.prod(lam), np.sum(lam), np.sum(1 / lam)
                assert v.lower_margin == pytest.approx(tr - n * det ** (1 / n), abs=1e-9 * v.scale)
                assert v.upper_margin == pytest.approx(n * det * tr_inv ** (n - 1) - tr, abs=1e-9 * v.scale)
