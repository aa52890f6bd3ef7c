"""Shared builders for the test suite."""
from __future__ import annotations

import math

import numpy as np

from pmaflow.core import FlowParams, LelongAtom
from pmaflow.expressions import Expression, Term
from pmaflow.radial import RadialMesh, run_flow
from pmaflow.regularization import InitialDatum, build_rung
from pmaflow.scenario import UnitData


def unit_data(params, atoms=(), smooth=None, phi=None, f=None, phi_atoms=False) -> UnitData:
    smooth = smooth if smooth is not None else Expression((Term("abs2"),))
    return UnitData(
        params,
        InitialDatum(tuple(atoms), smooth),
        phi if phi is not None else smooth,
        f if f is not None else Expression(),
        phi_atoms,
    )


def ordered_pair(rng: np.random.Generator, n: int, T: float = 0.2):
    """Two radial data sets with ``u0 <= v0``, ``phi_u <= phi_v`` and ``f_u <= f_v``.

    Each gap is switched off at random so some pairs touch.
    """

    def gap(lo, hi):
        return 0.0 if rng.random() < 0.3 else rng.uniform(lo, hi)

    A = float(rng.choice([0.0, 0.5, 1.0]))
    params = FlowParams(n=n, A=A, T=T)
    a = rng.uniform(0.5, 2.0)
    b = rng.uniform(0.0, 0.5)
    c = rng.uniform(0.2, 2.0)
    N_u = float(rng.choice([0.0, rng.uniform(0.3, 1.5)]))
    N_v = N_u - gap(0.0, N_u)
    lift = gap(0.0, 0.3)
    squeeze = gap(0.0, 0.4) * a
    rate = gap(0.0, 1.0)
    f0 = rng.uniform(-0.5, 0.5)
    df = gap(0.0, 0.5)

    smooth_u = Expression((Term("abs2", (a,)), Term("log", (b,), c)))
    # v0 - u0 = lift + squeeze (1 - |z|^2) + (N_u - N_v)(-log|z|) >= 0
    smooth_v = Expression((Term("abs2", (a - squeeze,)), Term("log", (b,), c), Term("const", (lift + squeeze,))))
    phi_v = smooth_v + Expression((Term("const", (0.0, rate)),))
    f_u = Expression((Term("const", (f0,)),))
    f_v = Expression((Term("const", (f0 + df,)),))
    centre = (0.0,) * (2 * n)
    atoms_u = (LelongAtom(centre, N_u),) if N_u > 0 else ()
    atoms_v = (LelongAtom(centre, N_v),) if N_v > 0 else ()
    return params, unit_data(params, atoms_u, smooth_u, smooth_u, f_u), unit_data(params, atoms_v, smooth_v, phi_v, f_v)


def offset_pair(rng: np.random.Generator, n: int, T: float = 0.2):
    """``v`` is ``u`` with data lowered by an initial, a boundary and a source offset.

    Returns the pair with ``max(A1, A2) + A3 T``, the allowance of the weak comparison.
    """
    params, du, _ = ordered_pair(rng, n, T)
    a1 = rng.uniform(0.0, 0.2)
    growth = rng.uniform(0.0, 0.5)
    a3 = rng.uniform(0.0, 0.5)
    lowered = Expression((Term("const", (-a1,)),))
    dv = unit_data(
        params,
        du.datum.atoms,
        du.datum.smooth + lowered,
        du.phi + Expression((Term("const", (-a1, -growth)),)),
        du.f + Expression((Term("const", (-a3,)),)),
    )
    return params, du, dv, a1 + growth * T + a3 * T


def solve_radial(data: UnitData, m: int, mesh: RadialMesh, times, dt0=1e-3):
    rung = build_rung(data, m, mesh)
    return rung, run_flow(rung, mesh, times, data.params, dt0=dt0)


def brute_force_C(t, n, A, sup_psi, sup_g, inf_rho, osc):
    """Two-stage grid minimisation over eps in (0, 1)."""

    def obj(e):
        return (-n * np.log(e) + A * sup_psi + sup_g) * t - e * inf_rho

    grid = np.linspace(1e-9, 1 - 1e-9, 10_000)
    k = int(np.argmin(obj(grid)))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    fine = np.linspace(lo, hi, 10_000)
    return float(np.min(obj(fine))) + osc


def complex_hessian_fd(u, z, h=1e-3):
    """``u_{a b̄}`` from a central-difference real Hessian in ``(x_1, y_1, ..., x_n, y_n)``.

    Steps ``h`` and ``h/2`` are Richardson-combined to fourth order.
    """
    n = len(z)
    x = np.empty(2 * n)
    x[0::2], x[1::2] = z.real, z.imag

    def f(p):
        return u(p[0::2] + 1j * p[1::2])

    d = 2 * n

    def real_hessian(step):
        H = np.empty((d, d))
        E = np.eye(d) * step
        for i in range(d):
            for j in range(i, d):
                H[i, j] = H[j, i] = (
                    f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j]) + f(x - E[i] - E[j])
                ) / (4 * step * step)
        return H

    Hr = (4 * real_hessian(h / 2) - real_hessian(h)) / 3
    X = Hr[0::2, 0::2]
    Y = Hr[1::2, 1::2]
    XY = Hr[0::2, 1::2]
    return 0.25 * (X + Y + 1j * (XY - XY.T))


def random_radial_function(rng):
    """``u = a|z|^2 + b log(c + |z|^2) + N log|z| + e|z|^4`` with its ``v', v''`` in ``s``."""
    a, b, c, N, e = rng.uniform(0.2, 2), rng.uniform(0, 1), rng.uniform(0.1, 2), rng.uniform(0, 1.5), rng.uniform(0, 1)

    def u(z):
        r2 = float(np.sum(np.abs(z) ** 2))
        return a * r2 + b * math.log(c + r2) + 0.5 * N * math.log(r2) + e * r2 * r2

    def derivs(s):
        r2 = math.exp(2 * s)
        vp = 2 * a * r2 + 2 * b * r2 / (c + r2) + N + 4 * e * r2 * r2
        vpp = 4 * a * r2 + 4 * b * c * r2 / (c + r2) ** 2 + 16 * e * r2 * r2
        return vp, vpp

    return u, derivs
