"""Closed-form quantities of the flow, envelope bounds and matrix inequalities.

The flow studied throughout the package is

    du/dt = log det(u_{a b̄}) - A u + f(z, t)   on  Omega x (0, T)

with Dirichlet data ``phi`` on the lateral boundary.  Everything here is a pure
function of its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FlowParams:
    """Complex dimension ``n``, damping ``A`` and horizon ``T``."""

    n: int = 1
    A: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"complex dimension must be an integer >= 1, got {self.n!r}")
        if not self.A >= 0:
            raise ValueError(f"damping A must be >= 0, got {self.A!r}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be > 0, got {self.T!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "A", float(self.A))
        object.__setattr__(self, "T", float(self.T))


@dataclass(frozen=True)
class LelongAtom:
    """A logarithmic pole ``mass * log|z - center|`` of the initial datum."""

    center: tuple[float, ...]
    mass: float

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"atom mass must be > 0, got {self.mass!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "mass", float(self.mass))

    def inside(self, radius: float) -> bool:
        return float(np.hypot.reduce(self.center)) < radius if self.center else True


@dataclass(frozen=True)
class BoundaryTimeData:
    """Sampled boundary data ``phi`` and source ``f`` with cached envelopes.

    ``phi`` has shape (n_times, n_boundary) and ``f`` shape (n_times, n_points);
    both are sampled on the common time grid ``times``.
    """

    times: np.ndarray
    phi: np.ndarray
    f: np.ndarray
    sup_phi_dot: float = field(init=False)
    sup_f_dot: float = field(init=False)
    sup_abs_phi: float = field(init=False)
    sup_abs_f: float = field(init=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        f = np.atleast_2d(np.asarray(self.f, dtype=float))
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("times must be a strictly increasing grid with >= 2 samples")
        if phi.shape[0] != len(times) or f.shape[0] != len(times):
            raise ValueError("phi and f must be sampled on every time of the grid")
        dt = np.diff(times)[:, None]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "sup_phi_dot", float(np.max(np.abs(np.diff(phi, axis=0) / dt))))
        object.__setattr__(self, "sup_f_dot", float(np.max(np.abs(np.diff(f, axis=0) / dt))))
        object.__setattr__(self, "sup_abs_phi", float(np.max(np.abs(phi))))
        object.__setattr__(self, "sup_abs_f", float(np.max(np.abs(f))))

    def envelope_constant(self, params: FlowParams) -> float:
        """``B = 2 sup|phi_t| + T sup|f_t| + n`` from the sampled suprema."""
        return 2.0 * self.sup_phi_dot + params.T * self.sup_f_dot + params.n


@dataclass(frozen=True)
class HermitianSample:
    entries: np.ndarray
    positive_definite: bool = field(init=False)

    def __post_init__(self):
        H = np.asarray(self.entries, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("entries must be a square matrix")
        scale = max(1.0, float(np.max(np.abs(H))))
        if np.max(np.abs(H - H.conj().T)) > 1e-12 * scale:
            raise ValueError("entries are not Hermitian")
        H = 0.5 * (H + H.conj().T)
        object.__setattr__(self, "entries", H)
        object.__setattr__(self, "positive_definite", bool(np.all(np.linalg.eigvalsh(H) > 0)))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def real_embedding(self) -> np.ndarray:
        X, Y = self.entries.real, self.entries.imag
        return np.block([[X, -Y], [Y, X]])


def _check_x(x: float) -> None:
    if not x > 0:
        raise ValueError(f"mass x must be > 0, got {x!r}")


def k_A(x: float, t: float, params: FlowParams) -> float:
    """Remaining Lelong mass at time ``t`` of an initial mass ``x``.

    ``x - 2nt`` without damping, ``-2n/A + (2n/A + x) exp(-At)`` otherwise.  The
    branch is chosen by ``A == 0`` exactly.
    """
    _check_x(x)
    if not t >= 0:
        raise ValueError(f"time must be >= 0, got {t!r}")
    n, A = params.n, params.A
    if A == 0:
        return x - 2.0 * n * t
    c = 2.0 * n / A
    # -c + (c + x) e^{-At}, written to stay accurate when At is small
    return x * math.exp(-A * t) + c * math.expm1(-A * t)


def epsilon_A(x: float, params: FlowParams) -> float:
    """Time at which ``k_A(x, .)`` reaches zero."""
    _check_x(x)
    n, A = params.n, params.A
    if A == 0:
        return x / (2.0 * n)
    return math.log1p(A * x / (2.0 * n)) / A


def continuity_bound_C(
    t: float,
    n: int,
    A: float,
    sup_abs_psi: float,
    sup_abs_g: float,
    inf_rho: float,
    boundary_osc: float,
) -> float:
    """Lower continuity constant ``C(t)``: ``v(z, t) >= v(z, 0) - C(t)``.

    Minimises ``(-n log e + A sup|psi| + sup|g|) t - e inf_rho`` over ``0 < e < 1``
    through its stationary point ``e* = n t / (-inf_rho)`` and falls back to the
    endpoint limits when ``e*`` is not interior.
    """
    if not t >= 0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    if not boundary_osc >= 0:
        raise ValueError(f"boundary_osc must be >= 0, got {boundary_osc!r}")
    if inf_rho > 0:
        raise ValueError(f"inf_rho must be <= 0, got {inf_rho!r}")
    depth = -float(inf_rho)
    K = A * sup_abs_psi + sup_abs_g
    if t == 0:
        return float(boundary_osc)
    if depth > 0 and n * t < depth:
        eps = n * t / depth
        # log taken factorwise so tiny t cannot underflow eps to zero first
        log_eps = math.log(n) + math.log(t) - math.log(depth)
        val = (-n * log_eps + K) * t + eps * depth
    else:
        # objective decreasing on (0, 1): infimum is the limit at e -> 1
        val = K * t + depth
    return float(val + boundary_osc)


def dotu_envelopes(
    u,
    u0_here,
    sup_u0: float,
    t: float,
    params: FlowParams,
    B: float,
):
    """Lower and upper bounds on ``du/dt`` at time ``t`` (vectorised over points)."""
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t!r}")
    u = np.asarray(u, dtype=float)
    u0_here = np.asarray(u0_here, dtype=float)
    A = params.A
    if A == 0:
        lower = (u - sup_u0) / t - B
        upper = (u - u0_here) / t + B
    else:
        q = A / math.expm1(A * t)
        lower = q * (u - math.exp(A * t) * max(sup_u0, 0.0)) - B
        upper = q * (u - u0_here) + B
    if lower.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


@dataclass(frozen=True)
class LaplacianVerdict:
    """Margins of ``n det^{1/n} <= tr <= n det (tr H^{-1})^{n-1}``."""

    lower_margin: float
    upper_margin: float
    scale: float
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return min(self.lower_margin, self.upper_margin) >= -self.tol * self.scale


def check_laplacian_inequality(H: HermitianSample | np.ndarray, tol: float = 1e-9) -> LaplacianVerdict:
    if not isinstance(H, HermitianSample):
        H = HermitianSample(np.asarray(H))
    n = H.n
    M = H.real_embedding()
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError("matrix is not positive definite") from None
    # the embedding carries every eigenvalue of H twice
    det = float(np.exp(np.sum(np.log(np.diag(L)))))
    tr = 0.5 * float(np.trace(M))
    Linv = np.linalg.inv(L)
    tr_inv = 0.5 * float(np.sum(Linv * Linv))
    left = n * det ** (1.0 / n)
    right = n * det * tr_inv ** (n - 1)
    return LaplacianVerdict(tr - left, right - tr, scale=max(abs(tr), abs(right), 1.0), tol=tol)
