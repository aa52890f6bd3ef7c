"""Closed vocabulary of smooth data: constants, |z|^2 and log(c + |z|^2).

Every term carries a polynomial-in-time coefficient.  Terms are functions of
``r2 = |z|^2`` only, which keeps radial data radial and lets the radial solver
form node increments without cancellation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("const", "abs2", "log")


@dataclass(frozen=True)
class Term:
    kind: str
    coeffs: tuple[float, ...] = (1.0,)
    shift: float = 0.0  # the c of log(c + |z|^2)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}; expected one of {KINDS}")
        coeffs = tuple(float(c) for c in np.atleast_1d(self.coeffs))
        if not coeffs or not all(np.isfinite(coeffs)):
            raise ValueError("term coefficients must be a non-empty list of finite numbers")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "shift", float(self.shift))
        if self.kind == "log" and not self.shift > 0:
            raise ValueError(f"log(c + |z|^2) needs c > 0, got {self.shift!r}")

    def coeff(self, t: float) -> float:
        return float(np.polynomial.polynomial.polyval(t, self.coeffs))

    def coeff_dt(self, t: float) -> float:
        if len(self.coeffs) == 1:
            return 0.0
        return float(np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(self.coeffs)))

    def basis(self, r2):
        r2 = np.asarray(r2, dtype=float)
        if self.kind == "const":
            return np.ones_like(r2)
        if self.kind == "abs2":
            return r2
        return np.log(self.shift + r2)

    def basis_increments(self, s):
        """``basis(e^{2 s[k+1]}) - basis(e^{2 s[k]})`` formed without cancellation."""
        s = np.asarray(s, dtype=float)
        if self.kind == "const":
            return np.zeros(len(s) - 1)
        r2 = np.exp(2.0 * s[:-1])
        grow = np.expm1(2.0 * np.diff(s))
        if self.kind == "abs2":
            return r2 * grow
        return np.log1p(r2 * grow / (self.shift + r2))

    def log_radius_derivatives(self, s):
        """First and second derivatives of ``basis(e^{2s})`` in ``s``."""
        s = np.asarray(s, dtype=float)
        if self.kind == "const":
            return np.zeros_like(s), np.zeros_like(s)
        r2 = np.exp(2.0 * s)
        if self.kind == "abs2":
            return 2.0 * r2, 4.0 * r2
        q = self.shift + r2
        return 2.0 * r2 / q, 4.0 * self.shift * r2 / q**2

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "coeffs": list(self.coeffs)}
        if self.kind == "log":
            out["shift"] = self.shift
        return out


@dataclass(frozen=True)
class Expression:
    terms: tuple[Term, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @classmethod
    def parse(cls, raw) -> "Expression":
        """Build from a list of term tables, e.g. ``[{kind="abs2", coeffs=[1.0]}]``.

        A bare number is shorthand for a constant.
        """
        if raw is None:
            return cls(())
        if isinstance(raw, (int, float)):
            return cls((Term("const", (float(raw),)),))
        if isinstance(raw, dict):
            raw = [raw]
        terms = []
        for i, item in enumerate(raw):
            if not isinstance(item, dict):
                raise ValueError(f"term {i}: expected a table, got {type(item).__name__}")
            unknown = set(item) - {"kind", "coeffs", "shift"}
            if unknown:
                raise ValueError(f"term {i}: unknown keys {sorted(unknown)}")
            if "kind" not in item:
                raise ValueError(f"term {i}: missing 'kind'")
            try:
                terms.append(Term(item["kind"], tuple(item.get("coeffs", (1.0,))), item.get("shift", 0.0)))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"term {i}: {exc}") from None
        return cls(tuple(terms))

    def to_list(self) -> list:
        return [t.to_dict() for t in self.terms]

    def __add__(self, other: "Expression") -> "Expression":
        return Expression(self.terms + other.terms)

    @property
    def time_dependent(self) -> bool:
        return any(len(t.coeffs) > 1 for t in self.terms)

    def value(self, r2, t: float = 0.0):
        r2 = np.asarray(r2, dtype=float)
        out = np.zeros_like(r2)
        for term in self.terms:
            out = out + term.coeff(t) * term.basis(r2)
        return out

    def dt_value(self, r2, t: float = 0.0):
        r2 = np.asarray(r2, dtype=float)
        out = np.zeros_like(r2)
        for term in self.terms:
            c = term.coeff_dt(t)
            if c:
                out = out + c * term.basis(r2)
        return out

    def radial_increments(self, s, t: float = 0.0):
        s = np.asarray(s, dtype=float)
        out = np.zeros(len(s) - 1)
        for term in self.terms:
            out += term.coeff(t) * term.basis_increments(s)
        return out

    def log_radius_derivatives(self, s, t: float = 0.0):
        s = np.asarray(s, dtype=float)
        d1 = np.zeros_like(s)
        d2 = np.zeros_like(s)
        for term in self.terms:
            a, b = term.log_radius_derivatives(s)
            c = term.coeff(t)
            d1 = d1 + c * a
            d2 = d2 + c * b
        return d1, d2

    def rescaled(self, R: float) -> "Expression":
        """The same function written in ``zeta = z / R``."""
        if R == 1.0:
            return self
        terms = []
        for term in self.terms:
            if term.kind == "abs2":
                terms.append(Term("abs2", tuple(c * R * R for c in term.coeffs)))
            elif term.kind == "log":
                # log(c + R^2 |zeta|^2) = 2 log R + log(c / R^2 + |zeta|^2)
                terms.append(Term("log", term.coeffs, term.shift / (R * R)))
                terms.append(Term("const", tuple(2.0 * math.log(R) * c for c in term.coeffs)))
            else:
                terms.append(term)
        return Expression(tuple(terms))

    def is_psh(self) -> bool:
        """Sufficient check: |z|^2 and log terms enter with nonnegative weight."""
        return all(t.kind == "const" or t.coeff(0.0) >= 0 for t in self.terms)


def abs2(coeff: float = 1.0) -> Expression:
    return Expression((Term("abs2", (coeff,)),))


def const(value: float) -> Expression:
    return Expression((Term("const", (value,)),))
