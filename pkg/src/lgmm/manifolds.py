"""Point types for R^3, S^3 = SU(2) and H^3, with projections and radial maps.

SU(2) elements are stored as the first-row pair (a, b); the second row is
(-conj(b), conj(a)).  H^3 is the set of positive-definite Hermitian 2x2
matrices of unit determinant, stored as (a, c, b) with the upper-half-space
chart (x1, x2, y) as a secondary coordinate system.

All types are immutable values and safe to share freely.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

#: arguments of arccos/arccosh are clamped by at most this much; a larger
#: excursion signals an upstream invariant violation rather than rounding.
CLAMP_TOL = 1e-9


def _clamped_arccos(v: float) -> float:
    if v > 1.0:
        if v > 1.0 + CLAMP_TOL:
            raise DomainError(f"arccos argument {v!r} exceeds 1 beyond clamp tolerance")
        v = 1.0
    elif v < -1.0:
        if v < -1.0 - CLAMP_TOL:
            raise DomainError(f"arccos argument {v!r} below -1 beyond clamp tolerance")
        v = -1.0
    return math.acos(v)


def _clamped_arccosh(v: float) -> float:
    if v < 1.0:
        if v < 1.0 - CLAMP_TOL:
            raise DomainError(f"arccosh argument {v!r} below 1 beyond clamp tolerance")
        v = 1.0
    return math.acosh(v)


@dataclass(frozen=True)
class EuclideanPoint3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise DomainError("coordinates must be finite")

    @property
    def r(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class SU2Point:
    """Element of SU(2), i.e. a point of S^3, as the matrix entries (a, b).

    ``norm_tol`` is the accepted deviation of |a|^2+|b|^2 from 1; exact
    constructors keep the default 1e-12, discretization schemes that only
    preserve the norm approximately may pass a looser value.
    """

    a: complex
    b: complex
    norm_tol: float = field(default=1e-12, repr=False, compare=False)

    def __post_init__(self):
        if abs(self.norm_sq - 1.0) > self.norm_tol:
            raise DomainError(
                f"|a|^2+|b|^2 = {self.norm_sq!r} deviates from 1 beyond tolerance {self.norm_tol}"
            )

    @property
    def norm_sq(self) -> float:
        return abs(self.a) ** 2 + abs(self.b) ** 2

    @property
    def x(self) -> float:
        return self.a.real

    @property
    def y(self) -> float:
        return self.a.imag

    @property
    def rho(self) -> float:
        return abs(self.a)

    @property
    def phi(self) -> float:
        return cmath.phase(self.a)

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [-self.b.conjugate(), self.a.conjugate()]])


SU2_IDENTITY = SU2Point(1.0 + 0.0j, 0.0 + 0.0j)


def su2_normalize(a: complex, b: complex) -> SU2Point:
    """Rescale (a, b) to unit norm, preserving direction."""
    n = math.sqrt(abs(a) ** 2 + abs(b) ** 2)
    if n == 0.0:
        raise DomainError("cannot normalize the zero pair")
    return SU2Point(a / n, b / n)


def trace_angle(g: SU2Point) -> float:
    """Eigenvalue angle theta in [0, pi]; cos(theta) = Re(a) = tr(g)/2."""
    return _clamped_arccos(g.a.real)


def project_a(g: SU2Point) -> tuple[float, float]:
    """The upper-left matrix entry as a point (x, y) of the closed unit disc."""
    return (g.a.real, g.a.imag)


@dataclass(frozen=True)
class HPoint:
    """Positive-definite Hermitian 2x2 matrix of unit determinant: a point of H^3."""

    a: float
    c: float
    b: complex = 0.0 + 0.0j
    det_tol: float = field(default=1e-10, repr=False, compare=False)

    def __post_init__(self):
        if not (self.a > 0.0 and self.c > 0.0):
            raise DomainError("diagonal entries of an H^3 point must be positive")
        if abs(self.det - 1.0) > self.det_tol:
            raise DomainError(
                f"determinant {self.det!r} deviates from 1 beyond tolerance {self.det_tol}"
            )

    @property
    def det(self) -> float:
        return self.a * self.c - abs(self.b) ** 2

    @property
    def w(self) -> float:
        return 0.5 * (self.a + self.c)

    @property
    def lam(self) -> float:
        return _clamped_arccosh(self.w)

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.b.conjugate(), self.c]])


H3_IDENTITY = HPoint(1.0, 1.0)


@dataclass(frozen=True)
class HalfSpacePoint:
    """Upper-half-space chart (x1, x2, y > 0) of H^3; (0, 0, 1) is the base point."""

    x1: float
    x2: float
    y: float

    def __post_init__(self):
        if not self.y > 0.0:
            raise DomainError("half-space coordinate y must be positive")


def h3_from_halfspace(p: HalfSpacePoint) -> HPoint:
    """Matrix entries of the half-space point; the determinant is 1 identically."""
    s = p.x1 * p.x1 + p.x2 * p.x2
    return HPoint(a=(s + p.y * p.y) / p.y, c=1.0 / p.y, b=complex(p.x1, p.x2) / p.y)


def radial_lambda(g: HPoint) -> float:
    """Log of the large eigenvalue; equals the distance to the identity."""
    return _clamped_arccosh(g.w)


def project_wc(g: HPoint) -> tuple[float, float]:
    """The pair (w, c) = ((a+c)/2, c); c lies in [w - sqrt(w^2-1), w + sqrt(w^2-1)]."""
    return (g.w, g.c)


def h3_distance(g1: HPoint, g2: HPoint) -> float:
    """Hyperbolic distance arccosh(tr(g1 g2^{-1}) / 2).

    For a unit-determinant Hermitian matrix the inverse is the adjugate
    ((c, -b), (-conj(b), a)), so the trace is a1*c2 + a2*c1 - 2*Re(b1*conj(b2)).
    """
    half_trace = 0.5 * (g1.a * g2.c + g2.a * g1.c - 2.0 * (g1.b * g2.b.conjugate()).real)
    return _clamped_arccosh(half_trace)
