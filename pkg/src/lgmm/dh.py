"""Duistermaat-Heckman measures of the leaf families on R^3, S^3 and H^3.

Each generic leaf (a 2-sphere of radius r, a conjugacy class of trace angle
theta, a hyperbolic leaf of eigenvalue parameter lambda) pushes its volume
form to a uniform measure 2*pi * chi_[support] on an interval:

    r3_sphere : support [-r, r],                total mass 4*pi*r
    s3_class  : support [-sin(theta), sin(theta)], total mass 4*pi*sin(theta)
    h3_class  : support [exp(-lam), exp(lam)],  total mass 4*pi*sinh(lam)

Degenerate leaves (r = 0, theta in {0, pi}, lam = 0) are single points; their
measure is an atom and is reported separately by :func:`dh_atom`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

FAMILIES = ("r3_sphere", "s3_class", "h3_class")


def _check_parameter(family: str, parameter: float) -> None:
    if family == "r3_sphere":
        if not parameter > 0.0:
            raise DomainError("sphere radius must be positive (r = 0 is an atom)")
    elif family == "s3_class":
        if not 0.0 < parameter < math.pi:
            raise DomainError("trace angle must lie in (0, pi); the endpoints are atoms")
    elif family == "h3_class":
        if not parameter > 0.0:
            raise DomainError("eigenvalue parameter must be positive (lambda = 0 is an atom)")
    else:
        raise DomainError(f"unknown family {family!r}")


def dh_support(family: str, parameter: float) -> tuple[float, float]:
    """Closed support interval of the measure."""
    _check_parameter(family, parameter)
    if family == "r3_sphere":
        return (-parameter, parameter)
    if family == "s3_class":
        s = math.sin(parameter)
        return (-s, s)
    return (math.exp(-parameter), math.exp(parameter))


def dh_volume(family: str, parameter: float) -> float:
    """Total mass of the measure = symplectic volume of the leaf."""
    _check_parameter(family, parameter)
    if family == "r3_sphere":
        return 4.0 * math.pi * parameter
    if family == "s3_class":
        return 4.0 * math.pi * math.sin(parameter)
    return 4.0 * math.pi * math.sinh(parameter)


def dh_normalized_density(family: str, parameter: float, point: float) -> float:
    """Density of the normalized measure: 1/(support length) inside, 0 outside."""
    lo, hi = dh_support(family, parameter)
    if point < lo or point > hi:
        return 0.0
    return 1.0 / (hi - lo)


def dh_sample(family: str, parameter: float, rng: np.random.Generator, size=None):
    """Draw from the normalized measure (uniform on the support interval)."""
    lo, hi = dh_support(family, parameter)
    return rng.uniform(lo, hi, size=size)


def dh_atom(family: str, parameter: float) -> float:
    """Location of the Dirac mass for a degenerate (point) leaf."""
    if family == "r3_sphere" and parameter == 0.0:
        return 0.0
    if family == "s3_class" and parameter in (0.0, math.pi):
        return 0.0
    if family == "h3_class" and parameter == 0.0:
        return 1.0
    raise DomainError(f"leaf ({family}, {parameter}) is not degenerate")


@dataclass(frozen=True)
class DhMeasure:
    """Support, density and mass of one leaf's push-forward measure."""

    family: str
    parameter: float
    support: tuple[float, float]
    total_mass: float
    density: float  # constant value of the normalized density on the support

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.support[0], self.support[1], size=size)

    def cdf(self, v):
        lo, hi = self.support
        return np.clip((np.asarray(v, dtype=float) - lo) / (hi - lo), 0.0, 1.0)


def dh_measure(family: str, parameter: float) -> DhMeasure:
    lo, hi = dh_support(family, parameter)
    return DhMeasure(
        family=family,
        parameter=parameter,
        support=(lo, hi),
        total_mass=dh_volume(family, parameter),
        density=1.0 / (hi - lo),
    )
