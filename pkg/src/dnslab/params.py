"""Physical and regularization parameters and the constants derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ParamError


@dataclass(frozen=True)
class Params:
    """Pressure law P = A rho^gamma, viscosities mu = alpha rho^delta, lambda = beta rho^delta.

    ``eps`` is the artificial-viscosity floor in the coefficient sqrt(h^2 + eps^2)
    and ``eta`` lifts the initial pressure variable away from vacuum.
    """

    A: float = 1.0
    gamma: float = 2.0
    delta: float = 0.5
    alpha: float = 1.0
    beta: float = 0.0
    eps: float = 0.0
    eta: float = 0.0
    dim: int = 1

    def replace(self, **changes) -> "Params":
        return replace(self, **changes)


@dataclass(frozen=True)
class DerivedConstants:
    a: float
    e: float


def validate_params(p: Params) -> list[str]:
    """Return every violated constraint; an empty list means the parameters are valid."""
    v = []
    if not p.A > 0:
        v.append(f"A must be positive (got {p.A})")
    if not p.gamma > 1:
        v.append(f"gamma must exceed 1 (got {p.gamma})")
    if not 0 < p.delta < 1:
        v.append(f"delta must lie in (0,1) (got {p.delta})")
    if not p.alpha > 0:
        v.append(f"alpha must be positive (got {p.alpha})")
    lame = 2 * p.alpha + 3 * p.beta
    if not lame >= 0:
        v.append(f"2α+3β≥0 fails (={lame:g})")
    if not p.eps >= 0:
        v.append(f"eps must be nonnegative (got {p.eps})")
    if not p.eta >= 0:
        v.append(f"eta must be nonnegative (got {p.eta})")
    if p.dim not in (1, 2, 3):
        v.append(f"dim must be 1, 2 or 3 (got {p.dim})")
    return v


def check_params(p: Params) -> Params:
    violations = validate_params(p)
    if violations:
        raise ParamError(violations)
    return p


def derive_constants(p: Params) -> DerivedConstants:
    """a = (A gamma/(gamma-1))^((1-delta)/(gamma-1)), e = (delta-1)/(2(gamma-1))."""
    check_params(p)
    base = p.A * p.gamma / (p.gamma - 1)
    e = (p.delta - 1) / (2 * (p.gamma - 1))
    log_a = (1 - p.delta) / (p.gamma - 1) * math.log(base)
    if log_a > 700:
        raise ParamError([f"derived constant a = exp({log_a:.1f}) is not representable in float64"])
    a = math.exp(log_a)
    assert e < 0 and a > 0
    return DerivedConstants(a=a, e=e)


def pressure_coefficient(p: Params) -> float:
    """The factor A gamma/(gamma-1) linking phi to rho^(gamma-1)."""
    return p.A * p.gamma / (p.gamma - 1)


def psi_factor(p: Params) -> float:
    """a delta/(delta-1): psi = psi_factor * grad(h)."""
    return derive_constants(p).a * p.delta / (p.delta - 1)


def a_via_e(p: Params) -> float:
    """Same constant a, computed through the exponent -2e."""
    e = (p.delta - 1) / (2 * (p.gamma - 1))
    return math.pow(pressure_coefficient(p), -2 * e)
