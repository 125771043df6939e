"""Transforms between (rho, u) and the reformulated variables, plus relation residuals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OverflowFieldError, PositivityError
from .ops import curl_residual, grad, lp_of_magnitude, pointwise_magnitude
from .params import Params, derive_constants, pressure_coefficient
from .state import PrimitiveState, ReformState


def _finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise OverflowFieldError(f"{name} overflowed near vacuum")
    return arr


def phi_from_rho(rho: np.ndarray, p: Params) -> np.ndarray:
    return pressure_coefficient(p) * rho ** (p.gamma - 1)


def rho_from_phi(phi: np.ndarray, p: Params) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if not np.all(phi > 0):
        raise PositivityError(f"phi must be strictly positive (min {phi.min():.3e})")
    return (phi / pressure_coefficient(p)) ** (1.0 / (p.gamma - 1))


def aux_from_phi(phi: np.ndarray, p: Params, grid) -> dict[str, np.ndarray]:
    """h, varphi, psi, f built from phi alone (psi as gradient of a pointwise power)."""
    c = derive_constants(p)
    h = _finite("h", phi ** (2 * c.e))
    varphi = _finite("varphi", phi ** (-2 * c.e))
    psi = _finite("psi", c.a * p.delta / (p.delta - 1) * grad(h, grid))
    return {"h": h, "varphi": varphi, "psi": psi, "f": psi * varphi}


def to_reform(s: PrimitiveState, p: Params) -> ReformState:
    """phi = (Aγ/(γ-1)) rho^(γ-1), psi = (δ/(δ-1)) ∇(rho^(δ-1)), h = phi^(2e), varphi = 1/h, f = psi varphi."""
    rho = s.rho
    if not np.all(rho > 0):
        raise PositivityError("rho must be strictly positive")
    phi = phi_from_rho(rho, p)
    c = derive_constants(p)
    h = _finite("h", phi ** (2 * c.e))
    varphi = _finite("varphi", phi ** (-2 * c.e))
    psi = _finite("psi", p.delta / (p.delta - 1) * grad(rho ** (p.delta - 1), s.grid))
    return ReformState(s.grid, phi, s.u, psi, h, varphi, psi * varphi, s.t)


def from_reform(r: ReformState, p: Params) -> PrimitiveState:
    return PrimitiveState(r.grid, rho_from_phi(r.phi, p), r.u, r.t)


def lift(r: ReformState, p: Params, eta: float) -> ReformState:
    """Replace phi by phi + eta and rebuild the auxiliary fields consistently."""
    phi = r.phi + eta
    return to_reform(PrimitiveState(r.grid, rho_from_phi(phi, p), r.u, r.t), p)


@dataclass
class RelationReport:
    """L2 residuals of the algebraic relations among the reformulated fields."""

    psi_vs_grad_h: float
    h_varphi: float
    f_vs_psi_varphi: float
    f_vs_grad_log_phi: float
    curl_psi: float
    curl_f: float
    psi_primitive: float | None = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "psi_vs_grad_h": self.psi_vs_grad_h,
            "h_varphi": self.h_varphi,
            "f_vs_psi_varphi": self.f_vs_psi_varphi,
            "f_vs_grad_log_phi": self.f_vs_grad_log_phi,
            "curl_psi": self.curl_psi,
            "curl_f": self.curl_f,
        }
        if self.psi_primitive is not None:
            d["psi_primitive"] = self.psi_primitive
        return d


def relation_residuals(r: ReformState, p: Params) -> RelationReport:
    g = r.grid
    c = derive_constants(p)

    def l2(x):
        return lp_of_magnitude(pointwise_magnitude(x, g), 2.0, g)

    psi_h = r.psi - c.a * p.delta / (p.delta - 1) * grad(r.h, g)
    f_log = r.f - 2 * c.a * c.e * p.delta / (p.delta - 1) * grad(r.phi, g) / r.phi
    rho = rho_from_phi(r.phi, p)
    # the same object without the constant a, i.e. δ/(δ-1) ∇rho^(δ-1) on the primitive side
    psi_prim = p.delta / (p.delta - 1) * grad(rho ** (p.delta - 1), g)
    return RelationReport(
        psi_vs_grad_h=l2(psi_h),
        h_varphi=l2(r.h * r.varphi - 1.0),
        f_vs_psi_varphi=l2(r.f - r.psi * r.varphi),
        f_vs_grad_log_phi=l2(f_log),
        curl_psi=l2(curl_residual(r.psi, g)),
        curl_f=l2(curl_residual(r.f, g)),
        psi_primitive=l2(r.psi - psi_prim),
    )
