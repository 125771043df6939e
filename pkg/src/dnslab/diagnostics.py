"""Conserved quantities, the energy balance, the momentum bounds and norm monitors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid import Grid
from .ops import Dk, Hs, Lp, curl, derivative_stack, div, jacobian, norm
from .params import Params
from .state import PrimitiveState, ReformState


@dataclass(frozen=True)
class Conserved:
    m: float
    M: np.ndarray
    Ek: float
    E: float


def conserved_quantities(s: PrimitiveState, p: Params) -> Conserved:
    """Mass, momentum, kinetic energy and total energy by midpoint quadrature."""
    g = s.grid
    m = g.integrate(s.rho)
    M = np.array([g.integrate(s.rho * s.u[i]) for i in range(g.dim)])
    Ek = 0.5 * g.integrate(s.rho * np.sum(s.u**2, axis=0))
    internal = g.integrate(p.A * s.rho**p.gamma) / (p.gamma - 1)
    return Conserved(m, M, Ek, Ek + internal)


def dissipation_density(s: PrimitiveState, p: Params) -> np.ndarray:
    """rho^δ Q(u):∇u = rho^δ (α/2 |∇u + ∇uᵀ|² + β (div u)²).

    The form is the exact work of the viscous stress. It is pointwise
    nonnegative whenever 2α + 3β ≥ 0, and in one dimension it reduces to
    rho^δ (α|∇u|² + (α+β)|div u|²).
    """
    J = jacobian(s.u, s.grid)
    sym = J + np.swapaxes(J, 0, 1)
    divu = np.trace(J, axis1=0, axis2=1)
    return s.rho**p.delta * (0.5 * p.alpha * np.sum(sym**2, axis=(0, 1)) + p.beta * divu**2)


def dissipation_rate(s: PrimitiveState, p: Params) -> float:
    return s.grid.integrate(dissipation_density(s, p))


def cauchy_schwarz_check(s: PrimitiveState, p: Params) -> float:
    """sqrt(2 m E_k) - |M|, nonnegative for every state."""
    c = conserved_quantities(s, p)
    return math.sqrt(max(2.0 * c.m * c.Ek, 0.0)) - float(np.linalg.norm(c.M))


@dataclass
class NondecayRow:
    t: float
    sup_u: float
    holds: bool
    mass_drift: float
    momentum_drift: float
    attributed_to_drift: bool = False


@dataclass
class NondecayReport:
    Cu: float
    vacuous: bool
    rows: list[NondecayRow]

    @property
    def holds(self) -> bool:
        return all(r.holds for r in self.rows)

    @property
    def violations(self) -> list[NondecayRow]:
        return [r for r in self.rows if not r.holds]


def nondecay_bound(trajectory: Sequence[PrimitiveState], p: Params, tol: float = 1e-4, drift_tol: float = 1e-6) -> NondecayReport:
    """Check sup|u(t)| >= |M(0)|/m(0) - tol on every snapshot.

    The bound is vacuous when |M(0)| is at round-off level relative to the
    momentum magnitude ∫rho|u|.

    Each row carries the relative mass and momentum drift from t=0; a violation
    whose drift exceeds ``drift_tol`` is marked as attributable to lost
    conservation, the hypothesis under which the bound holds.
    """
    c0 = conserved_quantities(trajectory[0], p)
    Cu = float(np.linalg.norm(c0.M)) / c0.m
    rows = []
    for s in trajectory:
        c = conserved_quantities(s, p)
        sup_u = float(np.sqrt(np.sum(s.u**2, axis=0)).max())
        dm = abs(c.m - c0.m) / c0.m
        dM = float(np.linalg.norm(c.M - c0.M)) / (1.0 + float(np.linalg.norm(c0.M)))
        ok = sup_u >= Cu - tol
        rows.append(NondecayRow(s.t, sup_u, ok, dm, dM, (not ok) and max(dm, dM) > drift_tol))
    scale = trajectory[0].grid.integrate(trajectory[0].rho * np.sqrt(np.sum(trajectory[0].u ** 2, axis=0)))
    vacuous = float(np.linalg.norm(c0.M)) <= 1e-12 * max(scale, 1e-300)
    return NondecayReport(Cu, vacuous, rows)


@dataclass
class EnergyBalance:
    t: np.ndarray
    E: np.ndarray
    D: np.ndarray
    residual: np.ndarray


def energy_equality_residual(trajectory: Sequence[PrimitiveState], p: Params) -> EnergyBalance:
    """E(t) + D(t) - E(0) with D accumulated by the trapezoid rule over the given states.

    Pass every time step (not only the output cadence) so that the time
    quadrature of the dissipation does not dominate the residual.
    """
    t = np.array([s.t for s in trajectory], dtype=float)
    E = np.array([conserved_quantities(s, p).E for s in trajectory])
    rate = np.array([dissipation_rate(s, p) for s in trajectory])
    D = np.concatenate([[0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(t))])
    return EnergyBalance(t, E, D, E + D - E[0])


def effective_flux(s: PrimitiveState, p: Params) -> tuple[np.ndarray, np.ndarray]:
    """F = (2α+β) div u - P(rho) and the vorticity (zero in 1-D, scalar in 2-D)."""
    F = (2 * p.alpha + p.beta) * div(s.u, s.grid) - p.A * s.rho**p.gamma
    return F, curl(s.u, s.grid)


def regularity_monitors(r: ReformState, p: Params) -> dict[str, float]:
    """Discrete versions of the norms bounding a regular solution."""
    g = r.grid
    u2 = derivative_stack(r.u, 2, g)
    hu2 = r.h * u2
    hu2_d1 = derivative_stack(hu2, 1, g)
    mon = {
        "phi_H3": norm(r.phi, Hs(3), g),
        "psi_D1": norm(r.psi, Dk(1), g),
        "psi_D2": norm(r.psi, Dk(2), g),
        "u_H3": norm(r.u, Hs(3), g),
        "sqrt_h_grad_u_L2": norm(r.u, Dk(1, weight=np.sqrt(r.h)), g),
        "h_grad2_u_H1": math.sqrt(norm(hu2, Lp(2), g) ** 2 + norm(hu2_d1, Lp(2), g) ** 2),
        "varphi_Linf": norm(r.varphi, Lp(math.inf), g),
        "grad_varphi_L6": norm(r.varphi, Dk(1, 6.0), g),
        "grad2_varphi_L3": norm(r.varphi, Dk(2, 3.0), g),
        "f_Linf": norm(r.f, Lp(math.inf), g),
        "f_L6": norm(r.f, Lp(6.0), g),
        "grad_f_L3": norm(r.f, Dk(1, 3.0), g),
        "grad2_f_L2": norm(r.f, Dk(2, 2.0), g),
    }
    return mon


MONITOR_NAMES = tuple(
    "phi_H3 psi_D1 psi_D2 u_H3 sqrt_h_grad_u_L2 h_grad2_u_H1 varphi_Linf "
    "grad_varphi_L6 grad2_varphi_L3 f_Linf f_L6 grad_f_L3 grad2_f_L2".split()
)


@dataclass
class DiagnosticsRecord:
    t: float
    m: float
    M: np.ndarray
    Ek: float
    E: float
    D: float
    energy_residual: float
    sup_u: float
    Cu: float
    min_rho: float
    monitors: dict[str, float] = field(default_factory=dict)
    relations: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")
        if self.Ek < 0:
            raise ValueError("kinetic energy must be nonnegative")

    def row(self) -> dict[str, float]:
        out = {"t": self.t, "m": self.m}
        for name, val in zip("xyz", np.atleast_1d(self.M)):
            out[f"M_{name}"] = float(val)
        out.update(
            Ek=self.Ek,
            E=self.E,
            D=self.D,
            energy_residual=self.energy_residual,
            sup_u=self.sup_u,
            Cu=self.Cu,
            min_rho=self.min_rho,
        )
        out.update(self.monitors)
        out.update(self.relations)
        return out


def make_record(s: PrimitiveState, p: Params, D: float, E0: float, Cu: float, r: ReformState | None = None, relations=None) -> DiagnosticsRecord:
    c = conserved_quantities(s, p)
    return DiagnosticsRecord(
        t=s.t,
        m=c.m,
        M=c.M,
        Ek=c.Ek,
        E=c.E,
        D=D,
        energy_residual=c.E + D - E0,
        sup_u=float(np.sqrt(np.sum(s.u**2, axis=0)).max()),
        Cu=Cu,
        min_rho=float(s.rho.min()),
        monitors=regularity_monitors(r, p) if r is not None else {},
        relations=dict(relations or {}),
    )


def record_columns(records: Iterable[DiagnosticsRecord]) -> list[str]:
    cols: list[str] = []
    for rec in records:
        for k in rec.row():
            if k not in cols:
                cols.append(k)
    return cols


def write_records_csv(records: Sequence[DiagnosticsRecord], path) -> None:
    """Rows in the fixed order t, m, M_*, Ek, E, D, energy_residual, sup_u, Cu, min_rho, monitors."""
    cols = record_columns(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rec in records:
            row = rec.row()
            w.writerow([repr(float(row[c])) if c in row else "" for c in cols])


def boundary_flux(s: PrimitiveState, p: Params) -> dict[str, float]:
    """Mass and momentum flux through the faces of a far-field box (zero when periodic).

    On truncated boxes the conserved quantities change by these fluxes, so the
    harness reports them rather than asserting exact conservation.
    """
    g: Grid = s.grid
    if g.periodic:
        return {"mass": 0.0, "momentum": 0.0}
    mass = 0.0
    mom = 0.0
    for l in range(g.dim):
        face_area = g.cell_volume / g.spacing[l]
        for end, sign in ((0, -1.0), (-1, 1.0)):
            idx = tuple(slice(None) if a != l else end for a in range(g.dim))
            rho_f, un = s.rho[idx], s.u[l][idx]
            mass += sign * float(np.sum(rho_f * un)) * face_area
            P = p.A * rho_f**p.gamma
            mom += sign * float(np.sum(rho_f * un * un + P)) * face_area
    return {"mass": mass, "momentum": mom}
