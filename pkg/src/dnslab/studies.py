"""Refinement studies: transport schemes against characteristic oracles, and the full scheme."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import FARFIELD, PERIODIC, Grid
from .params import Params
from .picard import PicardConfig, solve_nonlinear
from .state import PrimitiveState
from .transport import TransportScheme, advance_h, advance_phi, advance_varphi, characteristic_oracle

TRANSPORT_CASES = ("constant", "linear", "h_linear", "varphi_linear")


def fitted_order(dx, errors) -> float:
    """Least-squares slope of log(error) against log(dx)."""
    return float(np.polyfit(np.log(np.asarray(dx, dtype=float)), np.log(np.asarray(errors, dtype=float)), 1)[0])


def _bump(x):
    return 1.0 + 0.5 * np.exp(-4.0 * np.asarray(x) ** 2)


@dataclass
class OrderStudy:
    method: str
    case: str
    n: list[int]
    dx: list[float]
    errors: list[float]

    @property
    def order(self) -> float:
        return fitted_order(self.dx, self.errors)

    def rows(self) -> list[dict]:
        return [
            {"method": self.method, "case": self.case, "n": n, "dx": d, "error": e}
            for n, d, e in zip(self.n, self.dx, self.errors)
        ]


def transport_case_error(method: str, case: str, n: int, T: float = 0.2, courant: float = 0.4, delta: float = 0.5, gamma: float = 2.0) -> tuple[float, float]:
    """(dx, L² error at time T) of one scheme on one 1-D oracle case, with dt ∝ dx."""
    scheme = TransportScheme(method)
    if case == "constant":
        g = Grid.uniform(1, n, 1.0, PERIODIC)
        x = g.coords[0]
        v = np.ones((1, n))
        steps = max(1, int(math.ceil(T / (courant * g.dx))))
        dt = T / steps
        f = np.exp(np.sin(2 * np.pi * x))
        for _ in range(steps):
            f = advance_phi(f, v, dt, gamma, g, scheme)
        exact = np.exp(np.sin(2 * np.pi * (x - T)))
        return g.dx, float(np.sqrt(g.integrate((f - exact) ** 2)))
    g = Grid.uniform(1, n, 2.0, FARFIELD)
    x = g.coords[0]
    v = x[None].copy()
    steps = max(1, int(math.ceil(T / (courant * g.dx / np.abs(x).max()))))
    dt = T / steps
    one = np.ones(g.shape)
    pts = x[None]
    vel = lambda s, X: X
    div_v = lambda s, X: np.ones(X.shape[1])
    gfun = lambda s, X: np.ones(X.shape[1])
    f0 = lambda X: _bump(X[0])
    f = _bump(x)
    if case == "linear":
        for _ in range(steps):
            f = advance_phi(f, v, dt, gamma, g, scheme)
        exact = characteristic_oracle("phi", f0, vel, T, pts, div_v=div_v, gamma=gamma).values
    elif case == "h_linear":
        for _ in range(steps):
            f = advance_h(f, v, one, dt, delta, g, scheme)
        exact = characteristic_oracle("h", f0, vel, T, pts, div_v=div_v, g=gfun, delta=delta).values
    elif case == "varphi_linear":
        for _ in range(steps):
            f = advance_varphi(f, v, one, dt, delta, g, scheme)
        exact = characteristic_oracle("varphi", f0, vel, T, pts, div_v=div_v, g=gfun, delta=delta).values
    else:
        raise ValueError(f"unknown transport case {case!r}; choose from {TRANSPORT_CASES}")
    return g.dx, float(np.sqrt(g.integrate((f - exact) ** 2)))


def transport_order_study(method: str, case: str, levels=(32, 64, 128, 256), T: float = 0.2, courant: float = 0.4) -> OrderStudy:
    dx, err = zip(*(transport_case_error(method, case, n, T, courant) for n in levels))
    return OrderStudy(method, case, list(levels), list(dx), list(err))


def restrict(fine: np.ndarray, ndim: int) -> np.ndarray:
    """Average pairs of fine cells onto the coarse cell-centred grid along the last ``ndim`` axes."""
    out = fine
    for ax in range(out.ndim - ndim, out.ndim):
        n = out.shape[ax] // 2
        shape = out.shape[:ax] + (n, 2) + out.shape[ax + 1 :]
        out = out.reshape(shape).mean(axis=ax + 1)
    return out


@dataclass
class SchemeConvergence:
    n: list[int]
    diffs_rho: list[float]
    diffs_u: list[float]

    @property
    def orders(self) -> dict[str, list[float]]:
        def ratio(d):
            return [math.log2(a / b) if a > 0 and b > 0 else math.nan for a, b in zip(d, d[1:])]

        return {"rho": ratio(self.diffs_rho), "u": ratio(self.diffs_u)}


def scheme_convergence(init_fn, p: Params, T: float, cfg: PicardConfig, levels=(64, 128, 256)) -> SchemeConvergence:
    """Successive-level differences of the final state, with dt halved alongside Δx.

    ``init_fn(n)`` returns the initial PrimitiveState on the level-n grid.
    """
    finals: list[PrimitiveState] = []
    base = levels[0]
    for n in levels:
        c = cfg.replace(dt=cfg.dt * base / n, monitors=False, evolve_tracks=False)
        res = solve_nonlinear(init_fn(n), p, T, c)
        finals.append(res.primitive(-1))
    dr, du = [], []
    for coarse, fine in zip(finals, finals[1:]):
        g = coarse.grid
        dr.append(float(np.sqrt(g.integrate((restrict(fine.rho, g.dim) - coarse.rho) ** 2))))
        du.append(float(np.sqrt(g.integrate(np.sum((restrict(fine.u, g.dim) - coarse.u) ** 2, axis=0)))))
    return SchemeConvergence(list(levels), dr, du)
