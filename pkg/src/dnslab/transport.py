"""Frozen-coefficient transport steps for phi, h, psi, varphi and f, and characteristic oracles.

Each ``advance_*`` call is one Strang-split step: a half source update, a full
transport step, another half source update. Coefficients ``v`` and ``g`` may
be a single array (frozen over the step) or a ``(start, end)`` pair that is
interpolated linearly in time, which keeps the step second-order when the
coefficients come from a previous iterate's trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.ndimage import map_coordinates

from .errors import CFLError, PositivityError
from .grid import Grid
from .ops import d1, div, grad, grad_div, jacobian

UPWIND1 = "Upwind1"
UPWIND2 = "Upwind2"
SEMI_LAGRANGIAN = "SemiLagrangian"
METHODS = (UPWIND1, UPWIND2, SEMI_LAGRANGIAN)

# Heun time stepping is linearly stable up to these Courant numbers.
_STABILITY_LIMIT = {UPWIND1: 1.0, UPWIND2: 0.5}


@dataclass(frozen=True)
class TransportScheme:
    method: str = UPWIND2
    cfl: float = 0.9

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"transport method must be one of {METHODS} (got {self.method!r})")
        if not 0 < self.cfl <= 1:
            raise ValueError(f"CFL limit must lie in (0, 1] (got {self.cfl})")

    @property
    def courant_limit(self) -> float:
        return min(self.cfl, _STABILITY_LIMIT.get(self.method, np.inf))


Coef = "np.ndarray | tuple[np.ndarray, np.ndarray]"


def at(coef, theta: float):
    """Evaluate a frozen or (start, end) coefficient at fraction ``theta`` of the step."""
    if isinstance(coef, tuple):
        c0, c1 = coef
        if theta == 0.0:
            return c0
        if theta == 1.0:
            return c1
        return (1.0 - theta) * c0 + theta * c1
    return coef


def courant_number(v, dt: float, grid: Grid) -> float:
    ends = v if isinstance(v, tuple) else (v,)
    return max(
        sum(dt * float(np.abs(vv[l]).max()) / grid.spacing[l] for l in range(grid.dim)) for vv in ends
    )


def check_cfl(v, dt: float, grid: Grid, scheme: TransportScheme) -> None:
    if scheme.method == SEMI_LAGRANGIAN:
        return
    c = courant_number(v, dt, grid)
    if c > scheme.courant_limit * (1 + 1e-12):
        raise CFLError(
            f"Courant number {c:.4f} exceeds {scheme.courant_limit:g} for {scheme.method} "
            f"(dt={dt:g}, dx={grid.dx:g})"
        )


# ---------------------------------------------------------------- upwind differences


def _pad(f: np.ndarray, ax: int, grid: Grid) -> np.ndarray:
    width = [(0, 0)] * f.ndim
    width[ax] = (2, 2)
    if grid.periodic:
        return np.pad(f, width, mode="wrap")
    # linear extrapolation; only reached by inflow stencils, whose nodes are pinned
    out = np.pad(f, width, mode="edge")
    idx = lambda i: tuple(slice(None) if a != ax else i for a in range(f.ndim))
    first, second = f[idx(0)], f[idx(1)]
    last, before = f[idx(-1)], f[idx(-2)]
    out[idx(1)] = 2 * first - second
    out[idx(0)] = 3 * first - 2 * second
    out[idx(-2)] = 2 * last - before
    out[idx(-1)] = 3 * last - 2 * before
    return out


def _one_sided(f: np.ndarray, ax: int, grid: Grid, h: float, order: int):
    P = _pad(f, ax, grid)
    n = f.shape[ax]
    s = lambda k: tuple(slice(None) if a != ax else slice(2 + k, 2 + k + n) for a in range(f.ndim))
    if order == 1:
        back = (P[s(0)] - P[s(-1)]) / h
        fwd = (P[s(1)] - P[s(0)]) / h
    else:
        back = (3 * P[s(0)] - 4 * P[s(-1)] + P[s(-2)]) / (2 * h)
        fwd = (-3 * P[s(0)] + 4 * P[s(1)] - P[s(2)]) / (2 * h)
    return back, fwd


def upwind_advection(f: np.ndarray, v: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """sum_l v_l d_l f with one-sided differences taken against the flow."""
    lead = f.ndim - grid.dim
    out = np.zeros_like(f, dtype=float)
    for l in range(grid.dim):
        back, fwd = _one_sided(f, lead + l, grid, grid.spacing[l], order)
        vl = v[l]
        out += np.maximum(vl, 0.0) * back + np.minimum(vl, 0.0) * fwd
    return out


def _semi_lagrangian(f: np.ndarray, v, dt: float, grid: Grid) -> np.ndarray:
    vm = at(v, 0.5)
    mode = "grid-wrap" if grid.periodic else "nearest"

    def index_coords(x):
        return [(x[l] - grid.origin[l]) / grid.spacing[l] - 0.5 for l in range(grid.dim)]

    def interp(arr, x):
        return map_coordinates(arr, index_coords(x), order=3, mode=mode)

    X = np.stack(grid.coords)
    half = X - 0.5 * dt * vm
    vel_half = np.stack([interp(vm[l], half) for l in range(grid.dim)])
    dep = X - dt * vel_half
    if f.ndim == grid.dim:
        return interp(f, dep)
    flat = f.reshape(-1, *grid.shape)
    return np.stack([interp(c, dep) for c in flat]).reshape(f.shape)


def _pin_inflow(new: np.ndarray, old: np.ndarray, v_end: np.ndarray, grid: Grid, inflow) -> np.ndarray:
    """Reset far-field boundary nodes where the flow enters the box."""
    if grid.periodic:
        return new
    src = old if inflow is None else np.broadcast_to(inflow, new.shape)
    entering = np.zeros(grid.shape, dtype=bool)
    for l in range(grid.dim):
        for end, inward in ((0, v_end[l] > 0), (-1, v_end[l] < 0)):
            face = tuple(slice(None) if a != l else end for a in range(grid.dim))
            entering[face] |= inward[face]
    out = new.copy()
    out[..., entering] = src[..., entering]
    return out


def transport_step(f: np.ndarray, v, dt: float, grid: Grid, scheme: TransportScheme, inflow=None) -> np.ndarray:
    """Pure advection f_t + v·∇f = 0 over one step (Heun for upwind schemes)."""
    if dt == 0:
        return np.array(f, dtype=float)
    check_cfl(v, dt, grid, scheme)
    if scheme.method == SEMI_LAGRANGIAN:
        new = _semi_lagrangian(f, v, dt, grid)
    else:
        order = 1 if scheme.method == UPWIND1 else 2
        k1 = -upwind_advection(f, at(v, 0.0), grid, order)
        mid = f + dt * k1
        k2 = -upwind_advection(mid, at(v, 1.0), grid, order)
        new = f + 0.5 * dt * (k1 + k2)
    return _pin_inflow(new, f, at(v, 1.0), grid, inflow)


def _heun(rhs: Callable[[np.ndarray], np.ndarray], y: np.ndarray, tau: float) -> np.ndarray:
    k1 = rhs(y)
    k2 = rhs(y + tau * k1)
    return y + 0.5 * tau * (k1 + k2)


def _strang(f, v, dt, grid, scheme, source_half, inflow=None):
    if dt == 0:
        return np.array(f, dtype=float)
    check_cfl(v, dt, grid, scheme)
    f = source_half(f, 0.25)
    f = transport_step(f, v, dt, grid, scheme, inflow)
    return source_half(f, 0.75)


def _require_positive(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(arr > 0):
        raise PositivityError(f"{name} lost positivity (min {arr.min():.3e})")
    return arr


# ---------------------------------------------------------------- field updates


def advance_phi(phi, v, dt, gamma, grid, scheme=TransportScheme(), inflow=None):
    """phi_t + v·∇phi + (gamma-1) phi div v = 0."""
    grid.check_scalar(phi, "phi")
    _require_positive("phi", phi)

    def source(f, theta):
        return f * np.exp(-(gamma - 1) * div(at(v, theta), grid) * dt / 2)

    return _require_positive("phi", _strang(phi, v, dt, grid, scheme, source, inflow))


def advance_h(h, v, g, dt, delta, grid, scheme=TransportScheme(), inflow=None):
    """h_t + v·∇h + (delta-1) g div v = 0."""
    grid.check_scalar(h, "h")

    def source(f, theta):
        return f - (delta - 1) * at(g, theta) * div(at(v, theta), grid) * dt / 2

    return _require_positive("h", _strang(h, v, dt, grid, scheme, source, inflow))


def advance_varphi(varphi, v, g, dt, delta, grid, scheme=TransportScheme(), inflow=None):
    """varphi_t + v·∇varphi - (delta-1) g varphi^2 div v = 0 (source solved exactly)."""
    grid.check_scalar(varphi, "varphi")

    def source(f, theta):
        denom = 1.0 + (1 - delta) * at(g, theta) * div(at(v, theta), grid) * f * dt / 2
        if not np.all(denom > 0):
            raise PositivityError("varphi source blew up: 1 + (1-δ) varphi g div v t reached zero")
        return f / denom

    return _require_positive("varphi", _strang(varphi, v, dt, grid, scheme, source, inflow))


def _bstar(vel: np.ndarray, w: np.ndarray, grid: Grid) -> np.ndarray:
    """(∇v)ᵀ w, i.e. component i is sum_j d_i v_j w_j."""
    J = jacobian(vel, grid)
    return np.einsum("ji...,j...->i...", J, w)


def psi_source(v, g, a, delta, grid, grouping="split"):
    """a δ (g ∇div v + ∇g div v) or, grouped, a δ ∇(g div v)."""
    dv = div(v, grid)
    if grouping == "split":
        return a * delta * (g * grad_div(v, grid) + grad(g, grid) * dv)
    if grouping == "product":
        return a * delta * grad(g * dv, grid)
    raise ValueError(f"grouping must be 'split' or 'product' (got {grouping!r})")


def advance_psi(psi, v, g, dt, a, delta, grid, scheme=TransportScheme(), grouping="split", inflow=None):
    """psi_t + sum_l v_l d_l psi + (∇v)ᵀ psi + a δ (g ∇div v + ∇g div v) = 0."""
    grid.check_vector(psi, "psi")

    def source(w, theta):
        vel, gg = at(v, theta), at(g, theta)
        s = psi_source(vel, gg, a, delta, grid, grouping)
        return _heun(lambda y: -_bstar(vel, y, grid) - s, w, dt / 2)

    return _strang(psi, v, dt, grid, scheme, source, inflow)


def advance_f(f, v, g, varphi, dt, a, delta, grid, scheme=TransportScheme(), inflow=None):
    """f-system of the varphi formulation with g the previous h-iterate and varphi the new one.

    f_t + sum_l v_l d_l f + (∇v)ᵀ f + a δ g varphi ∇div v
        = -a δ varphi ∇g div v + (δ-1) g varphi f div v
    """
    grid.check_vector(f, "f")

    def source(w, theta):
        vel, gg, vp = at(v, theta), at(g, theta), at(varphi, theta)
        dv = div(vel, grid)
        forcing = a * delta * vp * (gg * grad_div(vel, grid) + grad(gg, grid) * dv)
        growth = (delta - 1) * gg * vp * dv
        return _heun(lambda y: -_bstar(vel, y, grid) + growth * y - forcing, w, dt / 2)

    return _strang(f, v, dt, grid, scheme, source, inflow)


# ---------------------------------------------------------------- characteristic oracle


@dataclass
class OracleResult:
    values: np.ndarray
    origins: np.ndarray  # foot points x0, shape (dim, npts)
    left_domain: np.ndarray  # bool per point


def characteristic_oracle(
    kind: str,
    field0: Callable[[np.ndarray], np.ndarray],
    v: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    points: np.ndarray,
    *,
    div_v: Callable[[float, np.ndarray], np.ndarray] | None = None,
    g: Callable[[float, np.ndarray], np.ndarray] | None = None,
    gamma: float | None = None,
    delta: float | None = None,
    domain: tuple[np.ndarray, np.ndarray] | None = None,
    boundary_value: Callable[[np.ndarray], np.ndarray] | None = None,
    rtol: float = 1e-10,
) -> OracleResult:
    """Exact transported values from particle paths integrated backward from ``points``.

    ``points`` has shape (dim, npts); ``v(s, X)`` and ``div_v(s, X)`` act on such
    arrays. ``kind`` selects the representation along the path:
    "advect" (field0(x0)), "phi" (exponential of -(γ-1)∫div v), "h"
    (h0 - (δ-1)∫g div v) or "varphi" (varphi0 / (1 + (1-δ) varphi0 ∫g div v)).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dim, n = pts.shape
    need_div = kind != "advect"
    if need_div and div_v is None:
        raise ValueError(f"kind {kind!r} needs div_v")
    if kind in ("h", "varphi") and g is None:
        raise ValueError(f"kind {kind!r} needs g")

    def rhs(s, y):
        X = y[: dim * n].reshape(dim, n)
        out = [v(s, X).reshape(-1)]
        if need_div:
            dv = np.broadcast_to(div_v(s, X), (n,))
            out.append(dv)
            out.append(dv * (np.broadcast_to(g(s, X), (n,)) if g is not None else 0.0))
        return np.concatenate(out)

    y0 = np.concatenate([pts.reshape(-1)] + ([np.zeros(n), np.zeros(n)] if need_div else []))
    if t > 0:
        sol = solve_ivp(rhs, (t, 0.0), y0, method="DOP853", rtol=rtol, atol=rtol * 1e-2)
        if not sol.success:
            raise RuntimeError(f"characteristic integration failed: {sol.message}")
        yT = sol.y[:, -1]
    else:
        yT = y0
    x0 = yT[: dim * n].reshape(dim, n)
    # integrating from t down to 0 accumulates -∫_0^t
    int_div = -yT[dim * n : dim * n + n] if need_div else None
    int_gdiv = -yT[dim * n + n :] if need_div else None
    base = np.asarray(field0(x0), dtype=float)
    if kind == "advect":
        vals = base
    elif kind == "phi":
        vals = base * np.exp(-(gamma - 1) * int_div)
    elif kind == "h":
        vals = base - (delta - 1) * int_gdiv
    elif kind == "varphi":
        vals = base / (1.0 + (1 - delta) * base * int_gdiv)
    else:
        raise ValueError(f"unknown oracle kind {kind!r}")
    left = np.zeros(n, dtype=bool)
    if domain is not None:
        lo, hi = (np.asarray(b, dtype=float).reshape(dim, 1) for b in domain)
        left = np.any((x0 < lo) | (x0 > hi), axis=0)
        if boundary_value is not None and left.any():
            vals = np.array(vals, dtype=float)
            vals[left] = np.asarray(boundary_value(x0[:, left]), dtype=float)
    return OracleResult(vals, x0, left)
