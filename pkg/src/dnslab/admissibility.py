"""Finiteness of the weighted initial-data norms, compatibility fields, and the power-law family.

Radial profiles are handled exactly: derivatives of Cartesian expressions are
taken symbolically and evaluated on the ray (r, 0, 0), where the full tensor
norm equals its value anywhere on the sphere of radius r. The resulting
one-dimensional integrals r^(d-1) |∇^k f|^p are accumulated over a sequence of
radii and the tail of the increments decides between Finite and Diverging.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np
import sympy as sp
from scipy import integrate

from .errors import PositivityError
from .grid import Grid
from .ops import grad, lame_apply, lp_of_magnitude, pointwise_magnitude
from .params import Params, check_params
from .state import PrimitiveState

FINITE = "Finite"
DIVERGING = "Diverging"
INCONCLUSIVE = "Inconclusive"

# slope of log(increment) against log(R)
DIVERGING_SLOPE = -0.1
FINITE_SLOPE = -0.15
FIT_POINTS = 5


def admissible_range(gamma: float, delta: float, q: float | None = None) -> tuple[float, float] | None:
    """Open interval of power-law exponents a for rho0 = 1/(1+|x|^(2a)); None when empty."""
    if not gamma > 1:
        raise ValueError(f"gamma must exceed 1 (got {gamma})")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0,1) (got {delta})")
    lo = 3.0 / (4.0 * (gamma - 1.0))
    if q is None:
        hi = 1.0 / (4.0 * (1.0 - delta))
    else:
        if not q > 3:
            raise ValueError(f"q must exceed 3 (got {q})")
        hi = (1.0 - 3.0 / q) / (2.0 * (1.0 - delta))
    return (lo, hi) if lo < hi else None


# ---------------------------------------------------------------- radial profiles


@dataclass(frozen=True)
class RadialProfile:
    """rho0(r) = 1/(1 + r^(2 a_exp)) with an optional radial velocity u0 = w(r) x/r.

    ``u_amp``/``u_radius`` give the compactly supported C³ bump
    w(r) r̂ = u_amp (1 - r²/R²)^4 x/R for r < R. ``u_expr`` overrides it with any
    sympy expression of the symbol ``r`` for w(r) (then ``u_radius`` may be None).
    """

    a_exp: float
    dim: int = 3
    u_amp: float = 0.0
    u_radius: float | None = 1.0
    u_expr: str | None = None

    def __post_init__(self):
        if not self.a_exp > 0:
            raise ValueError(f"a_exp must be positive (got {self.a_exp})")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")

    def rho(self, r):
        return 1.0 / (1.0 + np.asarray(r, dtype=float) ** (2 * self.a_exp))

    @property
    def has_velocity(self) -> bool:
        return self.u_expr is not None or self.u_amp != 0.0

    @property
    def velocity_support(self) -> float | None:
        return None if self.u_expr is not None else self.u_radius


_X = sp.symbols("x0 x1 x2", real=True)
_RAY = sp.Symbol("r", positive=True)


def _coords(dim):
    return _X[:dim]


def _radius(dim):
    return sp.sqrt(sum(c**2 for c in _coords(dim)))


def _rho_expr(a_exp: float, dim: int):
    return 1 / (1 + _radius(dim) ** (2 * sp.nsimplify(a_exp)))


def _velocity_exprs(prof: RadialProfile) -> list:
    xs = _coords(prof.dim)
    r = _radius(prof.dim)
    if prof.u_expr is not None:
        w = sp.sympify(prof.u_expr, locals={"r": r})
        return [w * c / r for c in xs]
    if not prof.has_velocity:
        return [sp.Integer(0)] * prof.dim
    R = sp.nsimplify(prof.u_radius)
    amp = sp.nsimplify(prof.u_amp)
    return [amp * (1 - r**2 / R**2) ** 4 * c / R for c in xs]


def _on_ray(expr, dim):
    sub = {_X[0]: _RAY}
    for c in _X[1:dim]:
        sub[c] = 0
    return sp.simplify(expr.subs(sub)) if expr.has(*_X[1:dim]) else expr.subs(sub)


def _deriv_norm_sq(components: list, k: int, dim: int):
    """|∇^k F|² on the ray (r, 0, 0) for a Cartesian tensor field given by its components."""
    xs = _coords(dim)
    total = sp.Integer(0)
    for multi in combinations_with_replacement(range(dim), k):
        counts = [multi.count(i) for i in range(dim)]
        mult = math.factorial(k) // math.prod(math.factorial(c) for c in counts)
        for comp in components:
            d = sp.diff(comp, *[xs[i] for i in multi]) if k else comp
            d = d.subs({c: 0 for c in xs[1:]}).subs(xs[0], _RAY)
            total += mult * d**2
    return total


def _lambdify(expr) -> Callable[[np.ndarray], np.ndarray]:
    fn = sp.lambdify(_RAY, expr, "numpy")
    return lambda r: np.broadcast_to(np.asarray(fn(r), dtype=float), np.shape(r))


@lru_cache(maxsize=256)
def _density_integrand(a_exp: float, dim: int, power: float, k: int, p: float):
    """r -> |∇^k rho0^power|^p as a numpy function."""
    f = _rho_expr(a_exp, dim) ** sp.nsimplify(power)
    sq = _deriv_norm_sq([f], k, dim)
    g = _lambdify(sq)
    return lambda r: np.abs(g(r)) ** (p / 2.0)


def _sphere_area(dim: int) -> float:
    return {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}[dim]


def radial_integral(fn: Callable, dim: int, lo: float, hi: float) -> float:
    """∫_lo^hi ω_d r^(d-1) fn(r) dr, with a logarithmic substitution away from the origin."""
    w = _sphere_area(dim)
    total = 0.0
    if lo < 1.0:
        top = min(hi, 1.0)
        val, _ = integrate.quad(lambda r: r ** (dim - 1) * float(fn(r)), lo, top, limit=200, epsabs=0, epsrel=1e-10)
        total += val
        lo = top
    if hi > lo:
        val, _ = integrate.quad(
            lambda s: math.exp(s * dim) * float(fn(math.exp(s))), math.log(lo), math.log(hi), limit=400, epsabs=0, epsrel=1e-10
        )
        total += val
    return w * total


@dataclass
class NormVerdict:
    name: str
    radii: list[float]
    values: list[float]
    slope: float | None
    verdict: str

    @property
    def increments(self) -> list[float]:
        v = [0.0] + self.values
        return [b - a for a, b in zip(v, v[1:])]

    def as_dict(self) -> dict:
        return {"name": self.name, "radii": self.radii, "values": self.values, "slope": self.slope, "verdict": self.verdict}


def classify(radii, increments, fit_points: int = FIT_POINTS) -> tuple[float | None, str]:
    """Tail slope of log(increment) vs log(R) and the resulting verdict."""
    R = np.asarray(radii, dtype=float)[-fit_points:]
    inc = np.asarray(increments, dtype=float)[-fit_points:]
    if len(R) < fit_points:
        return None, INCONCLUSIVE
    if not np.all(np.isfinite(inc)):
        return math.inf, DIVERGING
    if np.all(inc <= 0):
        return -math.inf, FINITE
    if np.any(inc <= 0):
        return None, INCONCLUSIVE
    slope = float(np.polyfit(np.log(R), np.log(inc), 1)[0])
    if slope >= DIVERGING_SLOPE:
        return slope, DIVERGING
    if slope <= FINITE_SLOPE:
        return slope, FINITE
    return slope, INCONCLUSIVE


def _truncations(name: str, fn: Callable, dim: int, radii, support: float | None = None) -> NormVerdict:
    vals = []
    incs = []
    acc = 0.0
    prev = 0.0
    for R in radii:
        hi = R if support is None else min(R, support)
        inc = radial_integral(fn, dim, prev, hi) if hi > prev else 0.0
        prev = max(prev, hi)
        acc += inc
        incs.append(inc)
        vals.append(acc)
    slope, verdict = classify(radii, incs)
    return NormVerdict(name, [float(r) for r in radii], vals, slope, verdict)


# (label, field exponent key, derivative order, integrability exponent)
def required_norms(p: Params, q: float | None = None) -> list[tuple[str, float, int, float]]:
    """The density conditions; q=None gives the D¹∩D² set, a number the L^q∩D^{1,3}∩D² set."""
    g1, d1, dh = p.gamma - 1, p.delta - 1, (p.delta - 1) / 2
    out = [(f"rho0^(gamma-1) D{k}" if k else "rho0^(gamma-1) L2", g1, k, 2.0) for k in range(4)]
    if q is None:
        out += [
            ("grad rho0^(delta-1) D1", d1, 2, 2.0),
            ("grad rho0^(delta-1) D2", d1, 3, 2.0),
            ("grad rho0^((delta-1)/2) L4", dh, 1, 4.0),
        ]
    else:
        out += [
            (f"grad rho0^(delta-1) L{q:g}", d1, 1, float(q)),
            ("grad rho0^(delta-1) D1,3", d1, 2, 3.0),
            ("grad rho0^(delta-1) D2", d1, 3, 2.0),
            ("grad rho0^((delta-1)/2) L6", dh, 1, 6.0),
        ]
    return out


DEFAULT_RADII = tuple(float(r) for r in np.geomspace(10.0, 1e6, 11))


@dataclass
class AdmissibilityReport:
    norms: list[NormVerdict]
    compatibility: list[NormVerdict] = field(default_factory=list)
    window: tuple[float, float] | None = None
    a_exp: float | None = None

    @property
    def overall(self) -> str:
        verdicts = [n.verdict for n in self.norms + self.compatibility]
        if any(v == DIVERGING for v in verdicts):
            return DIVERGING
        if all(v == FINITE for v in verdicts):
            return FINITE
        return INCONCLUSIVE

    @property
    def diverging(self) -> list[str]:
        return [n.name for n in self.norms + self.compatibility if n.verdict == DIVERGING]

    def to_json(self) -> str:
        return json.dumps(
            {
                "a_exp": self.a_exp,
                "window": self.window,
                "overall": self.overall,
                "norms": [n.as_dict() for n in self.norms],
                "compatibility": [n.as_dict() for n in self.compatibility],
            },
            indent=2,
        )

    def table(self) -> str:
        lines = [f"{'norm':38s} {'verdict':13s} {'tail slope':>10s} {'value at R_max':>16s}"]
        for n in self.norms + self.compatibility:
            slope = "n/a" if n.slope is None else f"{n.slope:.3f}"
            lines.append(f"{n.name:38s} {n.verdict:13s} {slope:>10s} {n.values[-1]:16.6e}")
        lines.append(f"overall: {self.overall}")
        return "\n".join(lines)


def _check_radial(prof: RadialProfile, p: Params, radii, q) -> AdmissibilityReport:
    norms = []
    for name, power, k, pp in required_norms(p, q):
        fn = _density_integrand(prof.a_exp, prof.dim, power, k, pp)
        norms.append(_truncations(name, fn, prof.dim, radii))
    if prof.has_velocity:
        comps = _velocity_exprs(prof)
        for k in range(4):
            fn = _lambdify(_deriv_norm_sq(comps, k, prof.dim))
            norms.append(_truncations(f"u0 D{k}" if k else "u0 L2", fn, prof.dim, radii, prof.velocity_support))
    compat = compatibility_report(prof, p, radii)
    return AdmissibilityReport(norms, compat, admissible_range(p.gamma, p.delta, q), prof.a_exp)


def _check_gridded(s: PrimitiveState, p: Params, radii, q) -> AdmissibilityReport:
    g = s.grid
    if not np.all(s.rho > 0):
        raise PositivityError("rho0 must be strictly positive")
    half = min(g.lengths) / 2
    radii = [R for R in (radii or np.linspace(half / 4, half, 5))] if not g.periodic else [half]
    norms = []
    for name, power, k, pp in required_norms(p, q):
        f = s.rho**power
        for _ in range(k):
            f = grad(f, g)
        mag = pointwise_magnitude(f.reshape(-1, *g.shape), g)
        vals = [lp_of_magnitude(mag, pp, g, g.radius <= R) ** pp for R in radii]
        if g.periodic:
            norms.append(NormVerdict(name, list(radii), vals, None, FINITE if np.isfinite(vals[-1]) else DIVERGING))
        else:
            incs = np.diff([0.0] + vals)
            slope, verdict = classify(radii, incs)
            norms.append(NormVerdict(name, list(radii), vals, slope, verdict))
    comp = compatibility_fields(s.rho, s.u, p, g)
    compat = [NormVerdict(k, [radii[-1]], [v**2], None, FINITE if np.isfinite(v) else DIVERGING) for k, v in comp.norms.items()]
    if not g.periodic:
        for c in compat:
            c.verdict = INCONCLUSIVE if c.verdict == FINITE else c.verdict
    return AdmissibilityReport(norms, compat, admissible_range(p.gamma, p.delta, q))


def check_admissible(rho0, u0=None, p: Params | None = None, radii=None, q: float | None = None) -> AdmissibilityReport:
    """Truncated required norms with a Finite / Diverging / Inconclusive verdict each.

    ``rho0`` is a RadialProfile (exact far-field decision out to the largest
    radius) or a PrimitiveState on a grid (periodic: trivially finite;
    far-field: only truncated verdicts on the box). ``u0`` is unused for radial
    profiles, which carry their own velocity.
    """
    p = check_params(p or Params())
    if isinstance(rho0, RadialProfile):
        radii = list(DEFAULT_RADII if radii is None else radii)
        if any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] <= 0:
            raise ValueError("radii must be positive and strictly increasing")
        return _check_radial(rho0, p, radii, q)
    if isinstance(rho0, PrimitiveState):
        return _check_gridded(rho0, p, radii, q)
    raise TypeError("rho0 must be a RadialProfile or a PrimitiveState")


# ---------------------------------------------------------------- compatibility


@lru_cache(maxsize=64)
def _compat_integrands(prof: RadialProfile, alpha: float, beta: float, delta: float):
    dim = prof.dim
    xs = _coords(dim)
    rho = _rho_expr(prof.a_exp, dim)
    dl = sp.nsimplify(delta)
    u = _velocity_exprs(prof)
    grad_sq = _deriv_norm_sq(u, 1, dim)
    lap = [sum(sp.diff(c, x, 2) for x in xs) for c in u]
    divu = sum(sp.diff(u[i], xs[i]) for i in range(dim))
    Lu = [-sp.nsimplify(alpha) * lap[i] - sp.nsimplify(alpha + beta) * sp.diff(divu, xs[i]) for i in range(dim)]
    Lu_sq = _deriv_norm_sq(Lu, 0, dim)
    w = [rho ** (dl - 1) * c for c in Lu]
    w_sq = _deriv_norm_sq(w, 1, dim)
    rho_r = _on_ray(rho, dim)
    g1 = _lambdify(rho_r ** (dl - 1) * grad_sq)
    g2 = _lambdify(rho_r ** (2 * (dl - 1)) * Lu_sq)
    g3 = _lambdify(rho_r ** (dl - 1) * w_sq)
    return g1, g2, g3


def compatibility_report(prof: RadialProfile, p: Params, radii) -> list[NormVerdict]:
    """Truncated |g1|², |g2|², |g3|² on balls of the given radii."""
    if not prof.has_velocity:
        zero = [0.0] * len(radii)
        return [NormVerdict(n, list(radii), zero, -math.inf, FINITE) for n in ("g1 L2", "g2 L2", "g3 L2")]
    fns = _compat_integrands(prof, p.alpha, p.beta, p.delta)
    sup = prof.velocity_support
    return [_truncations(name, fn, prof.dim, radii, sup) for name, fn in zip(("g1 L2", "g2 L2", "g3 L2"), fns)]


@dataclass
class CompatibilityFields:
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    norms: dict[str, float]


def compatibility_fields(rho0: np.ndarray, u0: np.ndarray, p: Params, grid: Grid) -> CompatibilityFields:
    """g1 = rho0^((δ-1)/2) ∇u0, g2 = rho0^(δ-1) L u0, g3 = rho0^((δ-1)/2) ∇(rho0^(δ-1) L u0) on a grid."""
    rho0 = grid.check_scalar(rho0, "rho0")
    u0 = grid.check_vector(u0, "u0")
    if not np.all(rho0 > 0):
        raise PositivityError("rho0 must be strictly positive")
    half = rho0 ** ((p.delta - 1) / 2)
    full = rho0 ** (p.delta - 1)
    J = np.stack([grad(u0[i], grid) for i in range(grid.dim)])
    Lu = lame_apply(u0, p.alpha, p.beta, grid)
    g1 = half * J
    g2 = full * Lu
    inner = full * Lu
    g3 = half * np.stack([grad(inner[i], grid) for i in range(grid.dim)])

    def l2(x):
        return lp_of_magnitude(pointwise_magnitude(x, grid), 2.0, grid)

    return CompatibilityFields(g1, g2, g3, {"g1 L2": l2(g1), "g2 L2": l2(g2), "g3 L2": l2(g3)})


# ---------------------------------------------------------------- power-law family


@dataclass(frozen=True)
class BumpSpec:
    """u0 = amplitude (1 - (r/radius)²)^4 e_direction inside the ball, zero outside (C³)."""

    amplitude: float = 0.0
    radius: float = 1.0
    direction: int = 0
    center: tuple[float, ...] | None = None


def bump_field(spec: BumpSpec, grid: Grid) -> np.ndarray:
    if spec.direction not in range(grid.dim):
        raise ValueError(f"bump direction {spec.direction} outside dimension {grid.dim}")
    centre = spec.center or tuple(o + L / 2 for o, L in zip(grid.origin, grid.lengths))
    r = np.sqrt(sum((x - c) ** 2 for x, c in zip(grid.coords, centre)))
    w = np.where(r < spec.radius, (1 - (r / spec.radius) ** 2) ** 4, 0.0)
    u = np.zeros((grid.dim, *grid.shape))
    u[spec.direction] = spec.amplitude * w
    return u


def make_power_law_init(a_exp: float, u0: BumpSpec, grid: Grid, p: Params) -> PrimitiveState:
    """rho0 = 1/(1 + r^(2 a_exp)) about the box centre with a C³ velocity bump inside the box."""
    check_params(p)
    if not a_exp > 0:
        raise ValueError(f"a_exp must be positive (got {a_exp})")
    half = min(grid.lengths) / 2
    if u0.amplitude != 0 and u0.radius >= half:
        raise ValueError(f"bump support radius {u0.radius} does not fit strictly inside the box (half-width {half})")
    rho = 1.0 / (1.0 + grid.radius ** (2 * a_exp))
    return PrimitiveState(grid, rho, bump_field(u0, grid))
