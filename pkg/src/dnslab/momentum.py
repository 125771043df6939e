"""One implicit step of the linearized momentum equation.

Both forms are solved as the same symmetric system

    (m/dt + θ a L) u' = m (u/dt - v·∇v - ∇phi) + f·Q(v) - (1-θ) a L u

with ``m = varphi`` in the varphi form and ``m = 1/sqrt(h² + ε²)``, ``f = m psi``
in the h form (the h-form equation multiplied through by ``m``). Only the
Lamé term is implicit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OverflowFieldError
from .grid import Grid
from .krylov import KrylovInfo, pcg
from .ops import advect_vector, grad, lame_apply, lame_diagonal, q_apply, vec_dot_tensor, zero_mean
from .params import Params, derive_constants
from .transport import at

HFORM = "HForm"
VARPHI_FORM = "VarphiForm"


@dataclass(frozen=True)
class MomentumStepConfig:
    form: str = VARPHI_FORM
    theta: float = 1.0
    rtol: float = 1e-10
    maxiter: int | None = None
    preconditioner: str | None = "Jacobi"

    def __post_init__(self):
        if self.form not in (HFORM, VARPHI_FORM):
            raise ValueError(f"form must be {HFORM!r} or {VARPHI_FORM!r} (got {self.form!r})")
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0.5, 1] (got {self.theta})")
        if self.rtol <= 0:
            raise ValueError("rtol must be positive")
        if self.preconditioner not in (None, "None", "Jacobi"):
            raise ValueError(f"preconditioner must be None or 'Jacobi' (got {self.preconditioner!r})")


def implicit_operator(m: np.ndarray, a: float, p: Params, dt: float, theta: float, grid: Grid):
    """The map w -> (m/dt) w + θ a L w, restricted to interior nodes on far-field grids."""
    if grid.periodic:
        return lambda w: (m / dt) * w + theta * a * lame_apply(w, p.alpha, p.beta, grid)
    interior = ~grid.boundary_mask
    return lambda w: ((m / dt) * (w * interior) + theta * a * lame_apply(w * interior, p.alpha, p.beta, grid)) * interior


def _solve(u, m, forcing, p: Params, dt: float, grid: Grid, cfg: MomentumStepConfig, x0=None):
    u = grid.check_vector(u, "u")
    if dt == 0:
        return np.array(u, dtype=float), KrylovInfo()
    a = derive_constants(p).a
    theta = cfg.theta
    rhs = m * u / dt + forcing
    if theta < 1:
        rhs = rhs - (1 - theta) * a * lame_apply(u, p.alpha, p.beta, grid)
    if not np.all(np.isfinite(rhs)):
        raise OverflowFieldError("momentum right-hand side is not finite")
    op = implicit_operator(m, a, p, dt, theta, grid)
    diag = None
    if cfg.preconditioner == "Jacobi":
        diag = m / dt + theta * a * lame_diagonal(p.alpha, p.beta, grid)
    project = None
    if grid.periodic:
        if not np.any(m > 0):
            # pure elliptic limit: constants are in the kernel
            project = zero_mean
    else:
        interior = ~grid.boundary_mask
        project = lambda w: w * interior
        if diag is not None:
            diag = np.where(interior, diag, 1.0)
    guess = u if x0 is None else x0
    maxiter = cfg.maxiter if cfg.maxiter is not None else 10 * u.size
    new, info = pcg(op, rhs, x0=guess, diag=diag, rtol=cfg.rtol, maxiter=maxiter, project=project)
    if not np.all(np.isfinite(new)):
        raise OverflowFieldError("momentum solve produced non-finite values")
    return new, info


def explicit_forcing(m, v, phi, f, p: Params, grid: Grid) -> np.ndarray:
    """-m (v·∇v + ∇phi) + f·Q(v)."""
    return -m * (advect_vector(v, v, grid) + grad(phi, grid)) + vec_dot_tensor(f, q_apply(v, p.alpha, p.beta, grid))


def advance_momentum_h(u, v, phi, h, psi, p: Params, eps: float, dt: float, grid: Grid, cfg: MomentumStepConfig | None = None, x0=None):
    """u_t + v·∇v + ∇phi + a sqrt(h² + ε²) L u = psi·Q(v).

    Coefficients may be arrays or (start, end) pairs; they are sampled at the
    implicitness fraction θ of the step. Returns ``(u_new, KrylovInfo)``.
    """
    cfg = cfg or MomentumStepConfig(form=HFORM)
    th = cfg.theta
    hh = at(h, th)
    if not np.all(hh > 0) and eps == 0:
        raise ValueError("h must be positive when eps = 0")
    m = 1.0 / np.sqrt(hh**2 + eps**2)
    forcing = explicit_forcing(m, at(v, th), at(phi, th), m * at(psi, th), p, grid)
    return _solve(u, m, forcing, p, dt, grid, cfg, x0)


def advance_momentum_varphi(u, v, phi, varphi, f, p: Params, dt: float, grid: Grid, cfg: MomentumStepConfig | None = None, x0=None):
    """varphi (u_t + v·∇v + ∇phi) + a L u = f·Q(v). Returns ``(u_new, KrylovInfo)``."""
    cfg = cfg or MomentumStepConfig()
    th = cfg.theta
    m = np.asarray(at(varphi, th), dtype=float)
    if np.any(m < 0):
        raise ValueError("varphi must be nonnegative")
    if not grid.periodic and np.any(m[~grid.boundary_mask] <= 0):
        raise ValueError("varphi may vanish only on far-field boundary nodes")
    forcing = explicit_forcing(m, at(v, th), at(phi, th), at(f, th), p, grid)
    return _solve(u, m, forcing, p, dt, grid, cfg, x0)


def advance_momentum(u, v, phi, coef, p: Params, dt: float, grid: Grid, cfg: MomentumStepConfig, eps: float | None = None, x0=None):
    """Dispatch on ``cfg.form``. ``coef`` is (h, psi) for HForm or (varphi, f) for VarphiForm."""
    if cfg.form == HFORM:
        h, psi = coef
        return advance_momentum_h(u, v, phi, h, psi, p, p.eps if eps is None else eps, dt, grid, cfg, x0)
    varphi, f = coef
    return advance_momentum_varphi(u, v, phi, varphi, f, p, dt, grid, cfg, x0)
