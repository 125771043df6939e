"""Finite-difference operators, discrete norms and the Lamé solver.

Scalar fields have the grid shape; vector fields carry a leading component axis
of length ``grid.dim``; tensor fields two leading axes. Interior stencils are
second-order central. Far-field grids close with second-order one-sided
stencils on the outermost node layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .grid import Grid
from .krylov import KrylovInfo, pcg


def _take(f: np.ndarray, axis: int, sl) -> np.ndarray:
    idx = [slice(None)] * f.ndim
    idx[axis] = sl
    return f[tuple(idx)]


def _put(out: np.ndarray, axis: int, sl, value) -> None:
    idx = [slice(None)] * out.ndim
    idx[axis] = sl
    out[tuple(idx)] = value


def d1(f: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """First derivative of a grid-shaped array along ``axis`` (trailing axes are spatial)."""
    ax = f.ndim - grid.dim + axis
    h = grid.spacing[axis]
    if grid.periodic:
        return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2 * h)
    out = np.empty_like(f, dtype=float)
    n = f.shape[ax]
    _put(out, ax, slice(1, n - 1), (_take(f, ax, slice(2, n)) - _take(f, ax, slice(0, n - 2))) / (2 * h))
    f0, f1, f2 = (_take(f, ax, i) for i in (0, 1, 2))
    _put(out, ax, 0, (-3 * f0 + 4 * f1 - f2) / (2 * h))
    g0, g1, g2 = (_take(f, ax, i) for i in (-1, -2, -3))
    _put(out, ax, -1, (3 * g0 - 4 * g1 + g2) / (2 * h))
    return out


def d2(f: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Compact three-point second derivative along ``axis``."""
    ax = f.ndim - grid.dim + axis
    h2 = grid.spacing[axis] ** 2
    if grid.periodic:
        return (np.roll(f, -1, axis=ax) - 2 * f + np.roll(f, 1, axis=ax)) / h2
    out = np.empty_like(f, dtype=float)
    n = f.shape[ax]
    _put(
        out,
        ax,
        slice(1, n - 1),
        (_take(f, ax, slice(2, n)) - 2 * _take(f, ax, slice(1, n - 1)) + _take(f, ax, slice(0, n - 2))) / h2,
    )
    for end, sgn in ((0, 1), (-1, -1)):
        f0, f1, f2, f3 = (_take(f, ax, end + sgn * i) for i in range(4))
        _put(out, ax, end, (2 * f0 - 5 * f1 + 4 * f2 - f3) / h2)
    return out


def grad(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient; for a field with leading component axes the derivative index is appended first."""
    f = np.asarray(f, dtype=float)
    if f.shape[f.ndim - grid.dim:] != grid.shape:
        raise ShapeError(f"field shape {f.shape} does not end in grid shape {grid.shape}")
    return np.stack([d1(f, ax, grid) for ax in range(grid.dim)])


def div(u: np.ndarray, grid: Grid) -> np.ndarray:
    u = grid.check_vector(u)
    return sum(d1(u[i], i, grid) for i in range(grid.dim))


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape[f.ndim - grid.dim:] != grid.shape:
        raise ShapeError(f"field shape {f.shape} does not end in grid shape {grid.shape}")
    return sum(d2(f, ax, grid) for ax in range(grid.dim))


def jacobian(u: np.ndarray, grid: Grid) -> np.ndarray:
    """J[i, j] = d u_i / d x_j."""
    u = grid.check_vector(u)
    return np.stack([np.stack([d1(u[i], j, grid) for j in range(grid.dim)]) for i in range(grid.dim)])


def curl(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero in 1-D, the scalar vorticity in 2-D, the vector curl in 3-D."""
    u = grid.check_vector(u)
    if grid.dim == 1:
        return np.zeros(grid.shape)
    if grid.dim == 2:
        return d1(u[1], 0, grid) - d1(u[0], 1, grid)
    return np.stack(
        [
            d1(u[2], 1, grid) - d1(u[1], 2, grid),
            d1(u[0], 2, grid) - d1(u[2], 0, grid),
            d1(u[1], 0, grid) - d1(u[0], 1, grid),
        ]
    )


def curl_residual(w: np.ndarray, grid: Grid) -> np.ndarray:
    """All antisymmetric parts d_i w_j - d_j w_i (i<j), stacked; empty in 1-D."""
    w = grid.check_vector(w)
    parts = [d1(w[j], i, grid) - d1(w[i], j, grid) for i in range(grid.dim) for j in range(i + 1, grid.dim)]
    return np.stack(parts) if parts else np.zeros((0, *grid.shape))


def grad_div(u: np.ndarray, grid: Grid) -> np.ndarray:
    """grad(div u) with compact stencils on the diagonal and central products off it."""
    u = grid.check_vector(u)
    out = np.empty_like(u)
    for i in range(grid.dim):
        acc = d2(u[i], i, grid)
        for j in range(grid.dim):
            if j != i:
                acc = acc + d1(d1(u[j], j, grid), i, grid)
        out[i] = acc
    return out


def lame_apply(u: np.ndarray, alpha: float, beta: float, grid: Grid) -> np.ndarray:
    """L u = -alpha Δu - (alpha+beta) grad div u."""
    u = grid.check_vector(u)
    return -alpha * laplacian(u, grid) - (alpha + beta) * grad_div(u, grid)


def lame_diagonal(alpha: float, beta: float, grid: Grid) -> np.ndarray:
    """Diagonal of the interior Lamé stencil, per component."""
    inv2 = [1.0 / h**2 for h in grid.spacing]
    diag = np.empty((grid.dim, *grid.shape))
    for i in range(grid.dim):
        diag[i] = 2 * alpha * sum(inv2) + 2 * (alpha + beta) * inv2[i]
    return diag


def q_apply(u: np.ndarray, alpha: float, beta: float, grid: Grid) -> np.ndarray:
    """Q(u) = alpha (∇u + ∇uᵀ) + beta div(u) I, shape (dim, dim, *grid.shape)."""
    J = jacobian(u, grid)
    Q = alpha * (J + np.swapaxes(J, 0, 1))
    divu = np.trace(J, axis1=0, axis2=1)
    for i in range(grid.dim):
        Q[i, i] += beta * divu
    return Q


def vec_dot_tensor(w: np.ndarray, T: np.ndarray) -> np.ndarray:
    """(w · T)_j = sum_i w_i T_ij."""
    return np.einsum("i...,ij...->j...", w, T)


def advect_vector(v: np.ndarray, w: np.ndarray, grid: Grid) -> np.ndarray:
    """(v · ∇) w with central differences."""
    J = jacobian(w, grid)
    return np.einsum("j...,ij...->i...", v, J)


# ---------------------------------------------------------------- norms


@dataclass(frozen=True)
class NormSpec:
    """kind: "Lp" (|f|_p), "Dk" (|∇^k f|_p) or "Hs" (sqrt(sum_{k<=s} |∇^k f|_2^2)).

    ``weight`` multiplies the (derivative) field pointwise before the norm is
    taken, so |sqrt(h) ∇u|_2 is ``NormSpec("Dk", k=1, weight=np.sqrt(h))``.
    """

    kind: str = "Lp"
    p: float = 2.0
    k: int = 0
    s: int = 0
    weight: np.ndarray | None = None

    def validate(self) -> None:
        if self.kind not in ("Lp", "Dk", "Hs"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if not (self.p >= 1 or math.isinf(self.p)):
            raise ValueError(f"p must lie in [1, inf] (got {self.p})")
        if self.k < 0 or self.s < 0 or int(self.k) != self.k or int(self.s) != self.s:
            raise ValueError("derivative orders must be nonnegative integers")
        if self.weight is not None and np.any(np.asarray(self.weight) < 0):
            raise ValueError("weight must be nonnegative")


def Lp(p: float = 2.0, weight=None) -> NormSpec:
    return NormSpec("Lp", p=p, weight=weight)


def Dk(k: int, p: float = 2.0, weight=None) -> NormSpec:
    return NormSpec("Dk", p=p, k=k, weight=weight)


def Hs(s: int, weight=None) -> NormSpec:
    return NormSpec("Hs", s=s, weight=weight)


def derivative_stack(f: np.ndarray, k: int, grid: Grid) -> np.ndarray:
    """All k-th partial derivatives by repeated first differences, as (n, *grid.shape)."""
    out = np.asarray(f, dtype=float)
    for _ in range(k):
        out = grad(out, grid)
    return out.reshape(-1, *grid.shape)


def pointwise_magnitude(f: np.ndarray, grid: Grid) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape == grid.shape:
        return np.abs(f)
    return np.sqrt(np.sum(f.reshape(-1, *grid.shape) ** 2, axis=0))


def lp_of_magnitude(mag: np.ndarray, p: float, grid: Grid, mask=None) -> float:
    if mask is not None:
        mag = mag[mask]
    if math.isinf(p):
        return float(mag.max()) if mag.size else 0.0
    return float((np.sum(mag**p) * grid.cell_volume) ** (1.0 / p))


def norm(f: np.ndarray, spec: NormSpec, grid: Grid, mask: np.ndarray | None = None) -> float:
    """Discrete norm with midpoint quadrature; ``mask`` restricts the integration region."""
    spec.validate()
    w = None if spec.weight is None else np.asarray(spec.weight, dtype=float)

    def mag_of(k):
        m = pointwise_magnitude(derivative_stack(f, k, grid), grid)
        return m if w is None else m * w

    if spec.kind == "Lp":
        return lp_of_magnitude(mag_of(0), spec.p, grid, mask)
    if spec.kind == "Dk":
        return lp_of_magnitude(mag_of(spec.k), spec.p, grid, mask)
    return math.sqrt(sum(lp_of_magnitude(mag_of(k), 2.0, grid, mask) ** 2 for k in range(spec.s + 1)))


def inner(f: np.ndarray, g: np.ndarray, grid: Grid) -> float:
    return float(np.sum(f * g) * grid.cell_volume)


# ---------------------------------------------------------------- Lamé solve


def lame_solve(
    Z: np.ndarray,
    alpha: float,
    beta: float,
    grid: Grid,
    rtol: float = 1e-10,
    maxiter: int | None = None,
    x0: np.ndarray | None = None,
    return_info: bool = False,
):
    """Solve L u = Z by conjugate gradients.

    Periodic grids: Z must have zero mean per component and u is returned with
    zero mean. Far-field grids: u = 0 on the boundary layer and the equation
    holds at interior nodes.
    """
    Z = grid.check_vector(Z, "Z")
    if maxiter is None:
        maxiter = 10 * grid.size
    if grid.periodic:
        mean = Z.reshape(grid.dim, -1).mean(axis=1)
        scale = np.abs(Z).max() if Z.size else 0.0
        if np.any(np.abs(mean) > 1e-10 * max(scale, 1.0)):
            raise ValueError(f"periodic Lamé solve needs zero-mean data (component means {mean})")
        project = zero_mean
        op = lambda w: lame_apply(w, alpha, beta, grid)
        diag = lame_diagonal(alpha, beta, grid)
    else:
        interior = ~grid.boundary_mask

        def project(w):
            return w * interior

        op = lambda w: lame_apply(w * interior, alpha, beta, grid) * interior
        diag = np.where(interior, lame_diagonal(alpha, beta, grid), 1.0)
    u, info = pcg(op, Z, x0=x0, diag=diag, rtol=rtol, maxiter=maxiter, project=project)
    return (u, info) if return_info else u


def zero_mean(w: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, w.ndim))
    return w - w.mean(axis=axes, keepdims=True)


__all__ = [
    "KrylovInfo",
    "NormSpec",
    "Lp",
    "Dk",
    "Hs",
    "d1",
    "d2",
    "grad",
    "div",
    "laplacian",
    "jacobian",
    "curl",
    "curl_residual",
    "grad_div",
    "lame_apply",
    "lame_diagonal",
    "q_apply",
    "vec_dot_tensor",
    "advect_vector",
    "norm",
    "inner",
    "lame_solve",
    "zero_mean",
]
