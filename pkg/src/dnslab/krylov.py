"""Preconditioned conjugate gradients on grid-shaped arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import KrylovError


@dataclass
class KrylovInfo:
    iterations: int = 0
    residual: float = 0.0  # final |r|/|b|
    history: list[float] = field(default_factory=list)


def pcg(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray | None = None,
    diag: np.ndarray | None = None,
    rtol: float = 1e-10,
    maxiter: int | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, KrylovInfo]:
    """Solve A x = b for symmetric positive (semi)definite A given as a callable.

    ``diag`` enables Jacobi preconditioning. ``project`` maps onto the subspace on
    which A is definite (e.g. zero-mean fields); it is applied to b, to every
    residual and to the iterate. Convergence means |b - A x| <= rtol |b|.
    """
    proj = project or (lambda z: z)
    b = proj(np.asarray(b, dtype=float))
    bnorm = float(np.linalg.norm(b))
    if maxiter is None:
        maxiter = 10 * b.size
    info = KrylovInfo()
    if bnorm == 0.0:
        info.history.append(0.0)
        return np.zeros_like(b), info
    x = np.zeros_like(b) if x0 is None else proj(np.array(x0, dtype=float))
    r = proj(b - apply_A(x))
    minv = None if diag is None else 1.0 / diag
    z = r if minv is None else proj(minv * r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    res = float(np.linalg.norm(r)) / bnorm
    info.history.append(res)
    k = 0
    while True:
        while res > rtol:
            if k >= maxiter:
                raise KrylovError(
                    f"CG did not reach rtol={rtol:g} in {maxiter} iterations (residual {res:.3e})",
                    info.history,
                )
            Ap = apply_A(p)
            pAp = float(np.vdot(p, Ap))
            if not np.isfinite(pAp) or pAp <= 0:
                raise KrylovError(f"CG breakdown: p.Ap = {pAp!r}", info.history)
            step = rz / pAp
            x += step * p
            r = proj(r - step * Ap)
            k += 1
            res = float(np.linalg.norm(r)) / bnorm
            info.history.append(res)
            if not np.isfinite(res):
                raise KrylovError("CG produced a non-finite residual", info.history)
            z = r if minv is None else proj(minv * r)
            rz_new = float(np.vdot(r, z))
            p = z + (rz_new / rz) * p
            rz = rz_new
        # the recurrence residual drifts from b - A x; restart from the true one
        r = proj(b - apply_A(x))
        res = float(np.linalg.norm(r)) / bnorm
        if res <= rtol:
            break
        z = r if minv is None else proj(minv * r)
        p = z.copy()
        rz = float(np.vdot(r, z))
    info.iterations = k
    info.residual = res
    return proj(x), info
