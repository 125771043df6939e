"""Field-state value objects: primitive (rho, u) and reformulated variables."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import PositivityError
from .grid import Grid


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PrimitiveState:
    """Density and velocity at time ``t``. ``u`` has shape ``(dim, *grid.shape)``."""

    grid: Grid
    rho: np.ndarray
    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        rho = _frozen(self.grid.check_scalar(self.rho, "rho"))
        u = _frozen(self.grid.check_vector(self.u, "u"))
        if not np.all(rho > 0):
            raise PositivityError(f"rho must be strictly positive (min {rho.min():.3e})")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "u", u)


@dataclass(frozen=True, eq=False)
class ReformState:
    """phi, u and the auxiliary fields psi, h = phi^(2e), varphi = 1/h, f = psi*varphi."""

    grid: Grid
    phi: np.ndarray
    u: np.ndarray
    psi: np.ndarray
    h: np.ndarray
    varphi: np.ndarray
    f: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        g = self.grid
        for name in ("phi", "h", "varphi"):
            arr = _frozen(g.check_scalar(getattr(self, name), name))
            if not np.all(arr > 0):
                raise PositivityError(f"{name} must be strictly positive (min {arr.min():.3e})")
            object.__setattr__(self, name, arr)
        for name in ("u", "psi", "f"):
            object.__setattr__(self, name, _frozen(g.check_vector(getattr(self, name), name)))

    def evolve(self, **changes) -> "ReformState":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return ReformState(**kw)


VECTOR_FIELDS = ("u", "psi", "f")
SCALAR_FIELDS = ("phi", "h", "varphi")
