"""Structured rectangular grids (1-D/2-D/3-D) with periodic or far-field boundaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .errors import ShapeError

PERIODIC = "periodic"
FARFIELD = "farfield"
BOUNDARIES = (PERIODIC, FARFIELD)


@dataclass(frozen=True, eq=False)
class Grid:
    """Cell-centred grid; node i of an axis sits at ``origin + (i + 1/2) * spacing``.

    Periodic boxes default to ``[0, L)`` per axis, far-field boxes are centred
    on the origin so that ``|x|`` is the distance to the box centre. A far-field
    grid may carry a frozen boundary ``profile`` (field name -> array) used as
    Dirichlet data at inflow nodes.
    """

    lengths: tuple[float, ...]
    shape: tuple[int, ...]
    boundary: str = PERIODIC
    origin: tuple[float, ...] | None = None
    profile: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "shape", shape)
        if len(lengths) != len(shape) or len(shape) not in (1, 2, 3):
            raise ShapeError(f"lengths {lengths} and shape {shape} must share a dimension in 1..3")
        if any(n < 4 for n in shape):
            raise ShapeError(f"every axis needs at least 4 cells (got {shape})")
        if any(L <= 0 for L in lengths):
            raise ShapeError(f"axis lengths must be positive (got {lengths})")
        if self.boundary not in BOUNDARIES:
            raise ShapeError(f"boundary must be one of {BOUNDARIES} (got {self.boundary!r})")
        if self.origin is None:
            origin = tuple(0.0 if self.boundary == PERIODIC else -L / 2 for L in lengths)
        else:
            origin = tuple(float(o) for o in np.atleast_1d(self.origin))
            if len(origin) != len(shape):
                raise ShapeError("origin must have one entry per axis")
        object.__setattr__(self, "origin", origin)
        frozen = {}
        for name, arr in dict(self.profile).items():
            arr = np.array(arr, dtype=float)
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "profile", frozen)

    @classmethod
    def uniform(cls, dim: int, n: int, length: float = 1.0, boundary: str = PERIODIC, **kw) -> "Grid":
        return cls((length,) * dim, (n,) * dim, boundary, **kw)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def dx(self) -> float:
        return min(self.spacing)

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis_nodes(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.origin[axis] + (np.arange(self.shape[axis]) + 0.5) * h

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[self.axis_nodes(i) for i in range(self.dim)], indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        """Distance of each node to the box centre."""
        centre = [o + L / 2 for o, L in zip(self.origin, self.lengths)]
        return np.sqrt(sum((x - c) ** 2 for x, c in zip(self.coords, centre)))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """True on the outermost node layer of every axis (all False when periodic)."""
        mask = np.zeros(self.shape, dtype=bool)
        if self.periodic:
            return mask
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def with_profile(self, **fields: np.ndarray) -> "Grid":
        merged = dict(self.profile)
        merged.update(fields)
        return Grid(self.lengths, self.shape, self.boundary, self.origin, merged)

    def same_layout(self, other: "Grid") -> bool:
        return (
            self.shape == other.shape
            and self.boundary == other.boundary
            and np.allclose(self.lengths, other.lengths, rtol=0, atol=0)
            and np.allclose(self.origin, other.origin, rtol=0, atol=0)
        )

    def check_scalar(self, f: np.ndarray, name: str = "field") -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ShapeError(f"{name} has shape {f.shape}, grid expects {self.shape}")
        return f

    def check_vector(self, u: np.ndarray, name: str = "vector field") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim, *self.shape):
            raise ShapeError(f"{name} has shape {u.shape}, grid expects {(self.dim, *self.shape)}")
        return u

    def integrate(self, f: np.ndarray) -> float:
        """Midpoint-rule quadrature over the box."""
        return float(np.sum(f) * self.cell_volume)

    def to_dict(self) -> dict:
        return {
            "lengths": list(self.lengths),
            "shape": list(self.shape),
            "boundary": self.boundary,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Grid":
        return cls(tuple(d["lengths"]), tuple(d["shape"]), d["boundary"], tuple(d["origin"]))

    def __repr__(self) -> str:
        return f"Grid(shape={self.shape}, lengths={self.lengths}, boundary={self.boundary!r})"
